use baf::codec::{decode, encode, Bitstream, CodecId};
use baf::quant::{QuantizedPack, SideInfo};
use half::f16;
use proptest::prelude::*;

fn packs() -> impl Strategy<Value = QuantizedPack> {
    (0u32..4, 1usize..7, 1usize..7, 2u8..=8, 0usize..3).prop_flat_map(|(e, h, w, n, extra)| {
        let c = 1usize << e;
        let total = c + extra;
        let len = c * h * w;
        (
            Just((c, h, w, n, total)),
            Just((0..total).collect::<Vec<_>>()).prop_shuffle(),
            prop::collection::vec(0u8..=((1u16 << n) - 1) as u8, len),
            prop::collection::vec((-500.0f32..500.0, 0.0f32..300.0), c),
        )
            .prop_map(|((c, h, w, n, total), order, codes, ranges)| {
                let side = ranges
                    .into_iter()
                    .map(|(m, d)| SideInfo::new(f16::from_f32(m), f16::from_f32(m + d).max(f16::from_f32(m))).unwrap())
                    .collect();
                QuantizedPack::new(n, total, h, w, order[..c].to_vec(), codes, side).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn streams_round_trip(pack in packs()) {
        for codec in CodecId::BUILT_IN {
            let s = encode(&pack, codec).unwrap();
            prop_assert_eq!(s.breakdown().total(), 8 * s.bytes().len() as u64);
            prop_assert_eq!(s.breakdown().side_info_bits, 32 * pack.channels() as u64);
            prop_assert_eq!(&decode(s.bytes()).unwrap(), &pack);
            let again = Bitstream::from_bytes(s.bytes().to_vec()).unwrap();
            prop_assert_eq!(again.breakdown(), s.breakdown());
        }
    }

    #[test]
    fn damage_is_always_reported(pack in packs(), pos in any::<prop::sample::Index>(), bit in 0u8..8, cut in any::<prop::sample::Index>()) {
        for codec in CodecId::BUILT_IN {
            let bytes = encode(&pack, codec).unwrap().into_bytes();
            let mut flipped = bytes.clone();
            flipped[pos.index(bytes.len())] ^= 1 << bit;
            prop_assert!(decode(&flipped).is_err());
            prop_assert!(decode(&bytes[..cut.index(bytes.len())]).is_err());
            let mut longer = bytes.clone();
            longer.push(0);
            prop_assert!(decode(&longer).is_err());
        }
    }
}
