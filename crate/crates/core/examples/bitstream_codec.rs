//! Serializes a quantized pack with both built-in codecs and shows where
//! the bits go.

use baf::codec::{decode, encode, CodecId};
use baf::quant::quantize_selected;
use baf::select::ChannelSelection;
use baf::tensor::Tensor;

fn main() -> baf::Result<()> {
    // Smooth channels, as split-layer features tend to be.
    let t = Tensor::<f32>::from_fn(16, 16, 16, |c, y, x| {
        ((x as f32 * 0.2 + c as f32).sin() + (y as f32 * 0.15).cos()) * (1.0 + c as f32 * 0.1)
    });
    let sel = ChannelSelection::new((0..8).collect(), 16)?;
    let pack = quantize_selected(&t, &sel, 8)?;

    for codec in CodecId::BUILT_IN {
        let s = encode(&pack, codec)?;
        let b = s.breakdown();
        println!(
            "{codec:>9}: {:6} bits = header {} + side info {} + payload {} + padding {}",
            s.total_bits(),
            b.header_bits,
            b.side_info_bits,
            b.payload_bits,
            b.padding_bits
        );
        assert_eq!(decode(s.bytes())?, pack);
    }

    let mut bad = encode(&pack, CodecId::MedRange)?.into_bytes();
    bad[40] ^= 0x10;
    match decode(&bad) {
        Err(e) => println!("flipped one bit: {e}"),
        Ok(_) => unreachable!("checksum catches single-bit damage"),
    }
    Ok(())
}
