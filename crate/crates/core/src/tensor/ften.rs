//! `FTEN` tensor files: magic `FTEN`, a version byte, channels/height/width
//! as little-endian `u32`, then little-endian `f32` data in channel-major,
//! row-major order.

use std::io::{Read, Write};

use super::FeatureTensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FTEN";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 12;

pub fn to_bytes(t: &FeatureTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for dim in [t.channels(), t.height(), t.width()] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<FeatureTensor> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::corrupt("FTEN file shorter than its header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format("bad FTEN magic"));
    }
    if bytes[4] != VERSION {
        return Err(Error::format(format!("unsupported FTEN version {}", bytes[4])));
    }
    let dim = |i: usize| {
        let o = 5 + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize
    };
    let (c, h, w) = (dim(0), dim(1), dim(2));
    let n = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::corrupt("FTEN dims overflow"))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * n {
        return Err(Error::corrupt(format!(
            "FTEN body has {} bytes, expected {}",
            body.len(),
            4 * n
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    FeatureTensor::new(c, h, w, data)
}

pub fn write(t: &FeatureTensor, mut w: impl Write) -> Result<()> {
    w.write_all(&to_bytes(t))?;
    Ok(())
}

pub fn read(mut r: impl Read) -> Result<FeatureTensor> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = FeatureTensor::new(1, 1, 2, vec![1.0, -2.0]).unwrap();
        let b = to_bytes(&t);
        assert_eq!(&b[..5], b"FTEN\x01");
        assert_eq!(&b[5..9], &1u32.to_le_bytes());
        assert_eq!(&b[13..17], &2u32.to_le_bytes());
        assert_eq!(&b[17..21], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 25);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(from_bytes(b"FTE"), Err(Error::Corrupt(_))));
        let mut b = to_bytes(&FeatureTensor::zeros(1, 2, 2));
        b[0] = b'X';
        assert!(matches!(from_bytes(&b), Err(Error::Format(_))));
        let b = to_bytes(&FeatureTensor::zeros(1, 2, 2));
        assert!(matches!(from_bytes(&b[..b.len() - 1]), Err(Error::Corrupt(_))));
    }

    proptest! {
        #[test]
        fn round_trip(c in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u32>()) {
            let t = FeatureTensor::from_fn(c, h, w, |a, b, d| {
                ((seed as usize ^ (a * 31 + b * 7 + d)) % 1000) as f32 * 0.37 - 100.0
            });
            prop_assert_eq!(from_bytes(&to_bytes(&t)).unwrap(), t);
        }
    }
}
