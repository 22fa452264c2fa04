//! Carry-less binary range coder (Subbotin-style) with 32-bit state and
//! 12-bit adaptive probabilities.
//!
//! The decoder consumes exactly as many bytes as the encoder produced, so a
//! stream whose length disagrees with the decoded symbol count is corrupt.

use crate::error::{Error, Result};

const TOP: u32 = 1 << 24;
const BOT: u32 = 1 << 16;
pub(crate) const PROB_BITS: u32 = 12;
const PROB_ONE: u16 = 1 << PROB_BITS;
const ADAPT_SHIFT: u32 = 5;

/// Adaptive probability that the next bit is 0.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BitModel(u16);

impl Default for BitModel {
    fn default() -> Self {
        BitModel(PROB_ONE / 2)
    }
}

impl BitModel {
    #[inline]
    fn update(&mut self, bit: bool) {
        if bit {
            self.0 -= self.0 >> ADAPT_SHIFT;
        } else {
            self.0 += (PROB_ONE - self.0) >> ADAPT_SHIFT;
        }
    }
}

pub(crate) struct RangeEncoder {
    low: u32,
    range: u32,
    out: Vec<u8>,
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            out: Vec::new(),
        }
    }

    #[inline]
    fn encode_with(&mut self, bit: bool, p0: u16) {
        let r = (self.range >> PROB_BITS) * p0 as u32;
        if bit {
            self.low = self.low.wrapping_add(r);
            self.range -= r;
        } else {
            self.range = r;
        }
        self.normalize();
    }

    #[inline]
    pub fn encode(&mut self, bit: bool, model: &mut BitModel) {
        self.encode_with(bit, model.0);
        model.update(bit);
    }

    /// Equiprobable bits, MSB first.
    pub fn encode_direct(&mut self, value: u32, bits: u32) {
        for i in (0..bits).rev() {
            self.encode_with((value >> i) & 1 == 1, PROB_ONE / 2);
        }
    }

    fn normalize(&mut self) {
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            self.out.push((self.low >> 24) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..4 {
            self.out.push((self.low >> 24) as u8);
            self.low <<= 8;
        }
        self.out
    }
}

pub(crate) struct RangeDecoder<'a> {
    low: u32,
    range: u32,
    code: u32,
    data: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut d = Self {
            low: 0,
            range: u32::MAX,
            code: 0,
            data,
            pos: 0,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    #[inline]
    fn next_byte(&mut self) -> Result<u8> {
        let b = *self
            .data
            .get(self.pos)
            .ok_or_else(|| Error::corrupt("range-coded payload is truncated"))?;
        self.pos += 1;
        Ok(b)
    }

    #[inline]
    fn decode_with(&mut self, p0: u16) -> Result<bool> {
        let r = (self.range >> PROB_BITS) * p0 as u32;
        let bit = if self.code.wrapping_sub(self.low) < r {
            self.range = r;
            false
        } else {
            self.low = self.low.wrapping_add(r);
            self.range -= r;
            true
        };
        self.normalize()?;
        Ok(bit)
    }

    #[inline]
    pub fn decode(&mut self, model: &mut BitModel) -> Result<bool> {
        let bit = self.decode_with(model.0)?;
        model.update(bit);
        Ok(bit)
    }

    pub fn decode_direct(&mut self, bits: u32) -> Result<u32> {
        let mut v = 0;
        for _ in 0..bits {
            v = (v << 1) | self.decode_with(PROB_ONE / 2)? as u32;
        }
        Ok(v)
    }

    fn normalize(&mut self) -> Result<()> {
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.low <<= 8;
            self.range <<= 8;
        }
        Ok(())
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_skewed_bits_and_exact_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in [0.01, 0.2, 0.5, 0.93] {
            let bits: Vec<bool> = (0..20_000).map(|_| rng.gen_bool(p)).collect();
            let mut enc = RangeEncoder::new();
            let mut m = BitModel::default();
            for &b in &bits {
                enc.encode(b, &mut m);
            }
            enc.encode_direct(0xDEAD_BEEF, 32);
            let bytes = enc.finish();

            let mut dec = RangeDecoder::new(&bytes).unwrap();
            let mut m = BitModel::default();
            for &b in &bits {
                assert_eq!(dec.decode(&mut m).unwrap(), b);
            }
            assert_eq!(dec.decode_direct(32).unwrap(), 0xDEAD_BEEF);
            assert_eq!(dec.position(), bytes.len());
            if p < 0.05 {
                assert!(bytes.len() < 20_000 / 8 / 4);
            }
        }
    }

    #[test]
    fn truncated_input_errors() {
        let mut enc = RangeEncoder::new();
        enc.encode_direct(0x1234_5678, 32);
        let bytes = enc.finish();
        assert!(RangeDecoder::new(&bytes[..3]).is_err());
        let mut dec = RangeDecoder::new(&bytes[..bytes.len() - 1]).unwrap();
        assert!(dec.decode_direct(32).is_err());
    }
}
