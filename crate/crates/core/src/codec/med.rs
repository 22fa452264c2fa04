//! Median-edge-detector prediction with range-coded residuals.
//!
//! Each pixel's residual `(code - pred) mod 2^n` is folded to a zigzag index
//! (small positive and negative errors map to small values) and coded MSB
//! first. The context of each bit is its position in the binary tree of
//! already-coded higher bits, so every bit plane adapts separately.

use super::range::{BitModel, RangeDecoder, RangeEncoder};
use crate::error::{Error, Result};

/// Marker coded after the last pixel; a mismatch on decode means corruption.
const END_MARKER: u32 = 0xBAFC_0E0D;

/// Median edge detector over the left, upper and upper-left neighbours.
pub fn med_predict(left: i32, up: i32, up_left: i32) -> i32 {
    let (lo, hi) = if left < up { (left, up) } else { (up, left) };
    if up_left >= hi {
        lo
    } else if up_left <= lo {
        hi
    } else {
        left + up - up_left
    }
}

#[inline]
fn neighbours(px: &[u8], width: usize, x: usize, y: usize) -> (i32, i32, i32) {
    let at = |xx: usize, yy: usize| px[yy * width + xx] as i32;
    let left = if x > 0 { at(x - 1, y) } else { 0 };
    let up = if y > 0 { at(x, y - 1) } else { 0 };
    let up_left = if x > 0 && y > 0 { at(x - 1, y - 1) } else { 0 };
    (left, up, up_left)
}

#[inline]
fn fold(residual: u32, n: u8) -> u32 {
    let half = 1u32 << (n - 1);
    if residual < half {
        2 * residual
    } else {
        2 * ((1u32 << n) - residual) - 1
    }
}

#[inline]
fn unfold(z: u32, n: u8) -> u32 {
    if z % 2 == 0 {
        z / 2
    } else {
        (1u32 << n) - (z + 1) / 2
    }
}

pub(crate) fn encode_image(pixels: &[u8], width: usize, height: usize, n: u8) -> Vec<u8> {
    debug_assert_eq!(pixels.len(), width * height);
    let modulus = 1i32 << n;
    let mut models = vec![BitModel::default(); 1 << n];
    let mut enc = RangeEncoder::new();
    for y in 0..height {
        for x in 0..width {
            let (l, u, ul) = neighbours(pixels, width, x, y);
            let pred = med_predict(l, u, ul);
            let residual = (pixels[y * width + x] as i32 - pred).rem_euclid(modulus) as u32;
            let z = fold(residual, n);
            let mut node = 1usize;
            for i in (0..n).rev() {
                let bit = (z >> i) & 1 == 1;
                enc.encode(bit, &mut models[node]);
                node = 2 * node + bit as usize;
            }
        }
    }
    enc.encode_direct(END_MARKER, 32);
    enc.finish()
}

pub(crate) fn decode_image(payload: &[u8], width: usize, height: usize, n: u8) -> Result<Vec<u8>> {
    let modulus = 1i32 << n;
    let mut models = vec![BitModel::default(); 1 << n];
    let mut dec = RangeDecoder::new(payload)?;
    let mut pixels = vec![0u8; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut node = 1usize;
            for _ in 0..n {
                let bit = dec.decode(&mut models[node])?;
                node = 2 * node + bit as usize;
            }
            let z = (node - (1 << n)) as u32;
            let residual = unfold(z, n) as i32;
            let (l, u, ul) = neighbours(&pixels, width, x, y);
            let pred = med_predict(l, u, ul);
            pixels[y * width + x] = (pred + residual).rem_euclid(modulus) as u8;
        }
    }
    if dec.decode_direct(32)? != END_MARKER {
        return Err(Error::corrupt("range coder end marker mismatch"));
    }
    if dec.position() != payload.len() {
        return Err(Error::corrupt(format!(
            "range-coded payload has {} trailing bytes",
            payload.len() - dec.position()
        )));
    }
    Ok(pixels)
}
