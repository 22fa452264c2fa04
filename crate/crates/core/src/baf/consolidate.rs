//! Clamping restored values into the quantizer bin of their received code.

use crate::error::{Error, Result};
use crate::quant::{max_code, QuantizedPack, SideInfo};
use crate::tensor::{Real, Tensor};

fn bin(k: u32, side: SideInfo, n: u8) -> Result<(f64, f64)> {
    if k > max_code(n) {
        return Err(Error::corrupt(format!("code {k} does not fit in {n} bits")));
    }
    let step = side.step(n);
    let lo = side.lo();
    Ok((lo + (k as f64 - 0.5) * step, lo + (k as f64 + 0.5) * step))
}

/// Keeps `z` if it lies in the closed bin of code `k`, otherwise returns the
/// nearest bin edge. A degenerate range returns its single value.
pub fn consolidate_value(z: f64, k: u32, side: SideInfo, n: u8) -> Result<f64> {
    let (lo, hi) = bin(k, side, n)?;
    if side.is_degenerate() {
        return Ok(side.lo());
    }
    Ok(z.clamp(lo, hi))
}

/// In-place [`consolidate_value`] over one channel. Edges that are not
/// representable in the working precision are rounded into the bin.
pub fn consolidate_channel<T: Real>(z: &mut [T], codes: &[u8], side: SideInfo, n: u8) -> Result<()> {
    if z.len() != codes.len() {
        return Err(Error::shape("consolidate: channel and code lengths differ"));
    }
    for (v, &k) in z.iter_mut().zip(codes) {
        let (lo, hi) = bin(k as u32, side, n)?;
        let c = consolidate_value(v.as_f64(), k as u32, side, n)?;
        let mut out = T::of(c);
        if out.as_f64() < lo && !side.is_degenerate() {
            out = out.next_up();
        } else if out.as_f64() > hi && !side.is_degenerate() {
            out = out.next_down();
        }
        *v = out;
    }
    Ok(())
}

/// Consolidates the transmitted channels of a restored `P`-channel tensor
/// against the codes they were sent with.
pub fn consolidate<T: Real>(z: &mut Tensor<T>, pack: &QuantizedPack) -> Result<()> {
    if z.channels() != pack.total_channels() || z.plane_len() != pack.channel_h() * pack.channel_w() {
        return Err(Error::shape("consolidate: restored tensor does not match the stream"));
    }
    for (i, &c) in pack.order().iter().enumerate() {
        consolidate_channel(z.channel_mut(c), pack.channel_codes(i), pack.side_info()[i], pack.n_bits())?;
    }
    Ok(())
}
