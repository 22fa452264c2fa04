//! `BAFM` model file.
//!
//! Little-endian: magic `BAFM`, version u8, n_bits u8, activation kind u8
//! (0 leaky ReLU, 1 identity), reserved u8, activation slope f64, then u16
//! C, Q, P, hidden, the C selected channel indices as u16, and finally
//! every trainable parameter as f32 in [`BafModel::params`] order:
//! for each of the four layers, weights (`out x in x 3 x 3`), bias, and
//! PReLU slopes (layers 1-3).
//!
//! The frozen split layer is not stored; it comes from the network the
//! model was trained against.

use super::{BafLayer, BafModel};
use crate::error::{Error, Result};
use crate::tensor::{Activation, BnAffine, ConvLayer, Real};

pub const BAFM_MAGIC: &[u8; 4] = b"BAFM";
pub const BAFM_VERSION: u8 = 1;

pub fn write_bafm<T: Real>(m: &BafModel<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BAFM_MAGIC);
    out.push(BAFM_VERSION);
    out.push(m.n_bits());
    let (kind, slope) = match m.sigma() {
        Activation::LeakyRelu { slope } => (0u8, slope),
        Activation::Identity => (1, 0.0),
    };
    out.push(kind);
    out.push(0);
    out.extend_from_slice(&slope.to_le_bytes());
    for d in [m.channels(), m.split_inputs(), m.split_outputs(), m.hidden()] {
        out.extend_from_slice(&(d as u16).to_le_bytes());
    }
    for &o in m.order() {
        out.extend_from_slice(&(o as u16).to_le_bytes());
    }
    for p in m.params() {
        for v in p {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

/// Loads a model and attaches the frozen split layer it restores through.
pub fn read_bafm<T: Real>(bytes: &[u8], frozen_conv: ConvLayer<T>, frozen_bn: BnAffine<T>) -> Result<BafModel<T>> {
    let mut pos = 0;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::corrupt("model file is truncated"))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != BAFM_MAGIC {
        return Err(Error::format("not a BAFM model file"));
    }
    let head = take(4)?;
    if head[0] != BAFM_VERSION {
        return Err(Error::format(format!("unsupported BAFM version {}", head[0])));
    }
    let n_bits = head[1];
    let s = take(8)?;
    let slope = f64::from_le_bytes(s.try_into().expect("eight bytes"));
    let sigma = match head[2] {
        0 => Activation::LeakyRelu { slope },
        1 => Activation::Identity,
        k => return Err(Error::corrupt(format!("unknown activation kind {k}"))),
    };
    let mut u16s = |n: usize| -> Result<Vec<usize>> {
        let b = take(2 * n)?;
        Ok(b.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as usize).collect())
    };
    let dims = u16s(4)?;
    let (c, q, p, hidden) = (dims[0], dims[1], dims[2], dims[3]);
    let order = u16s(c)?;
    if frozen_conv.in_channels() != q || frozen_conv.out_channels() != p {
        return Err(Error::Compatibility(format!(
            "model restores a {q}->{p} split layer, network has {}->{}",
            frozen_conv.in_channels(),
            frozen_conv.out_channels()
        )));
    }
    let widths = [c, hidden, hidden, hidden, q];
    let mut floats = |n: usize| -> Result<Vec<T>> {
        let b = take(4 * n)?;
        Ok(b.chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect())
    };
    let mut layers = Vec::with_capacity(4);
    for i in 0..4 {
        let (cin, cout) = (widths[i], widths[i + 1]);
        let w = floats(cout * cin * 9)?;
        let b = floats(cout)?;
        let alpha = if i < 3 { Some(floats(cout)?) } else { None };
        layers.push(BafLayer {
            conv: ConvLayer::new(cout, cin, 3, 1, w, Some(b))?,
            alpha,
        });
    }
    if pos != bytes.len() {
        return Err(Error::corrupt("model file has trailing bytes"));
    }
    let layers: [BafLayer<T>; 4] = layers.try_into().map_err(|_| Error::corrupt("layer count"))?;
    BafModel::from_parts(order, n_bits, layers, frozen_conv, frozen_bn, sigma)
}
