//! Per-channel n-bit uniform scalar quantization with binary16 range side
//! information, plus power-of-two tiling of the quantized channels.

mod tile;

pub use tile::{grid_dims, tile, untile, TiledImage};

use half::f16;

use crate::error::{Error, Result};
use crate::select::ChannelSelection;
use crate::tensor::FeatureTensor;

pub const MIN_BITS: u8 = 2;
pub const MAX_BITS: u8 = 8;

pub(crate) fn check_bits(n: u8) -> Result<()> {
    if (MIN_BITS..=MAX_BITS).contains(&n) {
        Ok(())
    } else {
        Err(Error::config(format!(
            "quantizer bit depth {n} outside [{MIN_BITS}, {MAX_BITS}]"
        )))
    }
}

/// Largest code at bit depth `n`, i.e. `2^n - 1`.
pub fn max_code(n: u8) -> u32 {
    (1u32 << n) - 1
}

/// A channel's quantizer range, exactly as transmitted. Equality is on
/// the binary16 bit patterns.
#[derive(Clone, Copy, Debug)]
pub struct SideInfo {
    pub min: f16,
    pub max: f16,
}

impl PartialEq for SideInfo {
    fn eq(&self, other: &Self) -> bool {
        self.min.to_bits() == other.min.to_bits() && self.max.to_bits() == other.max.to_bits()
    }
}

impl Eq for SideInfo {}

impl SideInfo {
    pub fn new(min: f16, max: f16) -> Result<Self> {
        if !min.is_finite() || !max.is_finite() || min > max {
            return Err(Error::corrupt(format!(
                "side info range [{min}, {max}] is not a finite ordered pair"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn lo(&self) -> f64 {
        f64::from(self.min)
    }

    pub fn hi(&self) -> f64 {
        f64::from(self.max)
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo() == self.hi()
    }

    /// Quantizer step `(M' - m') / (2^n - 1)`.
    pub fn step(&self, n: u8) -> f64 {
        (self.hi() - self.lo()) / max_code(n) as f64
    }
}

fn f16_next_down(h: f16) -> f16 {
    let bits = h.to_bits();
    if h.is_nan() || bits == 0xFC00 {
        return h;
    }
    if bits & 0x7FFF == 0 {
        // +0 or -0: largest negative subnormal
        return f16::from_bits(0x8001);
    }
    if bits & 0x8000 == 0 {
        f16::from_bits(bits - 1)
    } else {
        f16::from_bits(bits + 1)
    }
}

fn f16_next_up(h: f16) -> f16 {
    let bits = h.to_bits();
    if h.is_nan() || bits == 0x7C00 {
        return h;
    }
    if bits & 0x7FFF == 0 {
        return f16::from_bits(0x0001);
    }
    if bits & 0x8000 == 0 {
        f16::from_bits(bits + 1)
    } else {
        f16::from_bits(bits - 1)
    }
}

/// Rounds `m` down and `big_m` up to binary16 so `[m, M]` is contained in
/// the transmitted range.
pub fn round_f16_directed(m: f32, big_m: f32) -> Result<SideInfo> {
    if !m.is_finite() || !big_m.is_finite() {
        return Err(Error::Input("quantizer range is not finite".into()));
    }
    if m > big_m {
        return Err(Error::Input(format!("quantizer range min {m} exceeds max {big_m}")));
    }
    let mut lo = f16::from_f32(m);
    if lo.to_f32() > m {
        lo = f16_next_down(lo);
    }
    let mut hi = f16::from_f32(big_m);
    if hi.to_f32() < big_m {
        hi = f16_next_up(hi);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Range(format!("[{m}, {big_m}] does not fit in binary16")));
    }
    Ok(SideInfo { min: lo, max: hi })
}

/// Quantizes one channel: `round((z - m') / (M' - m') * (2^n - 1))`,
/// rounding half away from zero. A constant channel codes to all zeros.
pub fn quantize_channel(z: &[f32], n: u8) -> Result<(Vec<u8>, SideInfo)> {
    check_bits(n)?;
    if z.is_empty() {
        return Err(Error::Input("cannot quantize an empty channel".into()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("channel contains NaN or infinity".into()));
    }
    let (mn, mx) = z
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let side = round_f16_directed(mn, mx)?;
    if side.is_degenerate() {
        return Ok((vec![0; z.len()], side));
    }
    let (lo, hi) = (side.lo(), side.hi());
    let levels = max_code(n) as f64;
    let codes = z
        .iter()
        .map(|&v| (((v as f64 - lo) / (hi - lo)) * levels).round().clamp(0.0, levels) as u8)
        .collect();
    Ok((codes, side))
}

/// `code / (2^n - 1) * (M' - m') + m'`.
pub fn dequantize_channel(codes: &[u8], side: SideInfo, n: u8) -> Result<Vec<f32>> {
    check_bits(n)?;
    let top = max_code(n);
    if let Some(bad) = codes.iter().find(|&&c| c as u32 > top) {
        return Err(Error::corrupt(format!("code {bad} does not fit in {n} bits")));
    }
    let (lo, hi) = (side.lo(), side.hi());
    if side.is_degenerate() {
        return Ok(vec![lo as f32; codes.len()]);
    }
    let levels = top as f64;
    Ok(codes
        .iter()
        .map(|&c| (c as f64 / levels * (hi - lo) + lo) as f32)
        .collect())
}

/// Quantized channels ready for tiling and entropy coding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedPack {
    n_bits: u8,
    total_channels: usize,
    channel_h: usize,
    channel_w: usize,
    order: Vec<usize>,
    /// `C x H x W`, in selection order.
    codes: Vec<u8>,
    side_info: Vec<SideInfo>,
}

impl QuantizedPack {
    pub fn new(
        n_bits: u8,
        total_channels: usize,
        channel_h: usize,
        channel_w: usize,
        order: Vec<usize>,
        codes: Vec<u8>,
        side_info: Vec<SideInfo>,
    ) -> Result<Self> {
        check_bits(n_bits)?;
        let c = order.len();
        if c == 0 || channel_h == 0 || channel_w == 0 {
            return Err(Error::shape("quantized pack must have channels and pixels"));
        }
        if codes.len() != c * channel_h * channel_w || side_info.len() != c {
            return Err(Error::shape("quantized pack code or side-info count mismatch"));
        }
        let mut seen = vec![false; total_channels];
        for &o in &order {
            if o >= total_channels || std::mem::replace(&mut seen[o], true) {
                return Err(Error::corrupt(format!("channel index {o} invalid or repeated")));
            }
        }
        let top = max_code(n_bits);
        if codes.iter().any(|&v| v as u32 > top) {
            return Err(Error::corrupt(format!("code does not fit in {n_bits} bits")));
        }
        for s in &side_info {
            SideInfo::new(s.min, s.max)?;
        }
        Ok(Self {
            n_bits,
            total_channels,
            channel_h,
            channel_w,
            order,
            codes,
            side_info,
        })
    }

    pub fn n_bits(&self) -> u8 {
        self.n_bits
    }

    /// C, the number of transmitted channels.
    pub fn channels(&self) -> usize {
        self.order.len()
    }

    /// P, the channel count of the full tensor the selection indexes into.
    pub fn total_channels(&self) -> usize {
        self.total_channels
    }

    pub fn channel_h(&self) -> usize {
        self.channel_h
    }

    pub fn channel_w(&self) -> usize {
        self.channel_w
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn side_info(&self) -> &[SideInfo] {
        &self.side_info
    }

    pub fn channel_codes(&self, i: usize) -> &[u8] {
        let n = self.channel_h * self.channel_w;
        &self.codes[i * n..(i + 1) * n]
    }

    /// Inverse quantization of every transmitted channel, in order.
    pub fn dequantize(&self) -> Result<FeatureTensor> {
        let mut data = Vec::with_capacity(self.codes.len());
        for i in 0..self.channels() {
            data.extend(dequantize_channel(self.channel_codes(i), self.side_info[i], self.n_bits)?);
        }
        FeatureTensor::new(self.channels(), self.channel_h, self.channel_w, data)
    }
}

/// Quantizes the selected channels of a batch-norm output tensor.
pub fn quantize_selected(
    z: &FeatureTensor,
    selection: &ChannelSelection,
    n: u8,
) -> Result<QuantizedPack> {
    if selection.total_channels() != z.channels() {
        return Err(Error::shape(format!(
            "selection indexes {} channels, tensor has {}",
            selection.total_channels(),
            z.channels()
        )));
    }
    let mut codes = Vec::with_capacity(selection.len() * z.plane_len());
    let mut side_info = Vec::with_capacity(selection.len());
    for &c in selection.order() {
        let (cc, s) = quantize_channel(z.channel(c), n)?;
        codes.extend(cc);
        side_info.push(s);
    }
    QuantizedPack::new(
        n,
        z.channels(),
        z.height(),
        z.width(),
        selection.order().to_vec(),
        codes,
        side_info,
    )
}

/// Bits spent on side information: two binary16 values per channel.
pub fn side_info_bits(pack: &QuantizedPack) -> u64 {
    32 * pack.channels() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn directed_rounding_examples() {
        let s = round_f16_directed(0.0, 1.0).unwrap();
        assert_eq!((s.lo(), s.hi()), (0.0, 1.0));

        // binary16 neighbours of 0.1: 0x2E66 = 0.0999755859375 and
        // 0x2E67 = 0.10003662109375 (10-bit mantissa, exponent -4).
        let s = round_f16_directed(0.1, 0.1).unwrap();
        assert_eq!(s.min.to_bits(), 0x2E66);
        assert_eq!(s.max.to_bits(), 0x2E67);
        assert_eq!(s.lo(), 0.0999755859375);
        assert_eq!(s.hi(), 0.10003662109375);

        assert!(matches!(round_f16_directed(0.0, 70000.0), Err(Error::Range(_))));
        assert!(matches!(round_f16_directed(-65504.5, 0.0), Err(Error::Range(_))));
        assert!(round_f16_directed(-65504.0, 65504.0).is_ok());
        assert!(matches!(round_f16_directed(1.0, 0.0), Err(Error::Input(_))));
    }

    #[test]
    fn next_up_down_cross_zero() {
        assert_eq!(f16_next_down(f16::from_f32(0.0)).to_bits(), 0x8001);
        assert_eq!(f16_next_up(f16::from_f32(-0.0)).to_bits(), 0x0001);
        assert_eq!(f16_next_up(f16::from_bits(0x8001)).to_bits(), 0x8000);
        assert!(f16_next_down(f16::from_f32(-1.0)) < f16::from_f32(-1.0));
    }

    #[test]
    fn quantize_endpoints_and_degenerate() {
        let z = [0.0f32, 0.25, 0.5, 1.0];
        let (codes, s) = quantize_channel(&z, 8).unwrap();
        assert_eq!((codes[0], codes[3]), (0, 255));
        assert_eq!((s.lo(), s.hi()), (0.0, 1.0));

        let (codes, s) = quantize_channel(&[2.5f32; 6], 4).unwrap();
        assert!(codes.iter().all(|&c| c == 0));
        assert!(s.is_degenerate());
        let back = dequantize_channel(&codes, s, 4).unwrap();
        assert!(back.iter().all(|&v| v == 2.5));

        assert!(matches!(quantize_channel(&[f32::NAN, 1.0], 4), Err(Error::Input(_))));
        assert!(matches!(quantize_channel(&[1.0], 9), Err(Error::Config(_))));
    }

    #[test]
    fn quantize_direct_evaluation() {
        // m' = 0, M' = 3, n = 2: z = 1 -> round(1/3 * 3) = 1.
        let (codes, _) = quantize_channel(&[0.0f32, 1.0, 3.0], 2).unwrap();
        assert_eq!(codes, vec![0, 1, 3]);
        // Ties go away from zero: 0.5 -> 1 at step 1.
        let (codes, _) = quantize_channel(&[0.0f32, 0.5, 1.5, 3.0], 2).unwrap();
        assert_eq!(codes, vec![0, 1, 2, 3]);
    }

    #[test]
    fn dequantize_endpoints_and_corruption() {
        let s = SideInfo::new(f16::from_f32(-1.0), f16::from_f32(2.0)).unwrap();
        let v = dequantize_channel(&[0, 7], s, 3).unwrap();
        assert_eq!(v, vec![-1.0, 2.0]);
        assert!(matches!(dequantize_channel(&[8], s, 3), Err(Error::Corrupt(_))));
    }

    #[test]
    fn side_info_bit_count() {
        for (c, bits) in [(1usize, 32u64), (64, 2048), (128, 4096)] {
            let s = SideInfo::new(f16::ZERO, f16::ONE).unwrap();
            let pack =
                QuantizedPack::new(8, c, 1, 1, (0..c).collect(), vec![0; c], vec![s; c]).unwrap();
            assert_eq!(side_info_bits(&pack), bits);
        }
    }

    proptest! {
        #[test]
        fn directed_rounding_contains_range(a in -6.0e4f32..6.0e4, b in -6.0e4f32..6.0e4) {
            let (m, big_m) = if a <= b { (a, b) } else { (b, a) };
            let s = round_f16_directed(m, big_m).unwrap();
            prop_assert!(s.lo() <= m as f64);
            prop_assert!(s.hi() >= big_m as f64);
        }

        #[test]
        fn quantizer_is_monotone_and_bounded(
            z in proptest::collection::vec(-50.0f32..50.0, 2..64),
            n in 2u8..=8,
        ) {
            let (codes, side) = quantize_channel(&z, n).unwrap();
            prop_assert!(codes.iter().all(|&c| (c as u32) <= max_code(n)));
            for i in 0..z.len() {
                for j in 0..z.len() {
                    if z[i] <= z[j] {
                        prop_assert!(codes[i] <= codes[j]);
                    }
                }
            }
            let back = dequantize_channel(&codes, side, n).unwrap();
            let bound = side.step(n) / 2.0 + 1e-5;
            for (a, b) in back.iter().zip(&z) {
                prop_assert!(((*a as f64) - (*b as f64)).abs() <= bound);
            }
        }
    }
}
