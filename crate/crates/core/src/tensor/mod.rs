//! Dense `C x H x W` tensors and the frozen layer primitives a split layer
//! is made of: convolution, folded batch-norm affine, activations and the
//! stride-2 phase decomposition.

mod conv;
pub mod ften;
mod net;
mod real;

pub use conv::{conv2d, conv2d_backward, ConvGrads, ConvLayer};
pub use net::FrontModel;
pub use real::Real;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel-major, then row-major dense tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// The working-precision tensor type.
pub type FeatureTensor = Tensor<f32>;

impl<T: Real> Tensor<T> {
    /// Builds a tensor, checking the length and that every value is finite.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("tensor data contains NaN or infinity".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    /// Construction without the finiteness scan, for internal hot paths.
    pub(crate) fn from_raw(channels: usize, height: usize, width: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(op))
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_raw(
            self.channels,
            self.height,
            self.width,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Gathers the listed channels, in the listed order.
    pub fn select_channels(&self, order: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(order.len() * self.plane_len());
        for &c in order {
            if c >= self.channels {
                return Err(Error::shape(format!(
                    "channel index {c} out of range for {} channels",
                    self.channels
                )));
            }
            data.extend_from_slice(self.channel(c));
        }
        Ok(Self::from_raw(order.len(), self.height, self.width, data))
    }

    /// Stacks single-plane slices into a tensor.
    pub fn stack(height: usize, width: usize, planes: &[&[T]]) -> Result<Self> {
        let mut data = Vec::with_capacity(planes.len() * height * width);
        for p in planes {
            if p.len() != height * width {
                return Err(Error::shape("plane size mismatch in stack"));
            }
            data.extend_from_slice(p);
        }
        Ok(Self::from_raw(planes.len(), height, width, data))
    }

    pub fn mean_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::shape("mean_abs_diff on tensors of different shapes"));
        }
        if self.data.is_empty() {
            return Ok(0.0);
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .sum();
        Ok(sum / self.data.len() as f64)
    }
}

/// Batch normalization folded into one invertible affine per channel:
/// `z = scale * x + bias`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnAffine<T = f32> {
    scale: Vec<T>,
    bias: Vec<T>,
}

impl<T: Real> BnAffine<T> {
    pub fn new(scale: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if scale.len() != bias.len() {
            return Err(Error::shape("scale and bias lengths differ"));
        }
        if let Some(channel) = scale.iter().position(|a| *a == T::zero()) {
            return Err(Error::NotInvertible { channel });
        }
        if scale.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite batch-norm parameter".into()));
        }
        Ok(Self { scale, bias })
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            scale: vec![T::one(); channels],
            bias: vec![T::zero(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn scale(&self) -> &[T] {
        &self.scale
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [T], &mut [T]) {
        (&mut self.scale, &mut self.bias)
    }

    /// The affine of a subset of channels, in the given order.
    pub fn restrict(&self, order: &[usize]) -> Result<Self> {
        if let Some(&bad) = order.iter().find(|&&c| c >= self.channels()) {
            return Err(Error::shape(format!("channel {bad} out of range")));
        }
        Ok(Self {
            scale: order.iter().map(|&c| self.scale[c]).collect(),
            bias: order.iter().map(|&c| self.bias[c]).collect(),
        })
    }

    pub fn cast<U: Real>(&self) -> BnAffine<U> {
        BnAffine {
            scale: self.scale.iter().map(|v| U::of(v.as_f64())).collect(),
            bias: self.bias.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

pub fn bn_forward<T: Real>(x: &Tensor<T>, bn: &BnAffine<T>) -> Result<Tensor<T>> {
    if x.channels() != bn.channels() {
        return Err(Error::shape(format!(
            "bn_forward: tensor has {} channels, affine has {}",
            x.channels(),
            bn.channels()
        )));
    }
    let mut out = x.clone();
    for c in 0..out.channels() {
        let (a, b) = (bn.scale[c], bn.bias[c]);
        out.channel_mut(c).iter_mut().for_each(|v| *v = a * *v + b);
    }
    out.ensure_finite("bn_forward")
}

pub fn bn_inverse<T: Real>(z: &Tensor<T>, bn: &BnAffine<T>) -> Result<Tensor<T>> {
    if z.channels() != bn.channels() {
        return Err(Error::shape(format!(
            "bn_inverse: tensor has {} channels, affine has {}",
            z.channels(),
            bn.channels()
        )));
    }
    if let Some(channel) = bn.scale.iter().position(|a| *a == T::zero()) {
        return Err(Error::NotInvertible { channel });
    }
    let mut out = z.clone();
    for c in 0..out.channels() {
        let (a, b) = (bn.scale[c], bn.bias[c]);
        out.channel_mut(c)
            .iter_mut()
            .for_each(|v| *v = (*v - b) / a);
    }
    out.ensure_finite("bn_inverse")
}

/// Pointwise nonlinearity applied after batch norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Identity,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu { slope: 0.1 }
    }
}

impl Activation {
    #[inline]
    pub fn apply_scalar<T: Real>(self, v: T) -> T {
        match self {
            Activation::LeakyRelu { slope } => {
                if v >= T::zero() {
                    v
                } else {
                    T::of(slope) * v
                }
            }
            Activation::Identity => v,
        }
    }

    /// Derivative at `v`; the kink at zero takes the right-hand slope.
    #[inline]
    pub fn derivative<T: Real>(self, v: T) -> T {
        match self {
            Activation::LeakyRelu { slope } => {
                if v >= T::zero() {
                    T::one()
                } else {
                    T::of(slope)
                }
            }
            Activation::Identity => T::one(),
        }
    }
}

pub fn activation<T: Real>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    x.map(|v| kind.apply_scalar(v))
}

/// Splits a tensor into its four stride-2 phases. Phase `s` holds rows
/// `≡ s / 2` and columns `≡ s % 2` (mod 2).
pub fn downsample_phases<T: Real>(x: &Tensor<T>) -> Result<[Tensor<T>; 4]> {
    let (c, h, w) = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "phase decomposition needs even dims, got {h}x{w}"
        )));
    }
    let phase = |s: usize| {
        let (dy, dx) = (s / 2, s % 2);
        Tensor::from_fn(c, h / 2, w / 2, |ch, y, xx| x.get(ch, 2 * y + dy, 2 * xx + dx))
    };
    Ok([phase(0), phase(1), phase(2), phase(3)])
}

/// Inverse of [`downsample_phases`].
pub fn interleave_phases<T: Real>(phases: &[Tensor<T>; 4]) -> Result<Tensor<T>> {
    let shape = phases[0].shape();
    if phases.iter().any(|p| p.shape() != shape) {
        return Err(Error::shape("phases have differing shapes"));
    }
    let (c, h, w) = shape;
    Ok(Tensor::from_fn(c, 2 * h, 2 * w, |ch, y, x| {
        phases[(y % 2) * 2 + x % 2].get(ch, y / 2, x / 2)
    }))
}

/// Nearest-neighbour upsampling by two in both directions.
pub fn upsample_nn2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = x.shape();
    Tensor::from_fn(c, 2 * h, 2 * w, |ch, y, xx| x.get(ch, y / 2, xx / 2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(c: usize, h: usize, w: usize, v: Vec<f32>) -> FeatureTensor {
        Tensor::new(c, h, w, v).unwrap()
    }

    #[test]
    fn new_rejects_bad_length_and_nan() {
        assert!(matches!(
            FeatureTensor::new(1, 2, 2, vec![0.0; 3]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            FeatureTensor::new(1, 1, 1, vec![f32::NAN]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn bn_identity_and_affine() {
        let x = t(1, 1, 2, vec![3.0, -1.5]);
        let id = BnAffine::identity(1);
        assert_eq!(bn_forward(&x, &id).unwrap(), x);
        assert_eq!(bn_inverse(&x, &id).unwrap(), x);

        let bn = BnAffine::new(vec![2.0f32], vec![1.0]).unwrap();
        let z = bn_forward(&t(1, 1, 1, vec![3.0]), &bn).unwrap();
        assert_eq!(z.data(), &[7.0]);
        let back = bn_inverse(&t(1, 1, 1, vec![7.0]), &bn).unwrap();
        assert_eq!(back.data(), &[3.0]);
    }

    #[test]
    fn bn_rejects_zero_scale_and_channel_mismatch() {
        assert!(matches!(
            BnAffine::new(vec![1.0f32, 0.0], vec![0.0, 0.0]),
            Err(Error::NotInvertible { channel: 1 })
        ));
        let bn = BnAffine::<f32>::identity(2);
        assert!(matches!(
            bn_forward(&FeatureTensor::zeros(3, 1, 1), &bn),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            bn_inverse(&FeatureTensor::zeros(1, 1, 1), &bn),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn leaky_relu_examples() {
        let act = Activation::LeakyRelu { slope: 0.1 };
        assert_eq!(act.apply_scalar(5.0f32), 5.0);
        assert!((act.apply_scalar(-10.0f32) + 1.0).abs() < 1e-6);
        let x = t(1, 1, 3, vec![-2.0, 0.0, 4.0]);
        assert_eq!(activation(&x, Activation::Identity), x);
    }

    #[test]
    fn phases_of_smallest_input() {
        let x = t(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let ph = downsample_phases(&x).unwrap();
        let vals: Vec<f32> = ph.iter().map(|p| p.data()[0]).collect();
        assert_eq!(vals, vec![1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(
            downsample_phases(&FeatureTensor::zeros(1, 3, 2)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn upsample_replicates() {
        let x = t(1, 1, 1, vec![2.5]);
        let u = upsample_nn2(&x);
        assert_eq!(u.shape(), (1, 2, 2));
        assert!(u.data().iter().all(|&v| v == 2.5));
        let y = t(2, 2, 3, (0..12).map(|v| v as f32).collect());
        let ph = downsample_phases(&upsample_nn2(&y)).unwrap();
        for p in &ph {
            assert_eq!(p, &y);
        }
    }

    fn even_tensor() -> impl Strategy<Value = FeatureTensor> {
        (1usize..4, 1usize..5, 1usize..5).prop_flat_map(|(c, h, w)| {
            proptest::collection::vec(-100.0f32..100.0, c * 4 * h * w)
                .prop_map(move |d| FeatureTensor::new(c, 2 * h, 2 * w, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn phases_partition_and_interleave(x in even_tensor()) {
            let ph = downsample_phases(&x).unwrap();
            for p in &ph {
                prop_assert_eq!(p.shape(), (x.channels(), x.height() / 2, x.width() / 2));
            }
            prop_assert_eq!(interleave_phases(&ph).unwrap(), x);
        }

        #[test]
        fn bn_round_trip(x in even_tensor(), seed in any::<u64>()) {
            let x = x.map(|v| v / 50.0);
            let c = x.channels();
            let scale: Vec<f32> = (0..c)
                .map(|i| {
                    let v = 0.5 + ((seed >> (i * 8)) & 0xff) as f32 / 170.0;
                    if i % 2 == 0 { v } else { -v }
                })
                .collect();
            let bias: Vec<f32> = (0..c).map(|i| i as f32 - 1.5).collect();
            let bn = BnAffine::new(scale, bias).unwrap();
            let back = bn_inverse(&bn_forward(&x, &bn).unwrap(), &bn).unwrap();
            for (a, b) in back.data().iter().zip(x.data()) {
                prop_assert!((a - b).abs() <= 1e-5);
            }
        }

        #[test]
        fn leaky_relu_monotone(a in -1e3f64..1e3, b in -1e3f64..1e3) {
            let act = Activation::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(act.apply_scalar(lo) <= act.apply_scalar(hi));
            if lo >= 0.0 {
                prop_assert_eq!(act.apply_scalar(lo), lo);
            }
        }
    }
}
