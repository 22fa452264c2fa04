//! Back-and-forth restoration of untransmitted channels.
//!
//! The received channels are mapped back through the inverse batch norm,
//! upsampled, and pushed through four trainable 3x3 convolutions to
//! estimate the split layer's input `X~`. The frozen split convolution and
//! batch norm then produce `Z~` for all output channels.

mod consolidate;
mod file;
mod loss;
mod train;

pub use consolidate::{consolidate, consolidate_channel, consolidate_value};
pub use file::{read_bafm, write_bafm, BAFM_MAGIC, BAFM_VERSION};
pub use loss::{charbonnier_grad, charbonnier_loss, DEFAULT_EPSILON};
pub use train::{mean_loss, train_baf, Adam, TrainConfig, TrainReport};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::quant::check_bits;
use crate::tensor::{
    bn_forward, bn_inverse, conv2d, conv2d_backward, upsample_nn2, Activation, BnAffine, ConvLayer,
    Real, Tensor,
};

pub const PRELU_INIT: f64 = 0.25;
const KERNEL: usize = 3;

/// Per-channel parametric ReLU.
pub fn prelu<T: Real>(x: &Tensor<T>, alpha: &[T]) -> Result<Tensor<T>> {
    if alpha.len() != x.channels() {
        return Err(Error::shape(format!(
            "prelu: {} slopes for {} channels",
            alpha.len(),
            x.channels()
        )));
    }
    let plane = x.plane_len();
    let mut out = x.clone();
    for (c, &a) in alpha.iter().enumerate() {
        for v in &mut out.data_mut()[c * plane..(c + 1) * plane] {
            if *v < T::zero() {
                *v = a * *v;
            }
        }
    }
    Ok(out)
}

/// Returns the gradient with respect to the PReLU input and accumulates the
/// slope gradient into `grad_alpha`.
fn prelu_backward<T: Real>(pre: &Tensor<T>, alpha: &[T], grad: &Tensor<T>, grad_alpha: &mut [T]) -> Tensor<T> {
    let plane = pre.plane_len();
    let mut out = grad.clone();
    for (c, &a) in alpha.iter().enumerate() {
        let range = c * plane..(c + 1) * plane;
        let mut ga = T::zero();
        for (g, &v) in out.data_mut()[range.clone()].iter_mut().zip(&pre.data()[range]) {
            if v < T::zero() {
                ga += *g * v;
                *g *= a;
            }
        }
        grad_alpha[c] += ga;
    }
    out
}

/// One trainable stage: a stride-1 3x3 convolution with bias, optionally
/// followed by PReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct BafLayer<T = f32> {
    pub conv: ConvLayer<T>,
    pub alpha: Option<Vec<T>>,
}

/// Restoration network for one `(selection, n_bits)` configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct BafModel<T = f32> {
    order: Vec<usize>,
    n_bits: u8,
    input_bn: BnAffine<T>,
    layers: [BafLayer<T>; 4],
    frozen_conv: ConvLayer<T>,
    frozen_bn: BnAffine<T>,
    sigma: Activation,
}

/// Intermediate values of a forward pass, kept for the backward pass.
pub struct ForwardCache<T> {
    pre: [Tensor<T>; 4],
    inputs: [Tensor<T>; 4],
    pub x_tilde: Tensor<T>,
    pub z_tilde: Tensor<T>,
}

/// Gradients in [`BafModel::params`] order.
pub type Grads<T> = Vec<Vec<T>>;

impl<T: Real> BafModel<T> {
    /// Assembles a model from trained layers and the frozen split layer.
    pub fn from_parts(
        order: Vec<usize>,
        n_bits: u8,
        layers: [BafLayer<T>; 4],
        frozen_conv: ConvLayer<T>,
        frozen_bn: BnAffine<T>,
        sigma: Activation,
    ) -> Result<Self> {
        check_bits(n_bits)?;
        let p = frozen_conv.out_channels();
        let q = frozen_conv.in_channels();
        if frozen_conv.stride() != 2 || frozen_bn.channels() != p {
            return Err(Error::shape("frozen split layer must be a stride-2 conv with matching batch norm"));
        }
        let input_bn = frozen_bn.restrict(&order)?;
        let c = order.len();
        let mut expect_in = c;
        for (i, l) in layers.iter().enumerate() {
            if l.conv.in_channels() != expect_in || l.conv.stride() != 1 || l.conv.bias().is_none() {
                return Err(Error::shape(format!("restoration layer {} does not chain", i + 1)));
            }
            let last = i == 3;
            if last != l.alpha.is_none() {
                return Err(Error::shape("PReLU must follow layers 1-3 and only those"));
            }
            if let Some(a) = &l.alpha {
                if a.len() != l.conv.out_channels() {
                    return Err(Error::shape("PReLU slope count differs from layer width"));
                }
            }
            expect_in = l.conv.out_channels();
        }
        if expect_in != q {
            return Err(Error::shape("last restoration layer must output the split layer's inputs"));
        }
        Ok(Self {
            order,
            n_bits,
            input_bn,
            layers,
            frozen_conv,
            frozen_bn,
            sigma,
        })
    }

    /// Seeded initialization: weights and biases uniform in
    /// `±sqrt(1 / fan_in)`, PReLU slopes at 0.25.
    pub fn init(
        order: Vec<usize>,
        n_bits: u8,
        hidden: usize,
        frozen_conv: ConvLayer<T>,
        frozen_bn: BnAffine<T>,
        sigma: Activation,
        seed: u64,
    ) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::config("hidden width must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [order.len(), hidden, hidden, hidden, frozen_conv.in_channels()];
        let mut make = |i: usize| {
            let (cin, cout) = (widths[i], widths[i + 1]);
            let bound = (1.0 / (cin * KERNEL * KERNEL) as f64).sqrt();
            let mut draw = |n: usize| -> Vec<T> {
                (0..n).map(|_| T::of(rng.gen_range(-bound..=bound))).collect()
            };
            let w = draw(cout * cin * KERNEL * KERNEL);
            let b = draw(cout);
            let conv = ConvLayer::new(cout, cin, KERNEL, 1, w, Some(b))?;
            let alpha = (i < 3).then(|| vec![T::of(PRELU_INIT); cout]);
            Ok::<_, Error>(BafLayer { conv, alpha })
        };
        let layers = [make(0)?, make(1)?, make(2)?, make(3)?];
        Self::from_parts(order, n_bits, layers, frozen_conv, frozen_bn, sigma)
    }

    /// Selected channel indices, in transmission order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn n_bits(&self) -> u8 {
        self.n_bits
    }

    /// C
    pub fn channels(&self) -> usize {
        self.order.len()
    }

    /// Q
    pub fn split_inputs(&self) -> usize {
        self.frozen_conv.in_channels()
    }

    /// P
    pub fn split_outputs(&self) -> usize {
        self.frozen_conv.out_channels()
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].conv.out_channels()
    }

    pub fn sigma(&self) -> Activation {
        self.sigma
    }

    pub fn layers(&self) -> &[BafLayer<T>; 4] {
        &self.layers
    }

    pub fn frozen_conv(&self) -> &ConvLayer<T> {
        &self.frozen_conv
    }

    pub fn frozen_bn(&self) -> &BnAffine<T> {
        &self.frozen_bn
    }

    /// Trainable parameter slices: per layer, weights, bias, then PReLU
    /// slopes when present.
    pub fn params(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::with_capacity(11);
        for l in &self.layers {
            out.push(l.conv.weights());
            out.push(l.conv.bias().expect("restoration convs have bias"));
            if let Some(a) = &l.alpha {
                out.push(a);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::with_capacity(11);
        for l in &mut self.layers {
            let BafLayer { conv, alpha } = l;
            let (w, b) = conv.params_mut();
            out.push(w);
            out.push(b.expect("restoration convs have bias"));
            if let Some(a) = alpha {
                out.push(a);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> BafModel<U> {
        let cast_layer = |l: &BafLayer<T>| BafLayer {
            conv: l.conv.cast(),
            alpha: l.alpha.as_ref().map(|a| a.iter().map(|v| U::of(v.as_f64())).collect()),
        };
        BafModel {
            order: self.order.clone(),
            n_bits: self.n_bits,
            input_bn: self.input_bn.cast(),
            layers: [
                cast_layer(&self.layers[0]),
                cast_layer(&self.layers[1]),
                cast_layer(&self.layers[2]),
                cast_layer(&self.layers[3]),
            ],
            frozen_conv: self.frozen_conv.cast(),
            frozen_bn: self.frozen_bn.cast(),
            sigma: self.sigma,
        }
    }

    fn check_input(&self, zc_hat: &Tensor<T>) -> Result<()> {
        if zc_hat.channels() != self.channels() {
            return Err(Error::shape(format!(
                "restoration input has {} channels, model expects {}",
                zc_hat.channels(),
                self.channels()
            )));
        }
        Ok(())
    }

    pub fn forward_cached(&self, zc_hat: &Tensor<T>) -> Result<ForwardCache<T>> {
        self.check_input(zc_hat)?;
        let mut h = upsample_nn2(&bn_inverse(zc_hat, &self.input_bn)?);
        let mut inputs = Vec::with_capacity(4);
        let mut pre = Vec::with_capacity(4);
        for l in &self.layers {
            let p = conv2d(&h, &l.conv)?;
            let next = match &l.alpha {
                Some(a) => prelu(&p, a)?,
                None => p.clone(),
            };
            inputs.push(std::mem::replace(&mut h, next));
            pre.push(p);
        }
        let x_tilde = h;
        let z_tilde = bn_forward(&conv2d(&x_tilde, &self.frozen_conv)?, &self.frozen_bn)?;
        Ok(ForwardCache {
            pre: pre.try_into().map_err(|_| Error::shape("layer count"))?,
            inputs: inputs.try_into().map_err(|_| Error::shape("layer count"))?,
            x_tilde,
            z_tilde,
        })
    }

    /// Returns `(X~, Z~)`.
    pub fn forward(&self, zc_hat: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let c = self.forward_cached(zc_hat)?;
        Ok((c.x_tilde, c.z_tilde))
    }

    /// Backpropagates `grad_z` (the loss gradient with respect to `Z~`)
    /// into every trainable parameter. The frozen layer only passes
    /// gradients through.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_z: &Tensor<T>) -> Result<Grads<T>> {
        if grad_z.shape() != cache.z_tilde.shape() {
            return Err(Error::shape("gradient shape differs from the restored tensor"));
        }
        let mut g = grad_z.clone();
        let plane = g.plane_len();
        for (c, &a) in self.frozen_bn.scale().iter().enumerate() {
            g.data_mut()[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v *= a);
        }
        let mut g = conv2d_backward(&cache.x_tilde, &self.frozen_conv, &g, true, false)
            .input
            .expect("input gradient requested");

        let mut per_layer: Vec<Vec<Vec<T>>> = Vec::with_capacity(4);
        for i in (0..4).rev() {
            let l = &self.layers[i];
            let mut alpha_grad = Vec::new();
            if let Some(a) = &l.alpha {
                alpha_grad = vec![T::zero(); a.len()];
                g = prelu_backward(&cache.pre[i], a, &g, &mut alpha_grad);
            }
            let cg = conv2d_backward(&cache.inputs[i], &l.conv, &g, i > 0, true);
            let mut entry = vec![
                cg.weights.expect("weight gradient requested"),
                cg.bias.expect("restoration convs have bias"),
            ];
            if l.alpha.is_some() {
                entry.push(alpha_grad);
            }
            per_layer.push(entry);
            if let Some(gi) = cg.input {
                g = gi;
            }
        }
        Ok(per_layer.into_iter().rev().flatten().collect())
    }

    /// Loss and gradients for one `(zc_hat, y_target)` pair.
    pub fn loss_and_grads(&self, zc_hat: &Tensor<T>, y_target: &Tensor<T>, eps: f64) -> Result<(f64, Grads<T>)> {
        let cache = self.forward_cached(zc_hat)?;
        let (loss, gz) = charbonnier_grad(y_target, &cache.z_tilde, self.sigma, eps)?;
        Ok((loss, self.backward(&cache, &gz)?))
    }

    /// Restored full tensor after consolidating the transmitted channels
    /// against their codes. Returns the pre-activation tensor.
    pub fn restore(&self, pack: &crate::quant::QuantizedPack) -> Result<Tensor<T>> {
        if pack.order() != self.order.as_slice() || pack.n_bits() != self.n_bits {
            return Err(Error::Compatibility(format!(
                "stream carries C={} n={} with a different selection than the model (C={} n={})",
                pack.channels(),
                pack.n_bits(),
                self.channels(),
                self.n_bits
            )));
        }
        let zc_hat = pack.dequantize()?.cast::<T>();
        let (_, mut z) = self.forward(&zc_hat)?;
        consolidate(&mut z, pack)?;
        Ok(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::conv2d;

    fn frozen(q: usize, p: usize, seed: u64) -> (ConvLayer<f64>, BnAffine<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = (0..p * q * 9).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let conv = ConvLayer::new(p, q, 3, 2, w, None).unwrap();
        let scale = (0..p).map(|_| rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let bias = (0..p).map(|_| rng.gen_range(-0.3..0.3)).collect();
        (conv, BnAffine::new(scale, bias).unwrap())
    }

    fn random_input(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(c, h, w, |_, _, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn prelu_examples() {
        let x = Tensor::new(1, 1, 2, vec![-4.0f64, 4.0]).unwrap();
        assert_eq!(prelu(&x, &[0.25]).unwrap().data(), &[-1.0, 4.0]);
        assert_eq!(prelu(&x, &[1.0]).unwrap(), x);
        assert!(prelu(&x, &[0.1, 0.2]).is_err());
    }

    #[test]
    fn zero_model_yields_bias_field() {
        let (conv, bn) = frozen(3, 4, 1);
        let mut m = BafModel::init(vec![1, 3], 4, 3, conv, bn.clone(), Activation::default(), 0).unwrap();
        for p in m.params_mut() {
            p.fill(0.0);
        }
        let (x, z) = m.forward(&Tensor::zeros(2, 4, 4)).unwrap();
        assert!(x.data().iter().all(|&v| v == 0.0));
        assert_eq!(x.shape(), (3, 8, 8));
        assert_eq!(z.shape(), (4, 4, 4));
        for c in 0..4 {
            assert!(z.channel(c).iter().all(|&v| v == bn.bias()[c]));
        }
    }

    #[test]
    fn forward_matches_composed_primitives() {
        let (conv, bn) = frozen(3, 4, 2);
        let m = BafModel::init(vec![2, 0], 5, 3, conv.clone(), bn.clone(), Activation::default(), 9).unwrap();
        let zc = random_input(2, 4, 4, 3);
        let (x, z) = m.forward(&zc).unwrap();

        let mut h = upsample_nn2(&bn_inverse(&zc, &bn.restrict(&[2, 0]).unwrap()).unwrap());
        for l in m.layers() {
            h = conv2d(&h, &l.conv).unwrap();
            if let Some(a) = &l.alpha {
                h = prelu(&h, a).unwrap();
            }
        }
        assert_eq!(h, x);
        let want = bn_forward(&conv2d(&h, &conv).unwrap(), &bn).unwrap();
        assert_eq!(want, z);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let (conv, bn) = frozen(3, 4, 1);
        let a = BafModel::init(vec![0, 1], 4, 5, conv.clone(), bn.clone(), Activation::default(), 7).unwrap();
        let b = BafModel::init(vec![0, 1], 4, 5, conv.clone(), bn.clone(), Activation::default(), 7).unwrap();
        let c = BafModel::init(vec![0, 1], 4, 5, conv, bn, Activation::default(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = (1.0f64 / 18.0).sqrt();
        assert!(a.layers()[0].conv.weights().iter().all(|w| w.abs() <= bound));
        assert_eq!(a.layers()[2].alpha.as_ref().unwrap(), &vec![0.25; 5]);
        assert!(a.layers()[3].alpha.is_none());
        assert_eq!(a.params().len(), 11);
    }

    #[test]
    fn wrong_input_channels_is_a_shape_error() {
        let (conv, bn) = frozen(3, 4, 1);
        let m = BafModel::init(vec![0, 1], 4, 3, conv, bn, Activation::default(), 0).unwrap();
        assert!(matches!(m.forward(&Tensor::zeros(3, 4, 4)), Err(Error::Shape(_))));
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (conv, bn) = frozen(3, 4, 11);
        let mut m = BafModel::init(vec![3, 1], 6, 3, conv, bn, Activation::default(), 5).unwrap();
        // Negative slopes make the PReLU branch reachable with mixed signs.
        for (i, p) in m.params_mut().into_iter().enumerate() {
            if i % 3 == 2 {
                p.iter_mut().enumerate().for_each(|(k, v)| *v = 0.1 + 0.05 * k as f64);
            }
        }
        let zc = random_input(2, 4, 4, 12);
        let y = random_input(4, 4, 4, 13);
        let (_, grads) = m.loss_and_grads(&zc, &y, 1e-3).unwrap();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for (pi, g) in grads.iter().enumerate() {
            for k in 0..g.len() {
                let orig = m.params()[pi][k];
                m.params_mut()[pi][k] = orig + h;
                let lp = charbonnier_loss(&y, &m.forward(&zc).unwrap().1, m.sigma(), 1e-3).unwrap();
                m.params_mut()[pi][k] = orig - h;
                let lm = charbonnier_loss(&y, &m.forward(&zc).unwrap().1, m.sigma(), 1e-3).unwrap();
                m.params_mut()[pi][k] = orig;
                worst = worst.max(rel_err(g[k], (lp - lm) / (2.0 * h)));
            }
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }
}
