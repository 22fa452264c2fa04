//! Small split classifier standing in for a large detector.
//!
//! Device side: 3x3 conv (1 -> Q) + leaky ReLU, then the split layer,
//! a stride-2 3x3 conv (Q -> P) with folded batch norm. Cloud side: the
//! split activation, a stride-2 3x3 conv (P -> P) + leaky ReLU, global
//! average pooling and a linear classifier over K classes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::baf::Adam;
use crate::error::{Error, Result};
use crate::tensor::{
    activation, bn_forward, conv2d, conv2d_backward, Activation, BnAffine, ConvLayer, FeatureTensor, FrontModel,
    Real, Tensor,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateNet<T = f32> {
    pub front: FrontModel<T>,
    /// Activation of the split layer, applied on the receiving side.
    pub sigma: Activation,
    pub back_conv: ConvLayer<T>,
    pub back_act: Activation,
    /// `K x P`, row-major.
    pub fc_weights: Vec<T>,
    pub fc_bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    /// Q, the split layer's input channels.
    pub split_inputs: usize,
    /// P, the split layer's output channels.
    pub split_outputs: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Training fails below this validation accuracy.
    pub min_accuracy: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            split_inputs: 16,
            split_outputs: 32,
            iterations: 300,
            batch_size: 16,
            learning_rate: 3e-3,
            min_accuracy: 0.9,
        }
    }
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<T> {
    let b = (1.0 / fan_in as f64).sqrt();
    (0..n).map(|_| T::of(rng.gen_range(-b..=b))).collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

struct Cache<T> {
    c1: Tensor<T>,
    x: Tensor<T>,
    s: Tensor<T>,
    z: Tensor<T>,
    y: Tensor<T>,
    c2: Tensor<T>,
    pooled: Vec<T>,
    logits: Vec<f64>,
}

impl<T: Real> SurrogateNet<T> {
    /// Seeded random network with an identity batch norm.
    pub fn init(q: usize, p: usize, classes: usize, seed: u64) -> Result<Self> {
        if q == 0 || p == 0 || classes < 2 {
            return Err(Error::config("surrogate needs Q, P >= 1 and at least two classes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem = ConvLayer::new(q, 1, 3, 1, uniform(&mut rng, q * 9, 9), Some(uniform(&mut rng, q, 9)))?;
        let split = ConvLayer::new(p, q, 3, 2, uniform(&mut rng, p * q * 9, q * 9), None)?;
        let front = FrontModel::new(vec![(stem, Activation::default())], split, BnAffine::identity(p))?;
        let back_conv = ConvLayer::new(p, p, 3, 2, uniform(&mut rng, p * p * 9, p * 9), Some(uniform(&mut rng, p, p * 9)))?;
        Ok(Self {
            front,
            sigma: Activation::default(),
            back_conv,
            back_act: Activation::default(),
            fc_weights: uniform(&mut rng, classes * p, p),
            fc_bias: uniform(&mut rng, classes, p),
        })
    }

    pub fn classes(&self) -> usize {
        self.fc_bias.len()
    }

    pub fn split_outputs(&self) -> usize {
        self.front.split_outputs()
    }

    pub fn cast<U: Real>(&self) -> SurrogateNet<U> {
        let v = |x: &[T]| x.iter().map(|a| U::of(a.as_f64())).collect();
        SurrogateNet {
            front: self.front.cast(),
            sigma: self.sigma,
            back_conv: self.back_conv.cast(),
            back_act: self.back_act,
            fc_weights: v(&self.fc_weights),
            fc_bias: v(&self.fc_bias),
        }
    }

    /// Class scores from a (possibly restored) split-layer output `Z`.
    pub fn back_logits(&self, z: &Tensor<T>) -> Result<Vec<f64>> {
        if z.channels() != self.split_outputs() {
            return Err(Error::shape(format!(
                "classifier expects {} split channels, got {}",
                self.split_outputs(),
                z.channels()
            )));
        }
        let h = activation(&conv2d(&activation(z, self.sigma), &self.back_conv)?, self.back_act);
        let pooled: Vec<f64> = (0..h.channels())
            .map(|c| h.channel(c).iter().map(|v| v.as_f64()).sum::<f64>() / h.plane_len() as f64)
            .collect();
        Ok(self.linear(&pooled))
    }

    fn linear(&self, pooled: &[f64]) -> Vec<f64> {
        let p = pooled.len();
        (0..self.classes())
            .map(|k| {
                self.fc_bias[k].as_f64()
                    + self.fc_weights[k * p..(k + 1) * p]
                        .iter()
                        .zip(pooled)
                        .map(|(w, x)| w.as_f64() * x)
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn predict_from_split(&self, z: &Tensor<T>) -> Result<usize> {
        Ok(argmax(&self.back_logits(z)?))
    }

    pub fn predict(&self, image: &Tensor<T>) -> Result<usize> {
        self.predict_from_split(&self.front.forward(image)?)
    }

    fn forward_cached(&self, image: &Tensor<T>) -> Result<Cache<T>> {
        let (stem, act) = &self.front.stem[0];
        let c1 = conv2d(image, stem)?;
        let x = activation(&c1, *act);
        let s = conv2d(&x, &self.front.split_conv)?;
        let z = bn_forward(&s, &self.front.split_bn)?;
        let y = activation(&z, self.sigma);
        let c2 = conv2d(&y, &self.back_conv)?;
        let h = activation(&c2, self.back_act);
        let pooled: Vec<T> = (0..h.channels())
            .map(|c| T::of(h.channel(c).iter().map(|v| v.as_f64()).sum::<f64>() / h.plane_len() as f64))
            .collect();
        let logits = self.linear(&pooled.iter().map(|v| v.as_f64()).collect::<Vec<_>>());
        Ok(Cache { c1, x, s, z, y, c2, pooled, logits })
    }

    /// Softmax cross-entropy and its gradients in [`Self::params_mut`] order.
    fn loss_and_grads(&self, image: &Tensor<T>, label: usize) -> Result<(f64, Vec<Vec<T>>)> {
        let c = self.forward_cached(image)?;
        let k = self.classes();
        let p = self.split_outputs();
        let max = c.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = c.logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let loss = -(exps[label] / total).ln();
        let dlogits: Vec<f64> = exps
            .iter()
            .enumerate()
            .map(|(i, e)| e / total - (i == label) as u8 as f64)
            .collect();

        let mut g_fc_w = vec![T::zero(); k * p];
        let mut dpooled = vec![0.0; p];
        for i in 0..k {
            for j in 0..p {
                g_fc_w[i * p + j] = T::of(dlogits[i] * c.pooled[j].as_f64());
                dpooled[j] += dlogits[i] * self.fc_weights[i * p + j].as_f64();
            }
        }
        let g_fc_b: Vec<T> = dlogits.iter().map(|&d| T::of(d)).collect();

        let (hc, hh, hw) = c.c2.shape();
        let area = (hh * hw) as f64;
        let dc2 = Tensor::from_fn(hc, hh, hw, |ch, yy, xx| {
            T::of(dpooled[ch] / area) * self.back_act.derivative(c.c2.get(ch, yy, xx))
        });
        let back = conv2d_backward(&c.y, &self.back_conv, &dc2, true, true);
        let dy = back.input.expect("input gradient requested");
        let (zc, zh, zw) = c.z.shape();
        let dz = Tensor::from_fn(zc, zh, zw, |ch, yy, xx| dy.get(ch, yy, xx) * self.sigma.derivative(c.z.get(ch, yy, xx)));
        let mut g_scale = vec![T::zero(); zc];
        let mut g_shift = vec![T::zero(); zc];
        for ch in 0..zc {
            for (d, s) in dz.channel(ch).iter().zip(c.s.channel(ch)) {
                g_scale[ch] += *d * *s;
                g_shift[ch] += *d;
            }
        }
        let scale = self.front.split_bn.scale();
        let ds = Tensor::from_fn(zc, zh, zw, |ch, yy, xx| dz.get(ch, yy, xx) * scale[ch]);
        let split = conv2d_backward(&c.x, &self.front.split_conv, &ds, true, true);
        let dx = split.input.expect("input gradient requested");
        let (stem, act) = &self.front.stem[0];
        let (xc, xh, xw) = c.c1.shape();
        let dc1 = Tensor::from_fn(xc, xh, xw, |ch, yy, xx| dx.get(ch, yy, xx) * act.derivative(c.c1.get(ch, yy, xx)));
        let st = conv2d_backward(image, stem, &dc1, false, true);

        Ok((
            loss,
            vec![
                st.weights.expect("weights"),
                st.bias.expect("stem has bias"),
                split.weights.expect("weights"),
                g_scale,
                g_shift,
                back.weights.expect("weights"),
                back.bias.expect("back conv has bias"),
                g_fc_w,
                g_fc_b,
            ],
        ))
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let (stem, _) = &mut self.front.stem[0];
        let (sw, sb) = stem.params_mut();
        let (split_w, _) = self.front.split_conv.params_mut();
        let (scale, shift) = self.front.split_bn.params_mut();
        let (bw, bb) = self.back_conv.params_mut();
        vec![
            sw,
            sb.expect("stem has bias"),
            split_w,
            scale,
            shift,
            bw,
            bb.expect("back conv has bias"),
            &mut self.fc_weights,
            &mut self.fc_bias,
        ]
    }

    /// Sets the batch norm so the split conv output has zero mean and unit
    /// variance per channel over `images`.
    fn calibrate_bn<'a>(&mut self, images: impl Iterator<Item = &'a Tensor<T>>) -> Result<()> {
        let p = self.split_outputs();
        let (mut sum, mut sq, mut n) = (vec![0.0; p], vec![0.0; p], 0.0);
        for img in images {
            let x = self.front.stem_forward(img)?;
            let s = conv2d(&x, &self.front.split_conv)?;
            for c in 0..p {
                for v in s.channel(c) {
                    let v = v.as_f64();
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            n += s.plane_len() as f64;
        }
        let mut scale = Vec::with_capacity(p);
        let mut bias = Vec::with_capacity(p);
        for c in 0..p {
            let mean = sum[c] / n;
            let std = (sq[c] / n - mean * mean).max(1e-8).sqrt();
            scale.push(T::of(1.0 / std));
            bias.push(T::of(-mean / std));
        }
        self.front.split_bn = BnAffine::new(scale, bias)?;
        Ok(())
    }
}

impl SurrogateNet<f32> {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let net: Self = serde_json::from_str(s).map_err(|e| Error::format(format!("network file: {e}")))?;
        FrontModel::new(net.front.stem.clone(), net.front.split_conv.clone(), net.front.split_bn.clone())?;
        if net.fc_weights.len() != net.classes() * net.split_outputs() || net.back_conv.in_channels() != net.split_outputs() {
            return Err(Error::format("network file: classifier shapes do not match"));
        }
        Ok(net)
    }
}

/// Fraction of `idx` classified correctly from the full, uncompressed
/// split tensor.
pub fn accuracy<T: Real>(net: &SurrogateNet<T>, data: &Dataset, idx: &[usize]) -> Result<f64> {
    let mut correct = 0;
    for &i in idx {
        if net.predict(&data.images[i].cast())? == data.labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / idx.len().max(1) as f64)
}

#[derive(Clone, Debug)]
pub struct SurrogateReport {
    pub net: SurrogateNet<f32>,
    pub untrained_accuracy: f64,
    pub val_accuracy: f64,
    pub train_loss: Vec<f64>,
}

/// Adam on softmax cross-entropy. Fails with a harness error if the
/// validation accuracy ends below `cfg.min_accuracy`.
pub fn train_surrogate(data: &Dataset, cfg: &SurrogateConfig, seed: u64) -> Result<SurrogateReport> {
    if data.train.is_empty() || cfg.batch_size == 0 {
        return Err(Error::config("surrogate training needs data and a positive batch size"));
    }
    let mut net = SurrogateNet::<f32>::init(cfg.split_inputs, cfg.split_outputs, data.classes, seed)?;
    net.calibrate_bn(data.train.iter().take(64).map(|&i| &data.images[i]))?;
    let val_idx = if data.val.is_empty() { &data.train } else { &data.val };
    let untrained_accuracy = accuracy(&net, data, val_idx)?;

    let shapes: Vec<usize> = net.params_mut().iter().map(|p| p.len()).collect();
    let mut adam = Adam::new(&shapes, cfg.learning_rate, 0.9, 0.999, 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut order = data.train.clone();
    let mut cursor = order.len();
    let mut train_loss = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let mut acc: Option<Vec<Vec<f32>>> = None;
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            let (l, g) = net.loss_and_grads(&data.images[i], data.labels[i])?;
            loss += l;
            match &mut acc {
                None => acc = Some(g),
                Some(a) => a.iter_mut().zip(&g).for_each(|(a, g)| a.iter_mut().zip(g).for_each(|(a, g)| *a += g)),
            }
        }
        let mean = loss / cfg.batch_size as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence {
                iteration: it,
                last_finite_loss: train_loss.last().copied(),
                detail: "surrogate loss became non-finite".into(),
            });
        }
        train_loss.push(mean);
        let mut g = acc.expect("non-empty batch");
        let inv = 1.0 / cfg.batch_size as f32;
        g.iter_mut().flatten().for_each(|v| *v *= inv);
        adam.update(net.params_mut(), &g);
    }
    // Re-validate the batch norm after training moved its scale.
    net.front.split_bn = BnAffine::new(net.front.split_bn.scale().to_vec(), net.front.split_bn.bias().to_vec())?;
    let val_accuracy = accuracy(&net, data, val_idx)?;
    if val_accuracy < cfg.min_accuracy {
        return Err(Error::Harness(format!(
            "surrogate reached {:.1}% validation accuracy, below the required {:.1}%",
            100.0 * val_accuracy,
            100.0 * cfg.min_accuracy
        )));
    }
    Ok(SurrogateReport {
        net,
        untrained_accuracy,
        val_accuracy,
        train_loss,
    })
}

/// Split-layer outputs `Z` for the given images.
pub fn split_outputs<T: Real>(net: &SurrogateNet<T>, images: &[&FeatureTensor]) -> Result<Vec<Tensor<T>>> {
    images.iter().map(|img| net.front.forward(&img.cast())).collect()
}
