//! Offline channel selection: which batch-norm output channels of the split
//! layer are most correlated with the split layer's inputs.
//!
//! For an output channel `Z_p` and an input channel `X_q` (twice the
//! resolution, because the split conv has stride 2), the score `rho[p][q]`
//! is the mean absolute Pearson correlation between `Z_p` and each of the
//! four stride-2 phases of `X_q`. Channels are ranked by `sum_q rho[p][q]`.

mod file;

pub use file::SelectionFile;

use crate::error::{Error, Result};
use crate::tensor::{downsample_phases, FrontModel, Real, Tensor};

/// Absolute Pearson correlation of two equal-length vectors, computed in
/// 64-bit. A constant vector carries no signal and yields 0.
pub fn abs_corr<T: Real>(z: &[T], x: &[T]) -> Result<f64> {
    if z.len() != x.len() {
        return Err(Error::shape(format!(
            "abs_corr on vectors of length {} and {}",
            z.len(),
            x.len()
        )));
    }
    if z.len() < 2 {
        return Err(Error::shape("abs_corr needs at least two samples"));
    }
    if is_constant(z) || is_constant(x) {
        return Ok(0.0);
    }
    let n = z.len() as f64;
    let mz = z.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let mx = x.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let (mut dot, mut nz, mut nx) = (0.0f64, 0.0f64, 0.0f64);
    for (a, b) in z.iter().zip(x) {
        let da = a.as_f64() - mz;
        let db = b.as_f64() - mx;
        dot += da * db;
        nz += da * da;
        nx += db * db;
    }
    if nz == 0.0 || nx == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (nz.sqrt() * nx.sqrt())).abs().min(1.0))
}

fn is_constant<T: Real>(v: &[T]) -> bool {
    v.iter().all(|&e| e == v[0])
}

/// Mean of `abs_corr(z_p, phase_s(x_q))` over the four phases. `z_p` is a
/// single-channel `H x W` tensor and `x_q` a single-channel `2H x 2W` one.
pub fn rho_pq<T: Real>(z_p: &Tensor<T>, x_q: &Tensor<T>) -> Result<f64> {
    if z_p.channels() != 1 || x_q.channels() != 1 {
        return Err(Error::shape("rho_pq takes single-channel planes"));
    }
    if x_q.height() != 2 * z_p.height() || x_q.width() != 2 * z_p.width() {
        return Err(Error::shape(format!(
            "rho_pq: input plane {}x{} is not twice output plane {}x{}",
            x_q.height(),
            x_q.width(),
            z_p.height(),
            z_p.width()
        )));
    }
    let phases = downsample_phases(x_q)?;
    let mut acc = 0.0;
    for ph in &phases {
        acc += abs_corr(z_p.data(), ph.data())?;
    }
    Ok(acc / 4.0)
}

/// `P x Q` matrix of averaged absolute correlations.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    outputs: usize,
    inputs: usize,
    rho: Vec<f64>,
    sample_count: usize,
}

impl CorrelationMatrix {
    pub fn new(outputs: usize, inputs: usize, rho: Vec<f64>, sample_count: usize) -> Result<Self> {
        if rho.len() != outputs * inputs {
            return Err(Error::shape("correlation matrix length mismatch"));
        }
        if rho.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::Input("correlation entries must lie in [0, 1]".into()));
        }
        Ok(Self {
            outputs,
            inputs,
            rho,
            sample_count,
        })
    }

    /// P, the number of candidate output channels.
    pub fn outputs(&self) -> usize {
        self.outputs
    }

    /// Q, the number of split-layer input channels.
    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.rho[p * self.inputs + q]
    }

    pub fn row(&self, p: usize) -> &[f64] {
        &self.rho[p * self.inputs..(p + 1) * self.inputs]
    }

    pub fn values(&self) -> &[f64] {
        &self.rho
    }

    /// Total correlation of each output channel with all inputs.
    pub fn scores(&self) -> Vec<f64> {
        (0..self.outputs).map(|p| self.row(p).iter().sum()).collect()
    }
}

/// Correlation matrix of a single `(X, Z)` pair at the split layer.
pub fn image_stats<T: Real>(x: &Tensor<T>, z: &Tensor<T>) -> Result<CorrelationMatrix> {
    let (p, q) = (z.channels(), x.channels());
    if x.height() != 2 * z.height() || x.width() != 2 * z.width() {
        return Err(Error::shape("split input is not twice the output resolution"));
    }
    let x_phases = downsample_phases(x)?;
    let mut rho = Vec::with_capacity(p * q);
    for pi in 0..p {
        let zp = z.channel(pi);
        for qi in 0..q {
            let mut acc = 0.0;
            for ph in &x_phases {
                acc += abs_corr(zp, ph.channel(qi))?;
            }
            rho.push(acc / 4.0);
        }
    }
    CorrelationMatrix::new(p, q, rho, 1)
}

/// Averages per-image correlation matrices over a dataset, summing in
/// dataset order.
pub fn accumulate_stats<T: Real>(
    front: &FrontModel<T>,
    images: &[Tensor<T>],
) -> Result<CorrelationMatrix> {
    if images.is_empty() {
        return Err(Error::Input("channel statistics need at least one image".into()));
    }
    let (p, q) = (front.split_outputs(), front.split_inputs());
    let mut sum = vec![0.0f64; p * q];
    for image in images {
        let (x, z) = front.split_tensors(image)?;
        let m = image_stats(&x, &z)?;
        sum.iter_mut().zip(m.values()).for_each(|(s, v)| *s += v);
    }
    let n = images.len() as f64;
    let rho = sum.into_iter().map(|s| (s / n).min(1.0)).collect();
    CorrelationMatrix::new(p, q, rho, images.len())
}

/// Ordered list of transmitted channels, most correlated first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelSelection {
    order: Vec<usize>,
    total_channels: usize,
}

impl ChannelSelection {
    pub fn new(order: Vec<usize>, total_channels: usize) -> Result<Self> {
        if order.is_empty() || !order.len().is_power_of_two() {
            return Err(Error::config(format!(
                "selection of {} channels is not a power of two",
                order.len()
            )));
        }
        let mut seen = vec![false; total_channels];
        for &c in &order {
            if c >= total_channels || std::mem::replace(&mut seen[c], true) {
                return Err(Error::config(format!(
                    "selection index {c} is out of range or repeated"
                )));
            }
        }
        Ok(Self {
            order,
            total_channels,
        })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn total_channels(&self) -> usize {
        self.total_channels
    }

    /// The first `c` channels of this selection.
    pub fn prefix(&self, c: usize) -> Result<Self> {
        if c > self.order.len() {
            return Err(Error::config(format!(
                "cannot take {c} channels from a selection of {}",
                self.order.len()
            )));
        }
        Self::new(self.order[..c].to_vec(), self.total_channels)
    }
}

/// Every output channel, by descending score with ties broken by ascending
/// index.
pub fn rank_channels(stats: &CorrelationMatrix) -> Vec<usize> {
    let scores = stats.scores();
    let mut idx: Vec<usize> = (0..stats.outputs()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Picks the `c` output channels with the largest total correlation,
/// sorted by descending score with ties broken by ascending index.
pub fn select_channels(stats: &CorrelationMatrix, c: usize) -> Result<ChannelSelection> {
    let p = stats.outputs();
    if c == 0 || !c.is_power_of_two() {
        return Err(Error::config(format!("C = {c} is not a power of two")));
    }
    if c > p {
        return Err(Error::config(format!("C = {c} exceeds P = {p}")));
    }
    let mut idx = rank_channels(stats);
    idx.truncate(c);
    ChannelSelection::new(idx, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{interleave_phases, BnAffine, ConvLayer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Centered dot product over the product of centered norms.
    fn formula(z: &[f64], x: &[f64]) -> f64 {
        let n = z.len() as f64;
        let mz = z.iter().sum::<f64>() / n;
        let mx = x.iter().sum::<f64>() / n;
        let zc: Vec<f64> = z.iter().map(|v| v - mz).collect();
        let xc: Vec<f64> = x.iter().map(|v| v - mx).collect();
        let dot: f64 = zc.iter().zip(&xc).map(|(a, b)| a * b).sum();
        let nz = zc.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nx = xc.iter().map(|v| v * v).sum::<f64>().sqrt();
        (dot / (nz * nx)).abs()
    }

    #[test]
    fn abs_corr_examples() {
        let z: Vec<f64> = (0..10).map(|v| (v as f64).sin()).collect();
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        assert!((abs_corr(&z, &z).unwrap() - 1.0).abs() < 1e-12);
        assert!((abs_corr(&z, &neg).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(abs_corr(&z, &[3.0; 10]).unwrap(), 0.0);
        assert!(matches!(abs_corr(&z, &z[..9]), Err(Error::Shape(_))));
    }

    #[test]
    fn abs_corr_matches_formula_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let z: Vec<f64> = (0..64).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-5.0..5.0)).collect();
            assert!((abs_corr(&z, &x).unwrap() - formula(&z, &x)).abs() < 1e-6);
        }
    }

    #[test]
    fn abs_corr_scale_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let z: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let alpha = rng.gen_range(0.1..10.0) * if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
            let beta = rng.gen_range(-20.0..20.0);
            let zt: Vec<f64> = z.iter().map(|v| alpha * v + beta).collect();
            let d = abs_corr(&zt, &x).unwrap() - abs_corr(&z, &x).unwrap();
            assert!(d.abs() < 1e-6);
        }
    }

    #[test]
    fn rho_pq_examples() {
        let z = Tensor::<f64>::from_fn(1, 3, 3, |_, y, x| (y * 3 + x * x) as f64);
        let x_same = interleave_phases(&[z.clone(), z.clone(), z.clone(), z.clone()]).unwrap();
        assert!((rho_pq(&z, &x_same).unwrap() - 1.0).abs() < 1e-12);
        let x_const = Tensor::<f64>::from_fn(1, 6, 6, |_, _, _| 2.0);
        assert_eq!(rho_pq(&z, &x_const).unwrap(), 0.0);
        let bad = Tensor::<f64>::zeros(1, 5, 6);
        assert!(matches!(rho_pq(&z, &bad), Err(Error::Shape(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = Tensor::<f64>::from_fn(1, 4, 4, |_, _, _| rng.gen_range(-1.0..1.0));
        let x = Tensor::<f64>::from_fn(1, 8, 8, |_, _, _| rng.gen_range(-1.0..1.0));
        let mut want = 0.0;
        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let ph: Vec<f64> = (0..4)
                .flat_map(|y| (0..4).map(move |xx| (y, xx)))
                .map(|(y, xx)| x.get(0, 2 * y + dy, 2 * xx + dx))
                .collect();
            want += formula(z.data(), &ph) / 4.0;
        }
        assert!((rho_pq(&z, &x).unwrap() - want).abs() < 1e-12);
    }

    fn tiny_front(rng: &mut ChaCha8Rng) -> FrontModel<f64> {
        let stem = ConvLayer::new(
            2,
            1,
            3,
            1,
            (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            None,
        )
        .unwrap();
        let split = ConvLayer::new(
            3,
            2,
            3,
            2,
            (0..54).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            None,
        )
        .unwrap();
        let bn = BnAffine::new(vec![1.5, -0.5, 2.0], vec![0.1, 0.0, -0.3]).unwrap();
        FrontModel::new(vec![(stem, Default::default())], split, bn).unwrap()
    }

    #[test]
    fn accumulate_stats_mean_semantics() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let front = tiny_front(&mut rng);
        let a = Tensor::<f64>::from_fn(1, 8, 8, |_, _, _| rng.gen_range(0.0..1.0));
        let b = Tensor::<f64>::from_fn(1, 8, 8, |_, _, _| rng.gen_range(0.0..1.0));

        let single = accumulate_stats(&front, std::slice::from_ref(&a)).unwrap();
        let (xa, za) = front.split_tensors(&a).unwrap();
        assert_eq!(single.values(), image_stats(&xa, &za).unwrap().values());
        assert_eq!(single.sample_count(), 1);

        let dup = accumulate_stats(&front, &[a.clone(), a.clone()]).unwrap();
        assert_eq!(dup.values(), single.values());

        let (xb, zb) = front.split_tensors(&b).unwrap();
        let mb = image_stats(&xb, &zb).unwrap();
        let pair = accumulate_stats(&front, &[a, b]).unwrap();
        for ((got, va), vb) in pair.values().iter().zip(single.values()).zip(mb.values()) {
            assert!((got - (va + vb) / 2.0).abs() < 1e-15);
        }
        assert!(matches!(accumulate_stats::<f64>(&front, &[]), Err(Error::Input(_))));
    }

    fn matrix_from_scores(scores: &[f64]) -> CorrelationMatrix {
        CorrelationMatrix::new(scores.len(), 1, scores.to_vec(), 1).unwrap()
    }

    #[test]
    fn select_examples() {
        let m = matrix_from_scores(&[0.2, 0.9, 0.5]);
        assert_eq!(select_channels(&m, 2).unwrap().order(), &[1, 2]);
        let eq = matrix_from_scores(&[0.5; 6]);
        assert_eq!(select_channels(&eq, 4).unwrap().order(), &[0, 1, 2, 3]);
        let full = matrix_from_scores(&[0.1, 0.4, 0.3, 0.2]);
        assert_eq!(select_channels(&full, 4).unwrap().order(), &[1, 2, 3, 0]);
        assert!(matches!(select_channels(&m, 3), Err(Error::Config(_))));
        assert!(matches!(select_channels(&m, 4), Err(Error::Config(_))));
    }

    #[test]
    fn selection_is_scale_invariant_and_prefix_closed() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let p = 16;
            let q = 3;
            // Coarse dyadic entries produce ties; power-of-two scaling keeps
            // them exact. Continuous entries are tie-free, so any k works.
            let tied = rng.gen_bool(0.5);
            let rho: Vec<f64> = (0..p * q)
                .map(|_| {
                    if tied {
                        (rng.gen_range(0..5) as f64) / 8.0
                    } else {
                        rng.gen_range(0.0..1.0)
                    }
                })
                .collect();
            let m = CorrelationMatrix::new(p, q, rho.clone(), 1).unwrap();
            let k = if tied {
                [0.25, 0.5, 0.125][rng.gen_range(0..3)]
            } else {
                rng.gen_range(0.1..1.0)
            };
            let scaled =
                CorrelationMatrix::new(p, q, rho.iter().map(|v| v * k).collect(), 1).unwrap();
            for c in [1, 2, 4, 8] {
                let s = select_channels(&m, c).unwrap();
                assert_eq!(s, select_channels(&scaled, c).unwrap());
                let s2 = select_channels(&m, 2 * c).unwrap();
                assert_eq!(s.order(), &s2.order()[..c]);
            }
        }
    }
}
