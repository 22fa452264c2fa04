use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{charbonnier_loss, BafModel, Grads, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epsilon: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Held-out loss is measured every this many iterations.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            learning_rate: 1e-3,
            batch_size: 8,
            iterations: 1000,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            eval_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning rate must be finite and non-negative"));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::config("batch size and eval interval must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_epsilon > 0.0) {
            return Err(Error::config("Adam moment decays must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Adaptive moment estimation over a list of parameter slices.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(shapes: &[usize], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn update<T: Real>(&mut self, params: Vec<&mut [T]>, grads: &[Vec<T>]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = g[i].as_f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let upd = self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                p[i] = T::of(p[i].as_f64() - upd);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport<T = f32> {
    /// Parameters with the lowest held-out loss seen (the final ones when
    /// there is no held-out set).
    pub model: BafModel<T>,
    /// Mean per-sample training loss of each iteration's batch.
    pub train_loss: Vec<f64>,
    /// `(iteration, mean held-out loss)` at each evaluation.
    pub val_loss: Vec<(usize, f64)>,
    pub best_iteration: usize,
}

/// Mean per-sample Charbonnier loss of a model over a set of pairs.
pub fn mean_loss<T: Real>(model: &BafModel<T>, data: &[(Tensor<T>, Tensor<T>)], eps: f64) -> Result<f64> {
    let mut total = 0.0;
    for (zc, y) in data {
        total += charbonnier_loss(y, &model.forward(zc)?.1, model.sigma(), eps)?;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Trains with Adam on `(zc_hat, y_target)` pairs, visiting the training
/// set in seeded random order, one epoch after another.
pub fn train_baf<T: Real>(
    init: BafModel<T>,
    train: &[(Tensor<T>, Tensor<T>)],
    val: &[(Tensor<T>, Tensor<T>)],
    cfg: &TrainConfig,
) -> Result<TrainReport<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let mut model = init;
    let shapes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let mut adam = Adam::new(&shapes, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;

    let mut train_loss = Vec::with_capacity(cfg.iterations);
    let mut val_loss = Vec::new();
    let mut best: Option<(f64, usize, BafModel<T>)> = None;
    let mut last_finite = None;

    let mut evaluate = |it: usize, model: &BafModel<T>, best: &mut Option<(f64, usize, BafModel<T>)>| -> Result<()> {
        if val.is_empty() {
            return Ok(());
        }
        let l = mean_loss(model, val, cfg.epsilon)?;
        val_loss.push((it, l));
        if l.is_finite() && best.as_ref().is_none_or(|b| l < b.0) {
            *best = Some((l, it, model.clone()));
        }
        Ok(())
    };
    evaluate(0, &model, &mut best)?;

    for it in 0..cfg.iterations {
        let mut sum: Option<Grads<T>> = None;
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order = (0..train.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let (zc, y) = &train[order[cursor]];
            cursor += 1;
            let step = model.loss_and_grads(zc, y, cfg.epsilon);
            let (loss, grads) = match step {
                Ok(v) => v,
                Err(Error::NonFinite(what)) => {
                    return Err(Error::Divergence {
                        iteration: it,
                        last_finite_loss: last_finite,
                        detail: format!("non-finite values in {what}"),
                    })
                }
                Err(e) => return Err(e),
            };
            batch_loss += loss;
            match &mut sum {
                None => sum = Some(grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        a.iter_mut().zip(g).for_each(|(a, &g)| *a += g);
                    }
                }
            }
        }
        let mean = batch_loss / cfg.batch_size as f64;
        let mut grads = sum.expect("batch is non-empty");
        let scale = T::of(1.0 / cfg.batch_size as f64);
        let finite = mean.is_finite()
            && grads.iter().flatten().all(|g| g.is_finite());
        if !finite {
            return Err(Error::Divergence {
                iteration: it,
                last_finite_loss: last_finite,
                detail: "loss or gradient became non-finite".into(),
            });
        }
        grads.iter_mut().flatten().for_each(|g| *g *= scale);
        last_finite = Some(mean);
        train_loss.push(mean);
        adam.update(model.params_mut(), &grads);
        if model.params().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence {
                iteration: it,
                last_finite_loss: last_finite,
                detail: "parameters became non-finite".into(),
            });
        }
        if (it + 1) % cfg.eval_every == 0 || it + 1 == cfg.iterations {
            evaluate(it + 1, &model, &mut best)?;
        }
    }

    let (model, best_iteration) = match best {
        Some((_, it, m)) => (m, it),
        None => (model, cfg.iterations),
    };
    Ok(TrainReport {
        model,
        train_loss,
        val_loss,
        best_iteration,
    })
}
