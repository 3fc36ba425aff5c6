//! Supervised training of the Koch scaling parameters: mean squared error
//! against the three class masks, Adam updates over shuffled mini-batches.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::koch::{highpass_bank, sigmoid, FilterBankSpec, FilterResponses, KochGradients, KochParams, N_CLASSES, N_FILTERS, N_PARAMS};
use crate::labels::ClassMasks;
use crate::raster::Grid;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub runs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            runs: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(precondition!("learning rate must be non-negative"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.runs == 0 {
            return Err(precondition!("epochs, batch size and runs must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(precondition!("invalid Adam hyper-parameters"));
        }
        Ok(())
    }
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { lr, beta1, beta2, eps, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn from_config(n: usize, cfg: &TrainConfig) -> Self {
        Self::new(n, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, f64::from(self.t));
        let bc2 = 1.0 - libm::pow(self.beta2, f64::from(self.t));
        for k in 0..params.len() {
            let g = grads[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            params[k] -= self.lr * m_hat / (libm::sqrt(v_hat) + self.eps);
        }
    }
}

/// Filter responses of one patch with its 3-channel target. Responses do
/// not depend on the trainable parameters, so they are computed once.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub responses: FilterResponses,
    pub targets: [Vec<f32>; 3],
    pub valid: Vec<bool>,
}

impl TrainingSample {
    pub fn new(sigma0_norm: &Grid, masks: &ClassMasks, bank: &FilterBankSpec) -> Result<Self> {
        if sigma0_norm.rows() != masks.geometry().rows || sigma0_norm.cols() != masks.geometry().cols {
            return Err(precondition!("input and target geometry differ"));
        }
        let responses = highpass_bank(sigma0_norm, bank)?;
        let targets = core::array::from_fn(|i| masks.channels()[i].values().iter().map(|&v| if v == 1.0 { 1.0 } else { 0.0 }).collect());
        let valid = (0..sigma0_norm.len()).map(|i| masks.is_valid(i) && !sigma0_norm.is_nodata_value(sigma0_norm.values()[i])).collect();
        Ok(TrainingSample { responses, targets, valid })
    }

    pub fn valid_pixels(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Mean squared error over the valid pixels of every channel, with its
/// gradient `2 (y - t) / N` (zero on invalid pixels).
pub fn mse_channels(pred: &[Vec<f64>], target: &[Vec<f64>], valid: Option<&[bool]>) -> Result<(f64, Vec<Vec<f64>>)> {
    if pred.len() != target.len() || pred.iter().zip(target).any(|(p, t)| p.len() != t.len()) {
        return Err(precondition!("prediction and target shapes differ"));
    }
    let is_valid = |px: usize| valid.map_or(true, |v| v[px]);
    let npx = pred.first().map_or(0, |p| p.len());
    let n = (0..npx).filter(|&px| is_valid(px)).count() * pred.len();
    if n == 0 {
        return Err(precondition!("no valid pixels"));
    }
    let mut sse = 0.0;
    let grads = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            (0..npx)
                .map(|px| {
                    if !is_valid(px) {
                        return 0.0;
                    }
                    let r = p[px] - t[px];
                    sse += r * r;
                    2.0 * r / n as f64
                })
                .collect()
        })
        .collect();
    Ok((sse / n as f64, grads))
}

/// [`mse_channels`] for a prediction against class masks.
pub fn mse_loss(pred: &[Vec<f64>; 3], target: &ClassMasks) -> Result<(f64, [Vec<f64>; 3])> {
    let t: Vec<Vec<f64>> = target.channels().iter().map(|m| m.values().iter().map(|&v| if v == 1.0 { 1.0 } else { 0.0 }).collect()).collect();
    let valid: Vec<bool> = (0..target.m1.len()).map(|i| target.is_valid(i)).collect();
    let (loss, g) = mse_channels(pred, &t, Some(&valid))?;
    let mut it = g.into_iter();
    let grads = core::array::from_fn(|_| it.next().expect("three channels"));
    Ok((loss, grads))
}

/// Sum of squared errors of one sample, the number of terms, and the
/// gradient of the sum.
fn sample_pass(s: &TrainingSample, p: &KochParams, want_grad: bool) -> (f64, usize, KochGradients) {
    let mut grads = KochGradients::default();
    let mut sse = 0.0;
    let mut terms = 0usize;
    let mut act = [0.0f64; N_FILTERS];
    for px in 0..s.responses.len() {
        if !s.valid[px] {
            continue;
        }
        for i in 0..N_CLASSES {
            let mut sum = 0.0;
            for j in 0..N_FILTERS {
                act[j] = sigmoid(p.gain[i][j] * s.responses.planes[j][px] + p.bias[i][j], p.a, p.c);
                sum += act[j] * act[j];
            }
            let y = libm::sqrt(sum / N_FILTERS as f64);
            let r = y - f64::from(s.targets[i][px]);
            sse += r * r;
            terms += 1;
            if want_grad && y > 0.0 {
                let upstream = 2.0 * r / (N_FILTERS as f64 * y) * p.a;
                for j in 0..N_FILTERS {
                    let dz = upstream * act[j] * act[j] * (1.0 - act[j]);
                    grads.gain[i][j] += dz * s.responses.planes[j][px];
                    grads.bias[i][j] += dz;
                }
            }
        }
    }
    (sse, terms, grads)
}

fn map_ordered<T: Send>(items: &[usize], f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(|&i| f(i)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(|&i| f(i)).collect()
    }
}

/// Loss and gradient over a set of samples. Per-sample partial sums are
/// reduced in index order, so the result is independent of scheduling.
pub fn batch_loss_grad(samples: &[TrainingSample], idx: &[usize], p: &KochParams, want_grad: bool) -> (f64, usize, KochGradients) {
    let parts = map_ordered(idx, |i| sample_pass(&samples[i], p, want_grad));
    let mut total = KochGradients::default();
    let (mut sse, mut terms) = (0.0, 0usize);
    for (s, n, g) in &parts {
        sse += s;
        terms += n;
        total.accumulate(g);
    }
    if terms > 0 {
        total.scale(1.0 / terms as f64);
    }
    (sse / terms.max(1) as f64, terms, total)
}

/// Mean squared error of `p` over every sample.
pub fn dataset_loss(samples: &[TrainingSample], p: &KochParams) -> f64 {
    let idx: Vec<usize> = (0..samples.len()).collect();
    batch_loss_grad(samples, &idx, p, false).0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Full training-set loss before the first update.
    pub initial_train_loss: f64,
    /// Pixel-weighted mean of the mini-batch losses of each epoch.
    pub train_loss: Vec<f64>,
    /// Full validation loss after each epoch, when a validation set exists.
    pub val_loss: Vec<Option<f64>>,
    /// Full training-set loss with the returned parameters.
    pub final_train_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: KochParams,
    pub history: TrainHistory,
    pub seed: u64,
}

/// Trains from `init` with Adam over mini-batches reshuffled each epoch
/// from `cfg.seed`. `cfg.runs` is ignored here; see [`train_runs`].
pub fn train(train_set: &[TrainingSample], val_set: &[TrainingSample], cfg: &TrainConfig, init: &KochParams) -> Result<TrainOutcome> {
    cfg.validate()?;
    init.validate()?;
    if train_set.is_empty() {
        return Err(precondition!("training set is empty"));
    }
    let mut params = init.clone();
    let mut theta = params.to_vector();
    let mut adam = Adam::from_config(N_PARAMS, cfg);
    let initial_train_loss = dataset_loss(train_set, &params);
    if !initial_train_loss.is_finite() {
        return Err(Error::Divergence { epoch: 0, loss: initial_train_loss });
    }
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory {
        initial_train_loss,
        train_loss: Vec::with_capacity(cfg.epochs),
        val_loss: Vec::with_capacity(cfg.epochs),
        final_train_loss: f64::NAN,
    };
    for epoch in 0..cfg.epochs {
        let mut rng = rng::stream(cfg.seed, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let (mut sse, mut terms) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let (loss, n, grads) = batch_loss_grad(train_set, batch, &params, true);
            sse += loss * n as f64;
            terms += n;
            adam.step(&mut theta, &grads.to_vector());
            params.set_vector(&theta);
        }
        let epoch_loss = sse / terms.max(1) as f64;
        if !epoch_loss.is_finite() || theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch, loss: epoch_loss });
        }
        history.train_loss.push(epoch_loss);
        history.val_loss.push((!val_set.is_empty()).then(|| dataset_loss(val_set, &params)));
    }
    history.final_train_loss = dataset_loss(train_set, &params);
    Ok(TrainOutcome { params, history, seed: cfg.seed })
}

/// Repeats [`train`] with seeds `seed .. seed + runs`.
pub fn train_runs(train_set: &[TrainingSample], val_set: &[TrainingSample], cfg: &TrainConfig, init: &KochParams) -> Result<Vec<TrainOutcome>> {
    cfg.validate()?;
    (0..cfg.runs as u64)
        .map(|k| {
            let run_cfg = TrainConfig { seed: cfg.seed + k, ..cfg.clone() };
            train(train_set, val_set, &run_cfg, init)
        })
        .collect()
}

/// Analytic versus central-difference gradients of the sample loss.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub analytic: [f64; N_PARAMS],
    pub numeric: [f64; N_PARAMS],
    pub max_rel_err: f64,
}

/// Relative error with a floor on the denominator so that vanishing
/// gradients compare absolutely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / a.abs().max(b.abs()).max(1e-8)
}

pub fn grad_check(p: &KochParams, sample: &TrainingSample, eps: f64) -> Result<GradCheck> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(precondition!("finite-difference step must lie in (0, 1e-2], got {eps}"));
    }
    let all = [0usize];
    let one = core::slice::from_ref(sample);
    let (_, _, g) = batch_loss_grad(one, &all, p, true);
    let analytic = g.to_vector();
    let base = p.to_vector();
    let mut numeric = [0.0; N_PARAMS];
    let mut q = p.clone();
    for k in 0..N_PARAMS {
        let mut v = base;
        v[k] = base[k] + eps;
        q.set_vector(&v);
        let up = batch_loss_grad(one, &all, &q, false).0;
        v[k] = base[k] - eps;
        q.set_vector(&v);
        let down = batch_loss_grad(one, &all, &q, false).0;
        numeric[k] = (up - down) / (2.0 * eps);
    }
    let max_rel_err = analytic.iter().zip(&numeric).map(|(&a, &n)| relative_error(a, n)).fold(0.0, f64::max);
    Ok(GradCheck { analytic, numeric, max_rel_err })
}
