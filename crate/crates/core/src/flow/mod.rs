//! Conditional path sampling, training losses, and the training step.
//!
//! Paths are the Gaussian family `x_t ~ N(t x1 + (1-t) x0, sigma_t^2 I)`. The
//! model predicts the endpoint `x1` directly, so the plain regression loss is
//! `||f(x_t, t) - x1||^2`. The refinement loss additionally feeds predictions
//! back through the model: starting from a gradient-free seed prediction, it
//! applies `k + 1` further passes whose inputs are detached, and averages the
//! per-pass endpoint errors. Training flips a coin per step between the two
//! losses and performs exactly one optimizer update either way.

pub mod se3;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::tape::{Tape, Val};
use crate::nn::{adam_step, loss_gradient, AdamParams, AdamState, FlowModel, TapedModel};

/// Noise scale along the path: time-constant, or the Brownian-bridge profile
/// `sqrt(t (1 - t))` which vanishes at both endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SigmaMode {
    Constant { sigma: f64 },
    Bridge,
}

impl SigmaMode {
    pub fn sigma_at(&self, t: f64) -> f64 {
        match self {
            SigmaMode::Constant { sigma } => *sigma,
            SigmaMode::Bridge => (t * (1.0 - t)).max(0.0).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    pub sigma: SigmaMode,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig { sigma: SigmaMode::Constant { sigma: 0.5 } }
    }
}

impl PathConfig {
    pub fn validate(&self) -> Result<()> {
        if let SigmaMode::Constant { sigma } = self.sigma {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(invalid(format!("path.sigma = {sigma} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// One draw from the conditional path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub t: f64,
    pub mu_t: Vec<f64>,
    pub x_t: Vec<f64>,
}

/// Draws `x_t ~ N(t x1 + (1-t) x0, sigma_t^2 I)`.
pub fn sample_path(
    x0: &[f64],
    x1: &[f64],
    t: f64,
    cfg: &PathConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PathSample> {
    if x0.len() != x1.len() || x0.is_empty() {
        return Err(invalid(format!(
            "sample_path: endpoint shapes differ or are empty ({} vs {})",
            x0.len(),
            x1.len()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid(format!("sample_path: t = {t} outside [0, 1]")));
    }
    cfg.validate()?;
    let sigma = cfg.sigma.sigma_at(t);
    let mu_t: Vec<f64> = x0.iter().zip(x1).map(|(a, b)| t * b + (1.0 - t) * a).collect();
    let x_t: Vec<f64> = mu_t
        .iter()
        .map(|m| m + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(PathSample { x0: x0.to_vec(), x1: x1.to_vec(), t, mu_t, x_t })
}

/// Mean over the batch of `||f(x_t, t) - x1||^2`.
pub fn cfm_loss(model: &FlowModel, samples: &[PathSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid("cfm_loss: empty batch"));
    }
    let mut acc = 0.0;
    for s in samples {
        let pred = model.forward(&s.x_t, s.t)?;
        let mut item = 0.0;
        for (p, x) in pred.iter().zip(&s.x1) {
            let d = p - x;
            item += d * d;
        }
        acc += item;
    }
    Ok(acc * (1.0 / samples.len() as f64))
}

/// Taped twin of [`cfm_loss`]; bit-identical value, differentiable.
pub fn build_cfm_loss(tape: &mut Tape, tm: &TapedModel, samples: &[PathSample]) -> Result<Val> {
    if samples.is_empty() {
        return Err(invalid("cfm_loss: empty batch"));
    }
    let mut total: Option<Val> = None;
    for s in samples {
        let x = tape.constant(s.x_t.clone());
        let pred = tm.forward(tape, x, s.t)?;
        let target = tape.constant(s.x1.clone());
        let diff = tape.sub(pred, target);
        let sq = tape.square(diff);
        let item = tape.sum(sq);
        total = Some(match total {
            None => item,
            Some(acc) => tape.add(acc, item),
        });
    }
    Ok(tape.scale(total.unwrap(), 1.0 / samples.len() as f64))
}

/// Which time the refinement passes condition on: the sampled `t` of each
/// item, or `t = 1` (predictions are treated as finished states).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineTimeMode {
    SameT,
    One,
}

/// Seed predictions for the refinement loss: one gradient-free forward pass
/// per item, optionally perturbed with Gaussian noise of scale `noise_std`.
/// Kept separate so callers control the rng draw order.
pub fn refinement_seeds(
    model: &FlowModel,
    samples: &[PathSample],
    noise_std: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    let mut seeds = Vec::with_capacity(samples.len());
    for s in samples {
        let mut pred = model.forward(&s.x_t, s.t)?;
        if noise_std > 0.0 {
            for p in pred.iter_mut() {
                *p += noise_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        seeds.push(pred);
    }
    Ok(seeds)
}

fn refine_t(mode: RefineTimeMode, sample_t: f64) -> f64 {
    match mode {
        RefineTimeMode::SameT => sample_t,
        RefineTimeMode::One => 1.0,
    }
}

/// Value of the refinement loss: starting from the seed prediction, applies
/// the model `k + 1` times (inputs detached each round) and averages
/// `||prediction - x1||^2` over the collected outputs and the batch.
pub fn refinement_loss(
    model: &FlowModel,
    samples: &[PathSample],
    seeds: &[Vec<f64>],
    k: usize,
    mode: RefineTimeMode,
) -> Result<f64> {
    if samples.is_empty() || samples.len() != seeds.len() {
        return Err(invalid("refinement_loss: batch and seeds must match and be non-empty"));
    }
    let mut acc = 0.0;
    for (s, seed) in samples.iter().zip(seeds) {
        let tr = refine_t(mode, s.t);
        let mut current = seed.clone();
        let mut item = 0.0;
        for _ in 0..=k {
            current = model.forward(&current, tr)?;
            let mut err = 0.0;
            for (p, x) in current.iter().zip(&s.x1) {
                let d = p - x;
                err += d * d;
            }
            item += err;
        }
        acc += item * (1.0 / (k + 1) as f64);
    }
    Ok(acc * (1.0 / samples.len() as f64))
}

/// Taped twin of [`refinement_loss`]. Each pass sees a detached input, so the
/// gradient of every collected output flows through exactly one forward pass.
pub fn build_refinement_loss(
    tape: &mut Tape,
    tm: &TapedModel,
    samples: &[PathSample],
    seeds: &[Vec<f64>],
    k: usize,
    mode: RefineTimeMode,
) -> Result<Val> {
    if samples.is_empty() || samples.len() != seeds.len() {
        return Err(invalid("refinement_loss: batch and seeds must match and be non-empty"));
    }
    let mut total: Option<Val> = None;
    for (s, seed) in samples.iter().zip(seeds) {
        let tr = refine_t(mode, s.t);
        let target = tape.constant(s.x1.clone());
        let mut input = tape.constant(seed.clone());
        let mut item: Option<Val> = None;
        for _ in 0..=k {
            let out = tm.forward(tape, input, tr)?;
            let diff = tape.sub(out, target);
            let sq = tape.square(diff);
            let err = tape.sum(sq);
            item = Some(match item {
                None => err,
                Some(acc) => tape.add(acc, err),
            });
            input = tape.detach(out);
        }
        let item = tape.scale(item.unwrap(), 1.0 / (k + 1) as f64);
        total = Some(match total {
            None => item,
            Some(acc) => tape.add(acc, item),
        });
    }
    Ok(tape.scale(total.unwrap(), 1.0 / samples.len() as f64))
}

fn default_steps() -> usize {
    2000
}
fn default_batch() -> usize {
    64
}
fn default_lr() -> f64 {
    1e-3
}
fn default_k_max() -> usize {
    2
}
fn default_refine_prob() -> f64 {
    0.5
}
fn default_refine_time() -> RefineTimeMode {
    RefineTimeMode::SameT
}
fn default_refine_noise() -> f64 {
    0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Refinement depth is drawn uniformly from `1..=k_max`.
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    /// Probability of taking the refinement branch on a given step. Zero
    /// recovers plain endpoint regression.
    #[serde(default = "default_refine_prob")]
    pub refine_branch_prob: f64,
    #[serde(default = "default_refine_time")]
    pub refine_time_mode: RefineTimeMode,
    /// Optional Gaussian noise on the seed prediction of the refinement loss.
    #[serde(default = "default_refine_noise")]
    pub refine_noise_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: default_steps(),
            batch_size: default_batch(),
            lr: default_lr(),
            k_max: default_k_max(),
            refine_branch_prob: default_refine_prob(),
            refine_time_mode: default_refine_time(),
            refine_noise_std: default_refine_noise(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(invalid("train.steps and train.batch_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.refine_branch_prob) {
            return Err(invalid(format!(
                "train.refine_branch_prob = {} outside [0, 1]",
                self.refine_branch_prob
            )));
        }
        if self.refine_branch_prob > 0.0 && self.k_max == 0 {
            return Err(invalid("train.k_max must be >= 1 when the refinement branch is active"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("train.lr = {} must be finite and positive", self.lr)));
        }
        if self.refine_noise_std < 0.0 {
            return Err(invalid("train.refine_noise_std must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Cfm,
    Refine,
}

/// Per-step training record; `k = 0` on the plain branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub branch: Branch,
    pub k: usize,
}

/// One training step on a batch of endpoint pairs: draws per-item times and
/// path noise, flips the branch coin, then applies exactly one Adam update.
///
/// Draw order (fixed for reproducibility): per-item `t`, per-item path noise,
/// the branch uniform `m`, then on the refinement branch `k` and the optional
/// seed noise.
pub fn train_step(
    model: &mut FlowModel,
    opt: &mut AdamState,
    hp: &AdamParams,
    x0s: &[Vec<f64>],
    x1s: &[Vec<f64>],
    path: &PathConfig,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Branch, usize)> {
    if x0s.len() != x1s.len() || x0s.is_empty() {
        return Err(invalid("train_step: x0 and x1 batches must match and be non-empty"));
    }
    cfg.validate()?;
    let mut samples = Vec::with_capacity(x0s.len());
    for (x0, x1) in x0s.iter().zip(x1s) {
        let t: f64 = rng.gen();
        samples.push(sample_path(x0, x1, t, path, rng)?);
    }
    let m: f64 = rng.gen();
    let (loss, grad, branch, k) = if m <= cfg.refine_branch_prob {
        let k = rng.gen_range(1..=cfg.k_max);
        let seeds = refinement_seeds(model, &samples, cfg.refine_noise_std, rng)?;
        let (loss, grad) = loss_gradient(model, |tape, tm| {
            build_refinement_loss(tape, tm, &samples, &seeds, k, cfg.refine_time_mode)
        })?;
        (loss, grad, Branch::Refine, k)
    } else {
        let (loss, grad) = loss_gradient(model, |tape, tm| build_cfm_loss(tape, tm, &samples))?;
        (loss, grad, Branch::Cfm, 0)
    };
    adam_step(&mut model.params.values, &grad, opt, hp)?;
    Ok((loss, branch, k))
}

/// Runs [`train_step`] for `cfg.steps` steps, drawing `(x0, x1)` batches from
/// the supplied closure. Returns the per-step records.
pub fn train_euclidean<D>(
    model: &mut FlowModel,
    path: &PathConfig,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut draw: D,
) -> Result<Vec<StepRecord>>
where
    D: FnMut(&mut ChaCha8Rng, usize) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
{
    cfg.validate()?;
    let hp = AdamParams::with_lr(cfg.lr);
    let mut opt = AdamState::new(model.params.len());
    let mut records = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (x0s, x1s) = draw(rng, cfg.batch_size)?;
        let (loss, branch, k) = train_step(model, &mut opt, &hp, &x0s, &x1s, path, cfg, rng)?;
        records.push(StepRecord { step, loss, branch, k });
    }
    Ok(records)
}

/// Default ridge added to the path-graph Laplacian of the harmonic prior.
pub const HARMONIC_EPS: f64 = 1e-4;

/// Samples `n` points in R^3 from `N(0, (L + eps I)^-1)` per axis, where `L`
/// is the path-graph Laplacian. Uses the closed-form eigensystem of the
/// tridiagonal `L` (DCT-II basis): `lambda_k = 2 - 2 cos(pi k / n)`.
/// Output is point-major: `[x0 y0 z0 x1 y1 z1 ...]`.
pub fn harmonic_prior_sample(n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    harmonic_prior_sample_eps(n, HARMONIC_EPS, rng)
}

pub fn harmonic_prior_sample_eps(n: usize, eps: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(invalid("harmonic_prior_sample: n must be positive"));
    }
    if !(eps > 0.0) {
        return Err(invalid("harmonic_prior_sample: eps must be positive"));
    }
    let nf = n as f64;
    let mut out = vec![0.0; 3 * n];
    for axis in 0..3 {
        for k in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let lambda = 2.0 - 2.0 * (std::f64::consts::PI * k as f64 / nf).cos();
            let coeff = z / (lambda + eps).sqrt();
            let norm = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            for i in 0..n {
                let basis =
                    norm * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / nf).cos();
                out[3 * i + axis] += coeff * basis;
            }
        }
    }
    Ok(out)
}
