//! Predictor-refiner sampling.
//!
//! The model predicts the endpoint `x1` from the current state; the sampler
//! turns that into the velocity `(x1_hat - x_t) / (1 - t)` and takes Euler
//! steps of size `1 / steps` starting at `t = 0`. Between the prediction and
//! the state update, the prediction can be refined by feeding it back through
//! the model `refinements` times. After the last step the state optionally
//! jumps to the final prediction instead of stopping at `t = 1 - 1/steps`.
//!
//! Model-evaluation accounting: `nfe` counts evaluations on the sampling path
//! and always equals `(steps - 1) * (1 + refinements)`. Extra evaluations made
//! only to measure the post-refinement consistency residual are counted in
//! `probe_evals` and never influence the trajectory.

pub mod se3;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};
use crate::nn::FlowMap;

/// Time used for the refinement passes inside the sampler: the current step
/// time, or the endpoint `t = 1` (predictions treated as finished states).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineTime {
    Current,
    End,
}

fn default_steps() -> usize {
    50
}
fn default_refinements() -> usize {
    1
}
fn default_final_completion() -> bool {
    true
}
fn default_record_energy() -> bool {
    false
}
fn default_refine_time() -> RefineTime {
    RefineTime::Current
}
fn default_n_samples() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    /// Discretization `T`; the sampler takes `T - 1` Euler steps.
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Refinement passes per step (`k`).
    #[serde(default = "default_refinements")]
    pub refinements: usize,
    /// Jump to the last prediction instead of stopping at `t = 1 - 1/T`.
    #[serde(default = "default_final_completion")]
    pub final_completion: bool,
    /// Record per-step consistency residuals (costs one probe eval per step).
    #[serde(default = "default_record_energy")]
    pub record_energy: bool,
    #[serde(default = "default_refine_time")]
    pub refine_time: RefineTime,
    /// Batch size for callers that draw many samples; unused by the single
    /// trajectory functions.
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            steps: default_steps(),
            refinements: default_refinements(),
            final_completion: default_final_completion(),
            record_energy: default_record_energy(),
            refine_time: default_refine_time(),
            n_samples: default_n_samples(),
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(invalid(format!("sample.steps = {} must be >= 2", self.steps)));
        }
        if self.n_samples == 0 {
            return Err(invalid("sample.n_samples must be positive"));
        }
        Ok(())
    }

    /// Sampling-path model evaluations implied by this config.
    pub fn nfe(&self) -> usize {
        (self.steps - 1) * (1 + self.refinements)
    }
}

/// Per-step record. `pre_residual` is the movement of the prediction under
/// the first refinement pass (available whenever `refinements >= 1`);
/// `post_residual` is the movement of the final prediction under one more
/// pass, measured by a probe evaluation when `record_energy` is set. With
/// zero refinements the single probe serves as both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    /// Time at the start of the step.
    pub t: f64,
    /// Euclidean norm of the state after the step's update.
    pub state_norm: f64,
    pub pre_residual: Option<f64>,
    pub post_residual: Option<f64>,
    /// Cumulative sampling-path evaluations after this step.
    pub nfe_after: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub final_state: Vec<f64>,
    /// States along the path: `states[0]` is the input, `states[s + 1]` the
    /// state after step `s`. The final completion jump is not included.
    pub states: Vec<Vec<f64>>,
    pub trace: Vec<StepTrace>,
    pub nfe: usize,
    pub probe_evals: usize,
}

fn euclid_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn euclid_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// The ODE right-hand side `(f(x, t) - x) / (1 - t)`; undefined at `t = 1`.
pub fn vector_field<M: FlowMap + ?Sized>(model: &M, x: &[f64], t: f64) -> Result<Vec<f64>> {
    if t >= 1.0 {
        return Err(CoreError::Numeric(format!(
            "vector_field: t = {t} too close to 1 (division by 1 - t)"
        )));
    }
    let pred = model.predict(x, t)?;
    Ok(pred.iter().zip(x).map(|(p, xi)| (p - xi) / (1.0 - t)).collect())
}

/// Integrates the endpoint-prediction ODE with per-step refinement.
pub fn predictor_refiner_sample<M: FlowMap + ?Sized>(
    model: &M,
    x0: &[f64],
    cfg: &SampleConfig,
) -> Result<SampleOutput> {
    cfg.validate()?;
    if x0.len() != model.dim() {
        return Err(invalid(format!(
            "predictor_refiner_sample: input length {} does not match model dim {}",
            x0.len(),
            model.dim()
        )));
    }
    let t_count = cfg.steps;
    let dt = 1.0 / t_count as f64;
    let mut x = x0.to_vec();
    let mut states = Vec::with_capacity(t_count);
    states.push(x.clone());
    let mut trace = Vec::with_capacity(t_count - 1);
    let mut nfe = 0;
    let mut probe_evals = 0;
    let mut last_pred: Vec<f64> = Vec::new();

    for step in 0..t_count - 1 {
        let t = step as f64 / t_count as f64;
        let t_refine = match cfg.refine_time {
            RefineTime::Current => t,
            RefineTime::End => 1.0,
        };

        let mut pred = model.predict(&x, t)?;
        nfe += 1;
        let mut pre_residual = None;
        for j in 0..cfg.refinements {
            let next = model.predict(&pred, t_refine)?;
            nfe += 1;
            if j == 0 {
                pre_residual = Some(euclid_dist(&next, &pred));
            }
            pred = next;
        }
        let mut post_residual = None;
        if cfg.record_energy {
            let probe = model.predict(&pred, t_refine)?;
            probe_evals += 1;
            let r = euclid_dist(&probe, &pred);
            post_residual = Some(r);
            if cfg.refinements == 0 {
                pre_residual = Some(r);
            }
        }

        let coeff = dt / (1.0 - t);
        for (xi, p) in x.iter_mut().zip(&pred) {
            *xi += coeff * (*p - *xi);
        }
        states.push(x.clone());
        trace.push(StepTrace {
            step,
            t,
            state_norm: euclid_norm(&x),
            pre_residual,
            post_residual,
            nfe_after: nfe,
        });
        last_pred = pred;
    }

    let final_state = if cfg.final_completion { last_pred } else { x };
    debug_assert_eq!(nfe, cfg.nfe());
    Ok(SampleOutput { final_state, states, trace, nfe, probe_evals })
}

/// Plain endpoint-prediction ODE: no refinement, no energy recording.
pub fn plain_sample<M: FlowMap + ?Sized>(
    model: &M,
    x0: &[f64],
    steps: usize,
    final_completion: bool,
) -> Result<SampleOutput> {
    let cfg = SampleConfig {
        steps,
        refinements: 0,
        final_completion,
        record_energy: false,
        ..Default::default()
    };
    predictor_refiner_sample(model, x0, &cfg)
}

/// Extracts the recorded consistency residuals as `(t, pre, post)` rows.
/// Fails if the trajectory was sampled without `record_energy`.
pub fn energy_trace(trace: &[StepTrace]) -> Result<Vec<(f64, f64, f64)>> {
    trace
        .iter()
        .map(|s| match (s.pre_residual, s.post_residual) {
            (Some(pre), Some(post)) => Ok((s.t, pre, post)),
            _ => Err(CoreError::InvalidState(
                "energy_trace: trajectory was sampled without record_energy".into(),
            )),
        })
        .collect()
}
