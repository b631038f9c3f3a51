//! `flowmap eval`: samples from a trained model, scores each draw against a
//! reference target batch, and writes a metrics report. Optionally sweeps
//! refinement depth at a fixed evaluation budget.

use std::path::Path;

use flowmap_core::energy::{chain_idempotency_residual, idempotency_residual};
use flowmap_core::geometry::FrameChain;
use flowmap_core::metrics::{
    energy_distance, fraction_below, kabsch_rmsd, median, EvalReport, KAblationRow,
};
use flowmap_core::nn::FlowModel;
use flowmap_core::sampler::{self, RefineTime, SampleConfig};
use flowmap_core::tasks::TaskSpec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::commands::{
    load_checkpoint, write_text, ABLATION_FILE, METRICS_FILE, REPORT_FILE,
};
use crate::config::RunConfig;
use crate::error::{runtime_err, CliResult};
use crate::seed::{stream_seed, EVAL_GEN, EVAL_REF};

/// Evenly spaced indices into a trajectory of `len` states; always includes
/// the final state.
fn held_out_indices(len: usize, want: usize) -> Vec<usize> {
    if want >= len {
        (0..len).collect()
    } else if want == 1 {
        vec![len - 1]
    } else {
        (0..want).map(|i| i * (len - 1) / (want - 1)).collect()
    }
}

/// The time an idempotency probe runs at: the state's own time when the
/// sampler refines at the current step, the endpoint otherwise.
fn probe_time(state_t: f64, refine_time: RefineTime) -> f64 {
    match refine_time {
        RefineTime::Current => state_t,
        RefineTime::End => 1.0,
    }
}

/// Per-sample score: distance to the closest reference draw.
fn nearest_scores(
    generated: &[Vec<f64>],
    reference: &[Vec<f64>],
    aligned: bool,
) -> CliResult<Vec<f64>> {
    let mut scores = Vec::with_capacity(generated.len());
    for g in generated {
        let mut best = f64::INFINITY;
        for r in reference {
            let d = if aligned {
                kabsch_rmsd(g, r)?
            } else {
                g.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            };
            best = best.min(d);
        }
        scores.push(best);
    }
    Ok(scores)
}

fn chain_translations(chain: &FrameChain) -> Vec<f64> {
    chain.frames.iter().flat_map(|f| [f.trans[0], f.trans[1], f.trans[2]]).collect()
}

/// Alignment-aware scoring for the whole evaluation: 2d mixtures compare raw
/// points, chains compare optimally superposed coordinates.
fn scoring_is_aligned(task: &TaskSpec) -> bool {
    !matches!(task, TaskSpec::Mixture2d { .. })
}

struct Generated {
    /// Flat feature vector per sample (points, coordinates, or translations).
    features: Vec<Vec<f64>>,
    /// Mean idempotency residual over held-out trajectory states; `None`
    /// when the caller does not need probes (ablation sweeps).
    residual: Option<f64>,
    nfe_per_sample: usize,
}

fn generate_points(
    model: &FlowModel,
    priors: &[Vec<f64>],
    cfg: &SampleConfig,
    trajectory_points: Option<usize>,
) -> CliResult<Generated> {
    let mut features = Vec::with_capacity(priors.len());
    let mut residuals = Vec::new();
    let mut nfe = 0;
    for x0 in priors {
        let out = sampler::predictor_refiner_sample(model, x0, cfg)?;
        nfe = out.nfe;
        if let Some(points) = trajectory_points {
            for j in held_out_indices(out.states.len(), points) {
                let t = probe_time(j as f64 / cfg.steps as f64, cfg.refine_time);
                residuals.push(idempotency_residual(model, &out.states[j], t)?);
            }
        }
        features.push(out.final_state);
    }
    let residual = trajectory_points
        .map(|_| residuals.iter().sum::<f64>() / residuals.len() as f64);
    Ok(Generated { features, residual, nfe_per_sample: nfe })
}

fn generate_frames(
    model: &FlowModel,
    priors: &[FrameChain],
    cfg: &SampleConfig,
    trajectory_points: Option<usize>,
) -> CliResult<Generated> {
    let mut features = Vec::with_capacity(priors.len());
    let mut residuals = Vec::new();
    let mut nfe = 0;
    for chain0 in priors {
        let out = sampler::se3::se3_sample(model, chain0, cfg)?;
        nfe = out.nfe;
        if let Some(points) = trajectory_points {
            for j in held_out_indices(out.chains.len(), points) {
                let t = probe_time(j as f64 / cfg.steps as f64, cfg.refine_time);
                residuals.push(chain_idempotency_residual(model, &out.chains[j], t)?);
            }
        }
        features.push(chain_translations(&out.final_chain));
    }
    let residual = trajectory_points
        .map(|_| residuals.iter().sum::<f64>() / residuals.len() as f64);
    Ok(Generated { features, residual, nfe_per_sample: nfe })
}

enum Priors {
    Points(Vec<Vec<f64>>),
    Chains(Vec<FrameChain>),
}

fn generate(
    model: &FlowModel,
    priors: &Priors,
    cfg: &SampleConfig,
    trajectory_points: Option<usize>,
) -> CliResult<Generated> {
    match priors {
        Priors::Points(p) => generate_points(model, p, cfg, trajectory_points),
        Priors::Chains(c) => generate_frames(model, c, cfg, trajectory_points),
    }
}

/// Builds the evaluation report for a trained model. Does not touch the
/// filesystem; [`run`] wraps it with checkpoint loading and output files.
pub fn evaluate(config: &RunConfig, model: &FlowModel) -> CliResult<EvalReport> {
    let task = &config.task;
    let n = config.eval.n_samples;

    let mut ref_rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, EVAL_REF));
    let mut reference = Vec::with_capacity(config.eval.n_reference);
    for _ in 0..config.eval.n_reference {
        reference.push(if task.is_frame_task() {
            chain_translations(&task.sample_target_chain(&mut ref_rng)?)
        } else {
            task.sample_target_points(&mut ref_rng)?
        });
    }

    let mut gen_rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, EVAL_GEN));
    let priors = if task.is_frame_task() {
        Priors::Chains((0..n).map(|_| task.sample_prior_chain(&mut gen_rng)).collect::<Result<_, _>>()?)
    } else {
        Priors::Points((0..n).map(|_| task.sample_prior_points(&mut gen_rng)).collect::<Result<_, _>>()?)
    };

    let main = generate(model, &priors, &config.sample, Some(config.eval.trajectory_points))?;
    let aligned = scoring_is_aligned(task);
    let scores = nearest_scores(&main.features, &reference, aligned)?;

    let mut k_ablation = Vec::new();
    for &k in &config.eval.ablate_k {
        let mut cfg = config.sample.clone();
        cfg.steps = config.eval.nfe_budget / (1 + k) + 1;
        cfg.refinements = k;
        cfg.record_energy = false;
        let out = generate(model, &priors, &cfg, None)?;
        let row_scores = nearest_scores(&out.features, &reference, aligned)?;
        k_ablation.push(KAblationRow {
            k,
            steps: cfg.steps,
            nfe: out.nfe_per_sample,
            median_score: median(&row_scores)?,
            energy_distance: energy_distance(&out.features, &reference)?,
        });
    }

    Ok(EvalReport {
        n_samples: n,
        nfe_per_sample: main.nfe_per_sample,
        fraction_below_2: fraction_below(&scores, config.eval.thresholds[0])?,
        fraction_below_5: fraction_below(&scores, config.eval.thresholds[1])?,
        median_score: median(&scores)?,
        mean_score: scores.iter().sum::<f64>() / scores.len() as f64,
        energy_distance: energy_distance(&main.features, &reference)?,
        mean_idempotency_residual: main.residual,
        k_ablation,
    })
}

/// Evaluates per the config and fills `out_dir` with `report.json`,
/// `metrics.csv`, and `ablation.csv` when a depth sweep ran.
pub fn run(config: &RunConfig, checkpoint: &Path, out_dir: &Path) -> CliResult<EvalReport> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| runtime_err(format!("cannot create {}: {e}", out_dir.display())))?;
    let model = load_checkpoint(checkpoint, &config.net_config()?)?;
    let report = evaluate(config, &model)?;
    write_text(
        &out_dir.join(REPORT_FILE),
        &format!("{}\n", serde_json::to_string_pretty(&report).expect("report serializes")),
    )?;
    write_text(&out_dir.join(METRICS_FILE), &report.scalar_csv())?;
    if !report.k_ablation.is_empty() {
        write_text(&out_dir.join(ABLATION_FILE), &report.ablation_csv())?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn held_out_indices_cover_the_span() {
        assert_eq!(held_out_indices(10, 3), vec![0, 4, 9]);
        assert_eq!(held_out_indices(3, 8), vec![0, 1, 2]);
        assert_eq!(held_out_indices(10, 1), vec![9]);
        let idx = held_out_indices(50, 8);
        assert_eq!(idx.len(), 8);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*idx.last().unwrap(), 49);
    }

    #[test]
    fn nearest_scores_pick_the_closest_reference() {
        let generated = vec![vec![0.0, 0.0], vec![10.0, 0.0]];
        let reference = vec![vec![1.0, 0.0], vec![9.0, 0.0]];
        let s = nearest_scores(&generated, &reference, false).unwrap();
        assert_eq!(s, vec![1.0, 1.0]);
    }

    #[test]
    fn aligned_scores_ignore_rigid_motion() {
        // The same triangle rotated 90 degrees about z and shifted.
        let a = vec![0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let b = vec![5.0, 5.0, 1.0, 5.0, 7.0, 1.0, 4.0, 5.0, 1.0];
        let s = nearest_scores(&[a], &[b], true).unwrap();
        assert!(s[0] < 1e-9, "score {}", s[0]);
    }
}
