//! Command implementations shared between the binary and integration tests.

pub mod eval;
pub mod sample;
pub mod train;

use std::path::Path;

use flowmap_core::geometry::FrameChain;
use flowmap_core::nn::{checkpoint, FlowModel, NetConfig};
use flowmap_core::tasks::TaskSpec;
use rand_chacha::ChaCha8Rng;

use crate::error::{runtime_err, CliResult};

/// Output filenames are fixed so downstream tooling never has to guess.
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const FRAMES_FILE: &str = "frames.txt";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const REPORT_FILE: &str = "report.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

pub(crate) fn draw_point_batch(
    task: &TaskSpec,
    rng: &mut ChaCha8Rng,
    n: usize,
) -> flowmap_core::Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut x0s = Vec::with_capacity(n);
    let mut x1s = Vec::with_capacity(n);
    for _ in 0..n {
        x0s.push(task.sample_prior_points(rng)?);
        x1s.push(task.sample_target_points(rng)?);
    }
    Ok((x0s, x1s))
}

pub(crate) fn draw_chain_batch(
    task: &TaskSpec,
    rng: &mut ChaCha8Rng,
    n: usize,
) -> flowmap_core::Result<(Vec<FrameChain>, Vec<FrameChain>)> {
    let mut c0s = Vec::with_capacity(n);
    let mut c1s = Vec::with_capacity(n);
    for _ in 0..n {
        c0s.push(task.sample_prior_chain(rng)?);
        c1s.push(task.sample_target_chain(rng)?);
    }
    Ok((c0s, c1s))
}

/// Loads a checkpoint and rejects it if its architecture does not match the
/// one the config implies; a silent shape mismatch would surface later as a
/// confusing forward-pass error.
pub(crate) fn load_checkpoint(path: &Path, expected: &NetConfig) -> CliResult<FlowModel> {
    let model = checkpoint::load_file(path)
        .map_err(|e| runtime_err(format!("checkpoint {}: {e}", path.display())))?;
    if model.config != *expected {
        return Err(runtime_err(format!(
            "checkpoint {} was trained for a different architecture than the config implies",
            path.display()
        )));
    }
    Ok(model)
}

pub(crate) fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text)
        .map_err(|e| runtime_err(format!("cannot write {}: {e}", path.display())))
}

/// Formats an optional trace residual; absent values become empty CSV cells.
pub(crate) fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}
