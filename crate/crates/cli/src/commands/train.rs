//! `flowmap train`: fits a model to the configured task and writes the
//! checkpoint, per-step loss log, and a run manifest.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use flowmap_core::flow::{self, Branch, StepRecord};
use flowmap_core::nn::{checkpoint, FlowModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::commands::{
    draw_chain_batch, draw_point_batch, write_text, CHECKPOINT_FILE, LOSS_FILE, MANIFEST_FILE,
};
use crate::config::RunConfig;
use crate::error::{runtime_err, CliResult};
use crate::seed::{stream_seed, TRAIN};

/// Everything `train` records about a finished run, minus the wall clock.
/// Two runs with the same config and seed must agree on all of this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub final_loss: f64,
    /// Mean loss over the last tenth of the run; steadier than the last step.
    pub tail_mean_loss: f64,
    pub cfm_steps: usize,
    pub refine_steps: usize,
    pub param_count: usize,
}

pub fn summarize(records: &[StepRecord], param_count: usize) -> CliResult<TrainSummary> {
    let last = records
        .last()
        .ok_or_else(|| runtime_err("training produced no steps"))?;
    let tail_start = records.len() - records.len().div_ceil(10);
    let tail = &records[tail_start..];
    let tail_mean = tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64;
    Ok(TrainSummary {
        steps: records.len(),
        final_loss: last.loss,
        tail_mean_loss: tail_mean,
        cfm_steps: records.iter().filter(|r| r.branch == Branch::Cfm).count(),
        refine_steps: records.iter().filter(|r| r.branch == Branch::Refine).count(),
        param_count,
    })
}

fn loss_csv(records: &[StepRecord]) -> String {
    let mut out = String::from("step,loss,branch,k\n");
    for r in records {
        let branch = match r.branch {
            Branch::Cfm => "cfm",
            Branch::Refine => "refine",
        };
        out.push_str(&format!("{},{:.16e},{},{}\n", r.step, r.loss, branch, r.k));
    }
    out
}

/// Trains per the config and fills `out_dir` with `model.ckpt`, `loss.csv`,
/// and `manifest.json`. Returns the summary for callers that keep going.
pub fn run(config: &RunConfig, out_dir: &Path) -> CliResult<TrainSummary> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| runtime_err(format!("cannot create {}: {e}", out_dir.display())))?;
    let net = config.net_config()?;
    let mut model = FlowModel::new(net, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, TRAIN));

    let started = Instant::now();
    let records = if config.task.is_frame_task() {
        flow::se3::train_frames(&mut model, &config.path, &config.train, &mut rng, |r, n| {
            draw_chain_batch(&config.task, r, n)
        })?
    } else {
        flow::train_euclidean(&mut model, &config.path, &config.train, &mut rng, |r, n| {
            draw_point_batch(&config.task, r, n)
        })?
    };
    let wall_clock_secs = started.elapsed().as_secs_f64();

    let summary = summarize(&records, model.params.len())?;
    checkpoint::save_file(&model, &out_dir.join(CHECKPOINT_FILE))?;
    write_text(&out_dir.join(LOSS_FILE), &loss_csv(&records))?;

    let manifest = json!({
        "command": "train",
        "config": config,
        "summary": summary,
        "wall_clock_secs": wall_clock_secs,
    });
    write_text(
        &out_dir.join(MANIFEST_FILE),
        &format!("{}\n", serde_json::to_string_pretty(&manifest).expect("manifest serializes")),
    )?;
    Ok(summary)
}
