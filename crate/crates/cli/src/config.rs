//! Run configuration: one JSON file describing the task, network, path,
//! training, sampling, and evaluation settings, plus dotted-key overrides
//! from the command line.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use flowmap_core::flow::{PathConfig, TrainConfig};
use flowmap_core::nn::{Activation, Head, NetConfig};
use flowmap_core::sampler::SampleConfig;
use flowmap_core::tasks::TaskSpec;

use crate::error::{config_err, CliError, CliResult};

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_embed() -> usize {
    8
}
fn default_activation() -> Activation {
    Activation::Silu
}

/// Network settings that do not depend on the task. Input size and output
/// head are derived from the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetPart {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_embed")]
    pub time_embed_dim: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

impl Default for NetPart {
    fn default() -> Self {
        NetPart {
            hidden: default_hidden(),
            time_embed_dim: default_embed(),
            activation: default_activation(),
        }
    }
}

fn default_eval_samples() -> usize {
    64
}
fn default_reference() -> usize {
    256
}
fn default_thresholds() -> [f64; 2] {
    [2.0, 5.0]
}
fn default_nfe_budget() -> usize {
    24
}
fn default_trajectory_points() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_eval_samples")]
    pub n_samples: usize,
    /// Size of the reference target batch scores are measured against.
    #[serde(default = "default_reference")]
    pub n_reference: usize,
    /// Score thresholds for the two `fraction_below` columns.
    #[serde(default = "default_thresholds")]
    pub thresholds: [f64; 2],
    /// Refinement depths to ablate at the fixed evaluation budget; empty
    /// disables the ablation.
    #[serde(default)]
    pub ablate_k: Vec<usize>,
    /// Sampling-path evaluations per sample for the ablation; each depth `k`
    /// uses `steps = nfe_budget / (1 + k) + 1`.
    #[serde(default = "default_nfe_budget")]
    pub nfe_budget: usize,
    /// How many held-out trajectory states per sample feed the idempotency
    /// residual.
    #[serde(default = "default_trajectory_points")]
    pub trajectory_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_samples: default_eval_samples(),
            n_reference: default_reference(),
            thresholds: default_thresholds(),
            ablate_k: Vec::new(),
            nfe_budget: default_nfe_budget(),
            trajectory_points: default_trajectory_points(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.n_samples == 0 || self.n_reference == 0 {
            return Err(config_err("eval.n_samples and eval.n_reference must be positive"));
        }
        if self.thresholds[0] >= self.thresholds[1] {
            return Err(config_err("eval.thresholds must be increasing"));
        }
        for k in &self.ablate_k {
            if self.nfe_budget % (1 + k) != 0 {
                return Err(config_err(format!(
                    "eval.nfe_budget = {} is not divisible by 1 + k for k = {k}",
                    self.nfe_budget
                )));
            }
        }
        if self.trajectory_points == 0 {
            return Err(config_err("eval.trajectory_points must be positive"));
        }
        Ok(())
    }
}

/// The full run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskSpec,
    #[serde(default)]
    pub net: NetPart,
    #[serde(default)]
    pub path: PathConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.task.validate().map_err(CliError::from)?;
        self.path.validate().map_err(CliError::from)?;
        self.train.validate().map_err(CliError::from)?;
        self.sample.validate().map_err(CliError::from)?;
        self.eval.validate()?;
        if self.net.hidden.is_empty() {
            return Err(config_err("net.hidden must not be empty"));
        }
        Ok(())
    }

    /// The concrete network config implied by the task.
    pub fn net_config(&self) -> CliResult<NetConfig> {
        let (input_dim, head) = match &self.task {
            TaskSpec::HelixFrames { residues, .. } => {
                (12 * residues, Head::Se3 { frames: *residues })
            }
            task => {
                let dim = task.point_dim().expect("point task has a dimension");
                (dim, Head::Euclidean { dim })
            }
        };
        let cfg = NetConfig {
            input_dim,
            hidden: self.net.hidden.clone(),
            head,
            time_embed_dim: self.net.time_embed_dim,
            activation: self.net.activation,
        };
        cfg.validate().map_err(CliError::from)?;
        Ok(cfg)
    }
}

/// Parses `KEY=VALUE` into a dotted path and a JSON value. Values that parse
/// as JSON are taken as such; anything else becomes a string.
fn parse_set(arg: &str) -> CliResult<(Vec<String>, Value)> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| config_err(format!("--set {arg:?}: expected KEY=VALUE")))?;
    if key.is_empty() {
        return Err(config_err(format!("--set {arg:?}: empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.split('.').map(str::to_string).collect(), value))
}

/// Applies one override to the JSON tree. Every path segment except the last
/// must already exist, so typos are reported instead of silently creating
/// new keys.
fn apply_set(root: &mut Value, path: &[String], value: Value, full_key: &str) -> CliResult<()> {
    let mut node = root;
    for seg in &path[..path.len() - 1] {
        node = match node {
            Value::Object(map) => map.get_mut(seg.as_str()).ok_or_else(|| {
                config_err(format!("--set {full_key}: unknown config key {seg:?}"))
            })?,
            _ => {
                return Err(config_err(format!(
                    "--set {full_key}: {seg:?} is not an object"
                )))
            }
        };
    }
    let last = &path[path.len() - 1];
    match node {
        Value::Object(map) => {
            map.insert(last.clone(), value);
            Ok(())
        }
        _ => Err(config_err(format!("--set {full_key}: parent of {last:?} is not an object"))),
    }
}

/// Loads a config file and applies `--set` overrides, `--seed`, and
/// `--strict-paper` (which disables the final completion jump).
///
/// Overrides run against the config with all defaults filled in, so any
/// dotted path that does not name a real setting is rejected. Enum-valued
/// settings (like `path.sigma`) are replaced wholesale with a JSON object.
pub fn load_config(
    path: &Path,
    sets: &[String],
    seed: Option<u64>,
    strict_paper: bool,
) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        config_err(format!("cannot read config {}: {e}", path.display()))
    })?;
    let parsed: RunConfig = serde_json::from_str(&text)
        .map_err(|e| config_err(format!("config {}: {e}", path.display())))?;
    let mut tree = serde_json::to_value(&parsed).expect("config serializes");
    for s in sets {
        let (segments, value) = parse_set(s)?;
        apply_set(&mut tree, &segments, value, s)?;
    }
    let mut config: RunConfig = serde_json::from_value(tree)
        .map_err(|e| config_err(format!("config {} after overrides: {e}", path.display())))?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if strict_paper {
        config.sample.final_completion = false;
    }
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let p = dir.path().join("config.json");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_config(
            &dir,
            r#"{"task": {"kind": "mixture2d",
                "means": [[0.0, 0.0]], "weights": [1.0], "stds": [0.5]}}"#,
        );
        let cfg = load_config(&p, &[], None, false).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.train.k_max, 2);
        assert!(cfg.sample.final_completion);
        assert_eq!(cfg.net.hidden, vec![64, 64]);
        let net = cfg.net_config().unwrap();
        assert_eq!(net.input_dim, 2);
    }

    #[test]
    fn overrides_and_flags_apply() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_config(
            &dir,
            r#"{"task": {"kind": "chain3d", "length": 8,
                "bond_length": 3.8, "angular_noise": 0.4}, "seed": 7}"#,
        );
        let cfg = load_config(
            &p,
            &[
                "train.steps=123".into(),
                "train.lr=0.01".into(),
                "net.hidden=[32]".into(),
                "sample.refinements=3".into(),
            ],
            Some(99),
            true,
        )
        .unwrap();
        assert_eq!(cfg.train.steps, 123);
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.net.hidden, vec![32]);
        assert_eq!(cfg.sample.refinements, 3);
        assert_eq!(cfg.seed, 99);
        assert!(!cfg.sample.final_completion);
        assert_eq!(cfg.net_config().unwrap().input_dim, 24);
    }

    #[test]
    fn bad_keys_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_config(
            &dir,
            r#"{"task": {"kind": "mixture2d",
                "means": [[0.0, 0.0]], "weights": [1.0], "stds": [0.5]}}"#,
        );
        let err = load_config(&p, &["trian.steps=1".into()], None, false).unwrap_err();
        assert!(err.to_string().contains("trian"), "message: {err}");
        let err = load_config(&p, &["train.steps".into()], None, false).unwrap_err();
        assert!(err.to_string().contains("KEY=VALUE"));
        // Unknown field inside a section is a config error too.
        let p = write_config(
            &dir,
            r#"{"task": {"kind": "mixture2d",
                "means": [[0.0, 0.0]], "weights": [1.0], "stds": [0.5]},
                "train": {"stepz": 10}}"#,
        );
        let err = load_config(&p, &[], None, false).unwrap_err();
        assert!(err.to_string().contains("stepz"), "message: {err}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_config(
            &dir,
            r#"{"task": {"kind": "mixture2d",
                "means": [[0.0, 0.0]], "weights": [1.0], "stds": [0.5]}}"#,
        );
        assert!(load_config(&p, &["train.lr=-1.0".into()], None, false).is_err());
        assert!(load_config(&p, &["sample.steps=1".into()], None, false).is_err());
        assert!(load_config(&p, &["eval.nfe_budget=25".into(), "eval.ablate_k=[1]".into()], None, false).is_err());
        assert!(load_config(&p, &["eval.nfe_budget=24".into(), "eval.ablate_k=[0,1,2,3]".into()], None, false).is_ok());
    }

    #[test]
    fn helix_task_builds_a_frame_head() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_config(
            &dir,
            r#"{"task": {"kind": "helix_frames", "residues": 4, "rise": 1.5,
                "twist_deg": 100.0, "ca_spacing": 3.8, "noise_std": 0.0}}"#,
        );
        let cfg = load_config(&p, &[], None, false).unwrap();
        let net = cfg.net_config().unwrap();
        assert_eq!(net.input_dim, 48);
        assert_eq!(net.output_dim(), 24);
    }
}
