//! `flowmap check`: runtime self-check suites. Each check compares a library
//! routine against an independently coded oracle and reports the worst
//! observed error against a pinned threshold. A failing row exits nonzero so
//! the suites can gate CI or a fresh install.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use flowmap_core::flow::{
    build_cfm_loss, build_refinement_loss, refinement_seeds, sample_path, PathConfig,
    RefineTimeMode,
};
use flowmap_core::flow::se3::{
    build_se3_cfm_loss, build_se3_refinement_loss, frame_refinement_seeds, sample_frame_path,
};
use flowmap_core::geometry::{hat, so3_exp, so3_log, uniform_so3_sample, Frame, FrameChain};
use flowmap_core::nn::{
    finite_diff_gradient, loss_gradient, Activation, FlowModel, FnFlowMap, Head, NetConfig,
};
use flowmap_core::sampler::{self, vector_field, RefineTime, SampleConfig};

use crate::error::{runtime_err, CliResult};

#[derive(Debug, Clone)]
pub struct CheckRow {
    pub name: String,
    /// Worst observed error for this check.
    pub value: f64,
    pub threshold: f64,
}

impl CheckRow {
    pub fn pass(&self) -> bool {
        self.value < self.threshold
    }
}

pub fn to_csv(rows: &[CheckRow]) -> String {
    let mut out = String::from("check,value,threshold,pass\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.16e},{:.16e},{}\n",
            r.name,
            r.value,
            r.threshold,
            if r.pass() { "pass" } else { "fail" }
        ));
    }
    out
}

pub const SUITES: [&str; 3] = ["geom", "grad", "sampler"];

pub fn run_suite(name: &str) -> CliResult<Vec<CheckRow>> {
    match name {
        "geom" => geom_suite(),
        "grad" => grad_suite(),
        "sampler" => sampler_suite(),
        "all" => {
            let mut rows = geom_suite()?;
            rows.extend(grad_suite()?);
            rows.extend(sampler_suite()?);
            Ok(rows)
        }
        other => Err(crate::error::config_err(format!(
            "unknown check suite {other:?}; expected geom, grad, sampler, or all"
        ))),
    }
}

/// Truncated-series matrix exponential, the oracle for the closed-form
/// rotation exponential. Thirty terms put the truncation error far below
/// f64 resolution for arguments bounded by pi.
fn series_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let a = hat(w);
    let mut term = Matrix3::identity();
    let mut sum = Matrix3::identity();
    for k in 1..=30 {
        term = term * a / k as f64;
        sum += term;
    }
    sum
}

fn random_axis(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

fn geom_suite() -> CliResult<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6765_6f6d);
    let mut exp_err: f64 = 0.0;
    let mut roundtrip_err: f64 = 0.0;
    for _ in 0..1000 {
        // Angles span the log's whole principal domain, away from the branch
        // cut at pi.
        let angle = rng.gen_range(1e-6..std::f64::consts::PI - 1e-3);
        let w = random_axis(&mut rng) * angle;
        let r = so3_exp(&w);
        let oracle = series_exp(&w);
        for i in 0..3 {
            for j in 0..3 {
                exp_err = exp_err.max((r[(i, j)] - oracle[(i, j)]).abs());
            }
        }
        let back = so3_log(&r).map_err(|e| runtime_err(e.to_string()))?;
        roundtrip_err = roundtrip_err.max((back - w).norm());
    }
    Ok(vec![
        CheckRow { name: "so3_exp_vs_series_oracle".into(), value: exp_err, threshold: 1e-10 },
        CheckRow { name: "so3_exp_log_roundtrip".into(), value: roundtrip_err, threshold: 1e-9 },
    ])
}

/// Worst relative disagreement between the analytic gradient and a central
/// finite difference, over coordinates where the gradient is not vanishing.
fn gradient_gap(analytic: &[f64], fd: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, f) in analytic.iter().zip(fd) {
        if a.abs() > 1e-8 {
            worst = worst.max((a - f).abs() / a.abs());
        }
    }
    worst
}

fn random_chain(n: usize, rng: &mut ChaCha8Rng) -> FrameChain {
    FrameChain::new(
        (0..n)
            .map(|_| {
                Frame::new(
                    uniform_so3_sample(rng),
                    Vector3::new(
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-2.0..2.0),
                    ),
                )
            })
            .collect(),
    )
}

fn grad_suite() -> CliResult<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let path = PathConfig::default();
    let h = 1e-5;

    // Euclidean heads across depths and both activations, on the plain loss
    // and on a two-pass refinement loss (which exercises the stop-gradient).
    let configs = [
        ("euclid_silu_shallow", 2, vec![8], Activation::Silu),
        ("euclid_tanh_deep", 5, vec![10, 7], Activation::Tanh),
        ("euclid_silu_deep", 3, vec![6, 6, 6], Activation::Silu),
    ];
    for (name, dim, hidden, act) in configs {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
        let net = NetConfig {
            input_dim: dim,
            hidden,
            head: Head::Euclidean { dim },
            time_embed_dim: 4,
            activation: act,
        };
        let mut model = FlowModel::new(net, 11)?;
        for p in model.params.values.iter_mut() {
            *p += 0.05 * rng.sample::<f64, _>(StandardNormal);
        }
        let mut samples = Vec::new();
        for _ in 0..4 {
            let x0: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let x1: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let t = rng.gen_range(0.05..0.95);
            samples.push(sample_path(&x0, &x1, t, &path, &mut rng)?);
        }
        let (_, analytic) =
            loss_gradient(&model, |tape, tm| build_cfm_loss(tape, tm, &samples))?;
        let fd = finite_diff_gradient(&model, |tape, tm| build_cfm_loss(tape, tm, &samples), h)?;
        rows.push(CheckRow {
            name: format!("grad_cfm_{name}"),
            value: gradient_gap(&analytic, &fd),
            threshold: 1e-4,
        });

        // Two-pass refinement loss. Its gradient treats every pass input as
        // a constant, so the finite-difference side must freeze those inputs
        // at the current parameters: the frozen objective is the mean of
        // single-pass losses seeded with each recorded pass input.
        let k = 2;
        let seeds = refinement_seeds(&model, &samples, 0.0, &mut rng)?;
        let (_, analytic) = loss_gradient(&model, |tape, tm| {
            build_refinement_loss(tape, tm, &samples, &seeds, k, RefineTimeMode::SameT)
        })?;
        let mut pass_inputs = vec![seeds];
        for _ in 0..k {
            let prev = pass_inputs.last().unwrap();
            let next = samples
                .iter()
                .zip(prev)
                .map(|(s, x)| model.forward(x, s.t))
                .collect::<flowmap_core::Result<Vec<_>>>()?;
            pass_inputs.push(next);
        }
        let mut fd = vec![0.0; analytic.len()];
        for inputs in &pass_inputs {
            let g = finite_diff_gradient(
                &model,
                |tape, tm| {
                    build_refinement_loss(tape, tm, &samples, inputs, 0, RefineTimeMode::SameT)
                },
                h,
            )?;
            for (a, b) in fd.iter_mut().zip(g) {
                *a += b / pass_inputs.len() as f64;
            }
        }
        rows.push(CheckRow {
            name: format!("grad_refine_{name}"),
            value: gradient_gap(&analytic, &fd),
            threshold: 1e-4,
        });
    }

    // Frame heads, same two losses.
    let configs = [
        ("se3_silu", 3usize, vec![12], Activation::Silu),
        ("se3_tanh_deep", 2, vec![8, 6], Activation::Tanh),
    ];
    for (name, frames, hidden, act) in configs {
        let mut rng = ChaCha8Rng::seed_from_u64(0x7365_3367);
        let net = NetConfig {
            input_dim: 12 * frames,
            hidden,
            head: Head::Se3 { frames },
            time_embed_dim: 4,
            activation: act,
        };
        let mut model = FlowModel::new(net, 13)?;
        for p in model.params.values.iter_mut() {
            *p += 0.05 * rng.sample::<f64, _>(StandardNormal);
        }
        let mut samples = Vec::new();
        for _ in 0..3 {
            let c0 = random_chain(frames, &mut rng);
            let c1 = random_chain(frames, &mut rng);
            let t = rng.gen_range(0.05..0.95);
            samples.push(sample_frame_path(&c0, &c1, t, &path, &mut rng)?);
        }
        let (_, analytic) =
            loss_gradient(&model, |tape, tm| build_se3_cfm_loss(tape, tm, &samples))?;
        let fd =
            finite_diff_gradient(&model, |tape, tm| build_se3_cfm_loss(tape, tm, &samples), h)?;
        rows.push(CheckRow {
            name: format!("grad_cfm_{name}"),
            value: gradient_gap(&analytic, &fd),
            threshold: 1e-4,
        });

        // Same frozen-input treatment as the Euclidean refinement rows.
        let k = 2;
        let seeds = frame_refinement_seeds(&model, &samples, 0.0, &mut rng)?;
        let (_, analytic) = loss_gradient(&model, |tape, tm| {
            build_se3_refinement_loss(tape, tm, &samples, &seeds, k, RefineTimeMode::SameT)
        })?;
        let mut pass_inputs = vec![seeds];
        for _ in 0..k {
            let prev = pass_inputs.last().unwrap();
            let next = samples
                .iter()
                .zip(prev)
                .map(|(s, c)| model.predict_chain(c, s.t))
                .collect::<flowmap_core::Result<Vec<_>>>()?;
            pass_inputs.push(next);
        }
        let mut fd = vec![0.0; analytic.len()];
        for inputs in &pass_inputs {
            let g = finite_diff_gradient(
                &model,
                |tape, tm| {
                    build_se3_refinement_loss(tape, tm, &samples, inputs, 0, RefineTimeMode::SameT)
                },
                h,
            )?;
            for (a, b) in fd.iter_mut().zip(g) {
                *a += b / pass_inputs.len() as f64;
            }
        }
        rows.push(CheckRow {
            name: format!("grad_refine_{name}"),
            value: gradient_gap(&analytic, &fd),
            threshold: 1e-4,
        });
    }
    Ok(rows)
}

fn sampler_suite() -> CliResult<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7361_6d70);
    let dim = 3;
    let target = vec![1.5, -0.75, 2.0];
    let constant = {
        let target = target.clone();
        FnFlowMap { dim, f: move |_x: &[f64], _t: f64| target.clone() }
    };

    let mut completion_err: f64 = 0.0;
    let mut euler_err: f64 = 0.0;
    let mut nfe_violations = 0usize;
    for steps in [2usize, 10, 100] {
        for refinements in [0usize, 1, 2] {
            for _ in 0..3 {
                let x0: Vec<f64> = (0..dim).map(|_| rng.gen_range(-4.0..4.0)).collect();
                for final_completion in [true, false] {
                    let cfg = SampleConfig {
                        steps,
                        refinements,
                        final_completion,
                        record_energy: false,
                        refine_time: RefineTime::Current,
                        n_samples: 1,
                    };
                    let out = sampler::predictor_refiner_sample(&constant, &x0, &cfg)?;
                    if out.nfe != (steps - 1) * (1 + refinements) {
                        nfe_violations += 1;
                    }
                    for (i, v) in out.final_state.iter().enumerate() {
                        // A constant-prediction field contracts the offset
                        // from the target by exactly 1/steps per full pass;
                        // completion lands on the target itself.
                        let expected = if final_completion {
                            target[i]
                        } else {
                            target[i] + (x0[i] - target[i]) / steps as f64
                        };
                        let err = (v - expected).abs();
                        if final_completion {
                            completion_err = completion_err.max(err);
                        } else {
                            euler_err = euler_err.max(err);
                        }
                    }
                }
            }
        }
    }

    // An exact endpoint predictor on the linear path must report the
    // constant velocity x1 - x0 everywhere.
    let mut field_err: f64 = 0.0;
    for _ in 0..200 {
        let x0: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x1: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let t = rng.gen_range(0.0..0.999);
        let x_t: Vec<f64> =
            x0.iter().zip(&x1).map(|(a, b)| t * b + (1.0 - t) * a).collect();
        let exact = {
            let x1 = x1.clone();
            FnFlowMap { dim, f: move |_x: &[f64], _t: f64| x1.clone() }
        };
        let v = vector_field(&exact, &x_t, t)?;
        for i in 0..dim {
            field_err = field_err.max((v[i] - (x1[i] - x0[i])).abs());
        }
    }

    Ok(vec![
        CheckRow {
            name: "sampler_constant_field_completion".into(),
            value: completion_err,
            threshold: 1e-12,
        },
        CheckRow {
            name: "sampler_constant_field_euler".into(),
            value: euler_err,
            threshold: 1e-12,
        },
        CheckRow {
            name: "sampler_nfe_contract_violations".into(),
            value: nfe_violations as f64,
            threshold: 0.5,
        },
        CheckRow {
            name: "vector_field_linear_identity".into(),
            value: field_err,
            threshold: 1e-12,
        },
    ])
}
