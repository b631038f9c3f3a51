//! Conditional paths and losses on chains of rigid frames.
//!
//! Rotations move along the geodesic between endpoints with no noise;
//! translations follow the same Gaussian path as the Euclidean case. The loss
//! per frame is squared translation error plus squared geodesic rotation
//! angle, recovered from the trace of `r_pred^T r_target` through a clamped
//! arccos so it stays differentiable at aligned and opposed rotations.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::geometry::{se3_interpolant, Frame, FrameChain};
use crate::nn::tape::{Tape, Val};
use crate::nn::{
    adam_step, chain_features, loss_gradient, AdamParams, AdamState, FlowModel, Head, TapedModel,
};

use super::{
    refine_t, Branch, PathConfig, RefineTimeMode, StepRecord, TrainConfig,
};

/// Clamp margin for the rotation-angle arccos.
pub const ROT_COS_CLAMP: f64 = 1e-9;

/// One draw from the conditional path over frame chains.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePathSample {
    pub chain0: FrameChain,
    pub chain1: FrameChain,
    pub t: f64,
    pub chain_t: FrameChain,
}

/// Interpolates each frame (rotation geodesic, translation lerp) and adds
/// Gaussian noise of scale `sigma_t` to the translations only.
pub fn sample_frame_path(
    chain0: &FrameChain,
    chain1: &FrameChain,
    t: f64,
    cfg: &PathConfig,
    rng: &mut ChaCha8Rng,
) -> Result<FramePathSample> {
    if chain0.len() != chain1.len() || chain0.len() == 0 {
        return Err(invalid(format!(
            "sample_frame_path: chain lengths differ or are zero ({} vs {})",
            chain0.len(),
            chain1.len()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid(format!("sample_frame_path: t = {t} outside [0, 1]")));
    }
    cfg.validate()?;
    let sigma = cfg.sigma.sigma_at(t);
    let mut frames = Vec::with_capacity(chain0.len());
    for (f0, f1) in chain0.frames.iter().zip(&chain1.frames) {
        let mut f = se3_interpolant(f0, f1, t)?;
        for i in 0..3 {
            f.trans[i] += sigma * rng.sample::<f64, _>(StandardNormal);
        }
        frames.push(f);
    }
    Ok(FramePathSample {
        chain0: chain0.clone(),
        chain1: chain1.clone(),
        t,
        chain_t: FrameChain::new(frames),
    })
}

/// Squared translation error plus squared rotation angle for one frame pair.
/// Must stay in lockstep with the taped version in [`build_se3_cfm_loss`].
fn frame_error(pred: &Frame, target: &Frame) -> f64 {
    let mut tsum = 0.0;
    for i in 0..3 {
        let d = pred.trans[i] - target.trans[i];
        tsum += d * d;
    }
    let mut tr = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            tr += pred.rot[(i, j)] * target.rot[(i, j)];
        }
    }
    let cos = (tr - 1.0) * 0.5;
    let theta = cos.clamp(-1.0 + ROT_COS_CLAMP, 1.0 - ROT_COS_CLAMP).acos();
    tsum + theta * theta
}

fn chain_error(pred: &FrameChain, target: &FrameChain) -> f64 {
    let mut acc = 0.0;
    for (p, g) in pred.frames.iter().zip(&target.frames) {
        acc += frame_error(p, g);
    }
    acc
}

/// Mean over the batch of the summed per-frame error of the prediction from
/// `chain_t` against `chain1`.
pub fn se3_cfm_loss(model: &FlowModel, samples: &[FramePathSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid("se3_cfm_loss: empty batch"));
    }
    let mut acc = 0.0;
    for s in samples {
        let pred = model.predict_chain(&s.chain_t, s.t)?;
        acc += chain_error(&pred, &s.chain1);
    }
    Ok(acc * (1.0 / samples.len() as f64))
}

/// Quaternion products -> rotation matrix entries, row-major. Columns follow
/// the product order `[aa bb cc dd ab ac ad bc bd cd]`; coefficients are
/// arranged so the accumulation reproduces `quat_to_matrix` exactly.
#[rustfmt::skip]
const QUAT_PRODUCT_MATRIX: [f64; 90] = [
    // aa   bb    cc    dd    ab    ac    ad    bc    bd    cd
    1.0,  1.0, -1.0, -1.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,
    0.0,  0.0,  0.0,  0.0,  0.0,  0.0, -2.0,  2.0,  0.0,  0.0,
    0.0,  0.0,  0.0,  0.0,  0.0,  2.0,  0.0,  0.0,  2.0,  0.0,
    0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  2.0,  2.0,  0.0,  0.0,
    1.0, -1.0,  1.0, -1.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,
    0.0,  0.0,  0.0,  0.0, -2.0,  0.0,  0.0,  0.0,  0.0,  2.0,
    0.0,  0.0,  0.0,  0.0,  0.0, -2.0,  0.0,  0.0,  2.0,  0.0,
    0.0,  0.0,  0.0,  0.0,  2.0,  0.0,  0.0,  0.0,  0.0,  2.0,
    1.0, -1.0, -1.0,  1.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,
];

/// Taped twin of `geometry::frame_update` for a constant input frame:
/// returns the updated rotation (row-major, 9) and translation (3) as tape
/// nodes. Matches the plain version value for value.
fn taped_frame_update(
    tape: &mut Tape,
    frame: &Frame,
    s_up: Val,
    bcd: Val,
) -> (Val, Val) {
    let sq = tape.square(bcd);
    let ssum = tape.sum(sq);
    let one = tape.constant(vec![1.0]);
    let sum1 = tape.add(ssum, one);
    let nrm = tape.sqrt(sum1);
    let a = tape.recip(nrm);
    let qbcd = tape.scale_by(bcd, a);
    let qb = tape.slice(qbcd, 0, 1);
    let qc = tape.slice(qbcd, 1, 1);
    let qd = tape.slice(qbcd, 2, 1);
    let products = [
        tape.mul(a, a),
        tape.mul(qb, qb),
        tape.mul(qc, qc),
        tape.mul(qd, qd),
        tape.mul(a, qb),
        tape.mul(a, qc),
        tape.mul(a, qd),
        tape.mul(qb, qc),
        tape.mul(qb, qd),
        tape.mul(qc, qd),
    ];
    let p = tape.concat(&products);
    let r_up = tape.matvec_const(QUAT_PRODUCT_MATRIX.to_vec(), 9, p);

    // Left-multiply by the constant input rotation: entry (i, j) of the
    // result reads r_up at (k, j) with weight rot[(i, k)].
    let mut compose = vec![0.0; 81];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                compose[(3 * i + j) * 9 + (3 * k + j)] = frame.rot[(i, k)];
            }
        }
    }
    let rot = tape.matvec_const(compose, 9, r_up);

    let mut rot_in = vec![0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            rot_in[3 * i + j] = frame.rot[(i, j)];
        }
    }
    let moved = tape.matvec_const(rot_in, 3, s_up);
    let trans_in = tape.constant(frame.trans.as_slice().to_vec());
    let trans = tape.add(moved, trans_in);
    (rot, trans)
}

/// Taped twin of [`FlowModel::predict_chain`] for a constant input chain.
/// Returns one (rotation, translation) node pair per frame.
pub fn taped_predict_chain(
    tape: &mut Tape,
    tm: &TapedModel,
    chain: &FrameChain,
    t: f64,
) -> Result<Vec<(Val, Val)>> {
    let frames = match tm.config().head {
        Head::Se3 { frames } => frames,
        Head::Euclidean { .. } => {
            return Err(invalid("taped_predict_chain: model has a Euclidean head"))
        }
    };
    if chain.len() != frames {
        return Err(invalid(format!(
            "taped_predict_chain: chain length {} does not match head frames {}",
            chain.len(),
            frames
        )));
    }
    let feats = tape.constant(chain_features(chain));
    let out = tm.forward(tape, feats, t)?;
    let mut result = Vec::with_capacity(frames);
    for (i, f) in chain.frames.iter().enumerate() {
        let s_up = tape.slice(out, 6 * i, 3);
        let bcd = tape.slice(out, 6 * i + 3, 3);
        result.push(taped_frame_update(tape, f, s_up, bcd));
    }
    Ok(result)
}

fn frame_rot_rowmajor(f: &Frame) -> Vec<f64> {
    let mut v = Vec::with_capacity(9);
    for i in 0..3 {
        for j in 0..3 {
            v.push(f.rot[(i, j)]);
        }
    }
    v
}

/// Taped error of predicted frame nodes against a constant target chain.
fn build_chain_error(
    tape: &mut Tape,
    preds: &[(Val, Val)],
    target: &FrameChain,
) -> Val {
    let mut item: Option<Val> = None;
    for ((rot, trans), tf) in preds.iter().zip(&target.frames) {
        let t_const = tape.constant(tf.trans.as_slice().to_vec());
        let diff = tape.sub(*trans, t_const);
        let sq = tape.square(diff);
        let tsum = tape.sum(sq);
        let r_const = tape.constant(frame_rot_rowmajor(tf));
        let tr = tape.dot(*rot, r_const);
        let one = tape.constant(vec![1.0]);
        let shifted = tape.sub(tr, one);
        let cos = tape.scale(shifted, 0.5);
        let theta = tape.acos_clamp(cos, ROT_COS_CLAMP);
        let theta2 = tape.square(theta);
        let fe = tape.add(tsum, theta2);
        item = Some(match item {
            None => fe,
            Some(acc) => tape.add(acc, fe),
        });
    }
    item.expect("chain has at least one frame")
}

/// Taped twin of [`se3_cfm_loss`]; bit-identical value, differentiable.
pub fn build_se3_cfm_loss(
    tape: &mut Tape,
    tm: &TapedModel,
    samples: &[FramePathSample],
) -> Result<Val> {
    if samples.is_empty() {
        return Err(invalid("se3_cfm_loss: empty batch"));
    }
    let mut total: Option<Val> = None;
    for s in samples {
        let preds = taped_predict_chain(tape, tm, &s.chain_t, s.t)?;
        let item = build_chain_error(tape, &preds, &s.chain1);
        total = Some(match total {
            None => item,
            Some(acc) => tape.add(acc, item),
        });
    }
    Ok(tape.scale(total.unwrap(), 1.0 / samples.len() as f64))
}

/// Gradient-free seed predictions for the frame refinement loss. Optional
/// noise perturbs translations only; rotations stay on the manifold.
pub fn frame_refinement_seeds(
    model: &FlowModel,
    samples: &[FramePathSample],
    noise_std: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<FrameChain>> {
    let mut seeds = Vec::with_capacity(samples.len());
    for s in samples {
        let mut pred = model.predict_chain(&s.chain_t, s.t)?;
        if noise_std > 0.0 {
            for f in pred.frames.iter_mut() {
                for i in 0..3 {
                    f.trans[i] += noise_std * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        seeds.push(pred);
    }
    Ok(seeds)
}

/// Value of the frame refinement loss: `k + 1` passes from the seed chain,
/// inputs detached each round, averaging the per-pass chain errors.
pub fn se3_refinement_loss(
    model: &FlowModel,
    samples: &[FramePathSample],
    seeds: &[FrameChain],
    k: usize,
    mode: RefineTimeMode,
) -> Result<f64> {
    if samples.is_empty() || samples.len() != seeds.len() {
        return Err(invalid("se3_refinement_loss: batch and seeds must match and be non-empty"));
    }
    let mut acc = 0.0;
    for (s, seed) in samples.iter().zip(seeds) {
        let tr = refine_t(mode, s.t);
        let mut current = seed.clone();
        let mut item = 0.0;
        for _ in 0..=k {
            current = model.predict_chain(&current, tr)?;
            item += chain_error(&current, &s.chain1);
        }
        acc += item * (1.0 / (k + 1) as f64);
    }
    Ok(acc * (1.0 / samples.len() as f64))
}

/// Taped twin of [`se3_refinement_loss`]. Pass inputs re-enter as constants,
/// which is the stop-gradient.
pub fn build_se3_refinement_loss(
    tape: &mut Tape,
    tm: &TapedModel,
    samples: &[FramePathSample],
    seeds: &[FrameChain],
    k: usize,
    mode: RefineTimeMode,
) -> Result<Val> {
    if samples.is_empty() || samples.len() != seeds.len() {
        return Err(invalid("se3_refinement_loss: batch and seeds must match and be non-empty"));
    }
    let mut total: Option<Val> = None;
    for (s, seed) in samples.iter().zip(seeds) {
        let tr = refine_t(mode, s.t);
        let mut current = seed.clone();
        let mut item: Option<Val> = None;
        for pass in 0..=k {
            let preds = taped_predict_chain(tape, tm, &current, tr)?;
            let err = build_chain_error(tape, &preds, &s.chain1);
            item = Some(match item {
                None => err,
                Some(acc) => tape.add(acc, err),
            });
            if pass < k {
                let frames = preds
                    .iter()
                    .map(|(rot, trans)| {
                        let r = tape.value(*rot);
                        let t = tape.value(*trans);
                        Frame::new(
                            Matrix3::new(
                                r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8],
                            ),
                            Vector3::new(t[0], t[1], t[2]),
                        )
                    })
                    .collect();
                current = FrameChain::new(frames);
            }
        }
        let item = tape.scale(item.unwrap(), 1.0 / (k + 1) as f64);
        total = Some(match total {
            None => item,
            Some(acc) => tape.add(acc, item),
        });
    }
    Ok(tape.scale(total.unwrap(), 1.0 / samples.len() as f64))
}

/// One training step on a batch of chain pairs; mirrors the Euclidean
/// `train_step` including the rng draw order.
pub fn train_step_frames(
    model: &mut FlowModel,
    opt: &mut AdamState,
    hp: &AdamParams,
    chain0s: &[FrameChain],
    chain1s: &[FrameChain],
    path: &PathConfig,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Branch, usize)> {
    if chain0s.len() != chain1s.len() || chain0s.is_empty() {
        return Err(invalid("train_step_frames: batches must match and be non-empty"));
    }
    cfg.validate()?;
    let mut samples = Vec::with_capacity(chain0s.len());
    for (c0, c1) in chain0s.iter().zip(chain1s) {
        let t: f64 = rng.gen();
        samples.push(sample_frame_path(c0, c1, t, path, rng)?);
    }
    let m: f64 = rng.gen();
    let (loss, grad, branch, k) = if m <= cfg.refine_branch_prob {
        let k = rng.gen_range(1..=cfg.k_max);
        let seeds = frame_refinement_seeds(model, &samples, cfg.refine_noise_std, rng)?;
        let (loss, grad) = loss_gradient(model, |tape, tm| {
            build_se3_refinement_loss(tape, tm, &samples, &seeds, k, cfg.refine_time_mode)
        })?;
        (loss, grad, Branch::Refine, k)
    } else {
        let (loss, grad) =
            loss_gradient(model, |tape, tm| build_se3_cfm_loss(tape, tm, &samples))?;
        (loss, grad, Branch::Cfm, 0)
    };
    adam_step(&mut model.params.values, &grad, opt, hp)?;
    Ok((loss, branch, k))
}

/// Runs [`train_step_frames`] for `cfg.steps` steps over drawn chain batches.
pub fn train_frames<D>(
    model: &mut FlowModel,
    path: &PathConfig,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut draw: D,
) -> Result<Vec<StepRecord>>
where
    D: FnMut(&mut ChaCha8Rng, usize) -> Result<(Vec<FrameChain>, Vec<FrameChain>)>,
{
    cfg.validate()?;
    let hp = AdamParams::with_lr(cfg.lr);
    let mut opt = AdamState::new(model.params.len());
    let mut records = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (c0s, c1s) = draw(rng, cfg.batch_size)?;
        let (loss, branch, k) =
            train_step_frames(model, &mut opt, &hp, &c0s, &c1s, path, cfg, rng)?;
        records.push(StepRecord { step, loss, branch, k });
    }
    Ok(records)
}
