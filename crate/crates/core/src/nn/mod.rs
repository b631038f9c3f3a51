//! Dense x1-prediction networks in f64, with exact reverse-mode gradients.
//!
//! A [`FlowModel`] maps a flattened state plus a sinusoidal time embedding
//! through a small MLP. The Euclidean head emits the predicted endpoint
//! directly; the SE(3) head emits one `(s_update, b, c, d)` block per residue
//! which [`FlowModel::predict_chain`] turns into rigid-frame updates of the
//! input chain. Gradients come from a tape ([`tape::Tape`]) that replays the
//! same accumulation order every run, and can be cross-checked against
//! central finite differences via [`finite_diff_gradient`].

pub mod checkpoint;
pub mod tape;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};
use crate::geometry::{frame_update, FrameChain};
use nalgebra::Vector3;
use tape::{Tape, Val};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
    Tanh,
}

/// Output head. `Euclidean` predicts a flat endpoint of the given dimension;
/// `Se3` predicts per-residue local updates for a chain of `frames` residues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    Euclidean { dim: usize },
    Se3 { frames: usize },
}

fn default_embed_dim() -> usize {
    8
}

fn default_activation() -> Activation {
    Activation::Silu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Flattened state dimension (excluding the time embedding).
    pub input_dim: usize,
    /// Hidden layer widths; must be non-empty.
    pub hidden: Vec<usize>,
    pub head: Head,
    #[serde(default = "default_embed_dim")]
    pub time_embed_dim: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

impl NetConfig {
    pub fn output_dim(&self) -> usize {
        match self.head {
            Head::Euclidean { dim } => dim,
            Head::Se3 { frames } => frames * 6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(invalid("net.input_dim must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            return Err(invalid("net.hidden must be a non-empty list of positive widths"));
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return Err(invalid("net.time_embed_dim must be even and at least 2"));
        }
        match self.head {
            Head::Euclidean { dim } if dim == 0 => {
                return Err(invalid("net.head.dim must be positive"))
            }
            Head::Se3 { frames } => {
                if frames == 0 {
                    return Err(invalid("net.head.frames must be positive"));
                }
                if self.input_dim != frames * 12 {
                    return Err(invalid(format!(
                        "net.input_dim = {} does not match 12 * frames = {}",
                        self.input_dim,
                        frames * 12
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Per-layer `(rows, cols)`, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim + self.time_embed_dim;
        for &h in &self.hidden {
            shapes.push((h, prev));
            prev = h;
        }
        shapes.push((self.output_dim(), prev));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * (c + 1)).sum()
    }
}

/// Flat f64 parameters plus the layer shapes that index into them. Within a
/// layer the row-major weight block precedes the bias block.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Vec<(usize, usize)>,
}

impl ParamVector {
    pub fn zeros(config: &NetConfig) -> Self {
        ParamVector {
            values: vec![0.0; config.param_count()],
            layout: config.layer_shapes(),
        }
    }

    /// Kaiming-uniform weights on hidden layers, zero biases, and an all-zero
    /// output layer so a fresh model is the zero (resp. identity) map.
    pub fn init(config: &NetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = config.layer_shapes();
        let mut values = Vec::with_capacity(config.param_count());
        let last = layout.len() - 1;
        for (li, &(rows, cols)) in layout.iter().enumerate() {
            if li == last {
                values.extend(std::iter::repeat(0.0).take(rows * (cols + 1)));
            } else {
                let bound = (6.0 / cols as f64).sqrt();
                values.extend((0..rows * cols).map(|_| rng.gen_range(-bound..bound)));
                values.extend(std::iter::repeat(0.0).take(rows));
            }
        }
        ParamVector { values, layout }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(w_offset, b_offset)` of layer `li`.
    pub fn offsets(&self, li: usize) -> (usize, usize) {
        let mut off = 0;
        for &(rows, cols) in &self.layout[..li] {
            off += rows * (cols + 1);
        }
        (off, off + self.layout[li].0 * self.layout[li].1)
    }
}

/// Sinusoidal embedding `[sin(2^j pi t), cos(2^j pi t)]` for `j = 0..dim/2`.
/// The lowest pair is injective on [0, 1] by itself, so grids never collide.
pub fn time_embed(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim < 2 || dim % 2 != 0 {
        return Err(invalid(format!("time_embed: dim = {dim} must be even and >= 2")));
    }
    let mut out = Vec::with_capacity(dim);
    let mut freq = std::f64::consts::PI;
    for _ in 0..dim / 2 {
        out.push((freq * t).sin());
        out.push((freq * t).cos());
        freq *= 2.0;
    }
    Ok(out)
}

/// Flattens a chain to net input features: per residue the nine rotation
/// entries (row-major) then the translation.
pub fn chain_features(chain: &FrameChain) -> Vec<f64> {
    let mut out = Vec::with_capacity(chain.len() * 12);
    for f in &chain.frames {
        for row in 0..3 {
            for col in 0..3 {
                out.push(f.rot[(row, col)]);
            }
        }
        out.extend_from_slice(f.trans.as_slice());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pub config: NetConfig,
    pub params: ParamVector,
}

impl FlowModel {
    /// Validates the config and initializes parameters from the seed.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ParamVector::init(&config, seed);
        Ok(FlowModel { config, params })
    }

    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let params = ParamVector::zeros(&config);
        Ok(FlowModel { config, params })
    }

    fn check_input(&self, x: &[f64], t: f64) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(invalid(format!(
                "forward: input length {} does not match input_dim {}",
                x.len(),
                self.config.input_dim
            )));
        }
        if !(0.0..=1.0).contains(&t) || !t.is_finite() {
            return Err(invalid(format!("forward: t = {t} outside [0, 1]")));
        }
        Ok(())
    }

    /// Raw head output for one state. Euclidean head: the predicted endpoint.
    /// SE(3) head: per-residue `(s_update, b, c, d)` blocks, in residue order.
    pub fn forward(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_input(x, t)?;
        let embed = time_embed(t, self.config.time_embed_dim)?;
        let mut act: Vec<f64> = x.iter().copied().chain(embed).collect();
        let last = self.params.layout.len() - 1;
        for li in 0..=last {
            let (rows, cols) = self.params.layout[li];
            let (w_off, b_off) = self.params.offsets(li);
            let p = &self.params.values;
            let mut next = vec![0.0; rows];
            for i in 0..rows {
                let mut acc = p[b_off + i];
                let row = &p[w_off + i * cols..w_off + (i + 1) * cols];
                for (j, xj) in act.iter().enumerate() {
                    acc += row[j] * xj;
                }
                next[i] = acc;
            }
            if li != last {
                match self.config.activation {
                    Activation::Silu => next.iter_mut().for_each(|v| *v = tape::silu(*v)),
                    Activation::Tanh => next.iter_mut().for_each(|v| *v = v.tanh()),
                }
            }
            act = next;
        }
        Ok(act)
    }

    /// Forward over a batch; identical to mapping [`FlowModel::forward`].
    pub fn forward_batch(&self, xs: &[Vec<f64>], ts: &[f64]) -> Result<Vec<Vec<f64>>> {
        if xs.len() != ts.len() {
            return Err(invalid("forward_batch: xs and ts lengths differ"));
        }
        xs.iter().zip(ts).map(|(x, &t)| self.forward(x, t)).collect()
    }

    /// Applies the SE(3) head to a chain: predicts local updates and composes
    /// them onto the input frames. With a zero output layer this is exactly
    /// the identity on the chain.
    pub fn predict_chain(&self, chain: &FrameChain, t: f64) -> Result<FrameChain> {
        let frames = match self.config.head {
            Head::Se3 { frames } => frames,
            Head::Euclidean { .. } => {
                return Err(invalid("predict_chain: model has a Euclidean head"))
            }
        };
        if chain.len() != frames {
            return Err(invalid(format!(
                "predict_chain: chain length {} does not match head frames {}",
                chain.len(),
                frames
            )));
        }
        let out = self.forward(&chain_features(chain), t)?;
        let mut frames_out = Vec::with_capacity(frames);
        for (i, f) in chain.frames.iter().enumerate() {
            let s = &out[6 * i..6 * i + 3];
            let q = &out[6 * i + 3..6 * i + 6];
            frames_out.push(frame_update(
                f,
                &Vector3::new(s[0], s[1], s[2]),
                &Vector3::new(q[0], q[1], q[2]),
            ));
        }
        Ok(FrameChain::new(frames_out))
    }
}

/// Handle passed to loss builders: the model's parameters as a tape leaf plus
/// a taped forward that mirrors [`FlowModel::forward`] op for op.
pub struct TapedModel<'m> {
    model: &'m FlowModel,
    params: Val,
}

impl<'m> TapedModel<'m> {
    pub fn params(&self) -> Val {
        self.params
    }

    pub fn config(&self) -> &NetConfig {
        &self.model.config
    }

    /// Taped forward pass. `x` may be a leaf, a constant, or any interior
    /// node; `t` is conditioning only and never differentiated.
    pub fn forward(&self, tape: &mut Tape, x: Val, t: f64) -> Result<Val> {
        let cfg = &self.model.config;
        if tape.value(x).len() != cfg.input_dim {
            return Err(invalid(format!(
                "taped forward: input length {} does not match input_dim {}",
                tape.value(x).len(),
                cfg.input_dim
            )));
        }
        if !(0.0..=1.0).contains(&t) || !t.is_finite() {
            return Err(invalid(format!("taped forward: t = {t} outside [0, 1]")));
        }
        let embed = tape.constant(time_embed(t, cfg.time_embed_dim)?);
        let mut act = tape.concat(&[x, embed]);
        let last = self.model.params.layout.len() - 1;
        for li in 0..=last {
            let (rows, cols) = self.model.params.layout[li];
            let (w_off, b_off) = self.model.params.offsets(li);
            act = tape.affine(self.params, w_off, b_off, rows, cols, act);
            if li != last {
                act = match cfg.activation {
                    Activation::Silu => tape.silu(act),
                    Activation::Tanh => tape.tanh(act),
                };
            }
        }
        Ok(act)
    }
}

/// Builds the loss with the model's parameters as the only differentiable
/// leaf and returns `(loss value, d loss / d params)` from one reverse pass.
pub fn loss_gradient<F>(model: &FlowModel, build: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape, &TapedModel) -> Result<Val>,
{
    let mut tape = Tape::new();
    let params = tape.leaf(model.params.values.clone());
    let taped = TapedModel { model, params };
    let loss = build(&mut tape, &taped)?;
    if tape.value(loss).len() != 1 {
        return Err(invalid(format!(
            "loss_gradient: loss must be scalar, got length {}",
            tape.value(loss).len()
        )));
    }
    let value = tape.value(loss)[0];
    if !value.is_finite() {
        return Err(CoreError::Numeric(format!("loss_gradient: loss is {value}")));
    }
    let grads = tape.backward(loss)?;
    Ok((value, grads.of(params).to_vec()))
}

/// Central-difference gradient of the same loss builder; the oracle companion
/// to [`loss_gradient`]. Evaluates the loss value only, so it is independent
/// of the backward pass it checks.
pub fn finite_diff_gradient<F>(model: &FlowModel, build: F, h: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, &TapedModel) -> Result<Val>,
{
    if h <= 0.0 {
        return Err(invalid("finite_diff_gradient: h must be positive"));
    }
    let eval = |m: &FlowModel| -> Result<f64> {
        let mut tape = Tape::new();
        let params = tape.constant(m.params.values.clone());
        let taped = TapedModel { model: m, params };
        let loss = build(&mut tape, &taped)?;
        if tape.value(loss).len() != 1 {
            return Err(invalid("finite_diff_gradient: loss must be scalar"));
        }
        Ok(tape.value(loss)[0])
    };
    let mut work = model.clone();
    let mut grad = vec![0.0; model.params.len()];
    for i in 0..model.params.len() {
        let orig = model.params.values[i];
        work.params.values[i] = orig + h;
        let hi = eval(&work)?;
        work.params.values[i] = orig - h;
        let lo = eval(&work)?;
        work.params.values[i] = orig;
        grad[i] = (hi - lo) / (2.0 * h);
    }
    Ok(grad)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        AdamParams { lr, ..Default::default() }
    }
}

/// First/second moment buffers plus the step counter for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    hp: &AdamParams,
) -> Result<()> {
    if params.len() != grad.len() || params.len() != state.m.len() {
        return Err(invalid(format!(
            "adam_step: size mismatch (params {}, grad {}, state {})",
            params.len(),
            grad.len(),
            state.m.len()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(CoreError::Numeric("adam_step: non-finite gradient".into()));
    }
    state.step += 1;
    let bc1 = 1.0 - hp.beta1.powi(state.step as i32);
    let bc2 = 1.0 - hp.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * grad[i];
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}

/// Anything that predicts a Euclidean endpoint from `(x, t)`. Samplers and
/// energies are generic over this so tests can plug in closed-form oracles.
pub trait FlowMap {
    fn dim(&self) -> usize;
    fn predict(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;
}

/// Chain-valued counterpart of [`FlowMap`].
pub trait FrameFlowMap {
    fn chain_len(&self) -> usize;
    fn predict_chain(&self, chain: &FrameChain, t: f64) -> Result<FrameChain>;
}

impl FlowMap for FlowModel {
    fn dim(&self) -> usize {
        self.config.input_dim
    }

    fn predict(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        match self.config.head {
            Head::Euclidean { .. } => self.forward(x, t),
            Head::Se3 { .. } => Err(invalid("predict: model has an SE(3) head; use predict_chain")),
        }
    }
}

impl FrameFlowMap for FlowModel {
    fn chain_len(&self) -> usize {
        match self.config.head {
            Head::Se3 { frames } => frames,
            Head::Euclidean { .. } => 0,
        }
    }

    fn predict_chain(&self, chain: &FrameChain, t: f64) -> Result<FrameChain> {
        FlowModel::predict_chain(self, chain, t)
    }
}

/// Closure-backed [`FlowMap`], mainly for closed-form oracles in tests and
/// self-checks.
pub struct FnFlowMap<F: Fn(&[f64], f64) -> Vec<f64>> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64], f64) -> Vec<f64>> FlowMap for FnFlowMap<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(invalid("FnFlowMap: input length mismatch"));
        }
        Ok((self.f)(x, t))
    }
}

/// Closure-backed [`FrameFlowMap`].
pub struct FnFrameFlowMap<F: Fn(&FrameChain, f64) -> FrameChain> {
    pub chain_len: usize,
    pub f: F,
}

impl<F: Fn(&FrameChain, f64) -> FrameChain> FrameFlowMap for FnFrameFlowMap<F> {
    fn chain_len(&self) -> usize {
        self.chain_len
    }

    fn predict_chain(&self, chain: &FrameChain, t: f64) -> Result<FrameChain> {
        if chain.len() != self.chain_len {
            return Err(invalid("FnFrameFlowMap: chain length mismatch"));
        }
        Ok((self.f)(chain, t))
    }
}
