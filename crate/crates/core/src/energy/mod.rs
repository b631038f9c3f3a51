//! Energy functions evaluated on model predictions.
//!
//! A converged endpoint predictor is idempotent: feeding a prediction back
//! through the model should return it unchanged. The reconstruction energy
//! measures that displacement; low values flag states the model considers
//! finished. The other potentials score states directly against a reference
//! target or a set of reference distances.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{chain_squared_distance, FrameChain};
use crate::nn::{FlowMap, FrameFlowMap};

/// `||f(x, t) - x||^2`: squared displacement of `x` under one model pass.
pub fn reconstruction_energy<M: FlowMap + ?Sized>(model: &M, x: &[f64], t: f64) -> Result<f64> {
    let pred = model.predict(x, t)?;
    Ok(pred.iter().zip(x).map(|(p, xi)| (p - xi) * (p - xi)).sum())
}

/// `||f(f(x, t), t) - f(x, t)||`: how far the prediction moves under one more
/// pass. Zero exactly when the model is idempotent at `x`.
pub fn idempotency_residual<M: FlowMap + ?Sized>(model: &M, x: &[f64], t: f64) -> Result<f64> {
    let once = model.predict(x, t)?;
    let twice = model.predict(&once, t)?;
    Ok(twice
        .iter()
        .zip(&once)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Chain counterpart of [`idempotency_residual`] in the product metric.
pub fn chain_idempotency_residual<M: FrameFlowMap + ?Sized>(
    model: &M,
    chain: &FrameChain,
    t: f64,
) -> Result<f64> {
    let once = model.predict_chain(chain, t)?;
    let twice = model.predict_chain(&once, t)?;
    Ok(chain_squared_distance(&twice, &once)?.sqrt())
}

/// Gaussian negative log-likelihood of `x` around a known target, up to the
/// additive constant: `||x - x1||^2 / (2 sigma1^2)`.
pub fn nll_energy(x: &[f64], x1: &[f64], sigma1: f64) -> Result<f64> {
    if x.len() != x1.len() || x.is_empty() {
        return Err(invalid("nll_energy: shapes differ or are empty"));
    }
    if !(sigma1 > 0.0 && sigma1.is_finite()) {
        return Err(invalid(format!("nll_energy: sigma1 = {sigma1} must be finite and positive")));
    }
    let sq: f64 = x.iter().zip(x1).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sq / (2.0 * sigma1 * sigma1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Bond,
    Pocket,
}

impl PairKind {
    fn as_str(&self) -> &'static str {
        match self {
            PairKind::Bond => "bond",
            PairKind::Pocket => "pocket",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "bond" => Ok(PairKind::Bond),
            "pocket" => Ok(PairKind::Pocket),
            other => Err(invalid(format!("unknown pair kind {other:?}"))),
        }
    }
}

/// One reference distance between points `i` and `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistancePair {
    pub kind: PairKind,
    pub i: usize,
    pub j: usize,
    pub reference: f64,
}

/// A set of reference distances, typically bonds along a chain plus a few
/// long-range pocket contacts.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DistanceSpec {
    pub pairs: Vec<DistancePair>,
}

impl DistanceSpec {
    /// CSV with header `kind,i,j,reference_distance`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,i,j,reference_distance\n");
        for p in &self.pairs {
            out.push_str(&format!(
                "{},{},{},{:.16e}\n",
                p.kind.as_str(),
                p.i,
                p.j,
                p.reference
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "kind,i,j,reference_distance" => {}
            _ => return Err(invalid("distance spec: missing header kind,i,j,reference_distance")),
        }
        let mut pairs = Vec::new();
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != 4 {
                return Err(invalid(format!(
                    "distance spec line {}: expected 4 fields, found {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let kind = PairKind::parse(fields[0])?;
            let i: usize = fields[1]
                .parse()
                .map_err(|_| invalid(format!("distance spec line {}: bad index", lineno + 1)))?;
            let j: usize = fields[2]
                .parse()
                .map_err(|_| invalid(format!("distance spec line {}: bad index", lineno + 1)))?;
            let reference: f64 = fields[3].parse().map_err(|_| {
                invalid(format!("distance spec line {}: bad distance", lineno + 1))
            })?;
            pairs.push(DistancePair { kind, i, j, reference });
        }
        Ok(DistanceSpec { pairs })
    }

    pub fn validate(&self, n_points: usize) -> Result<()> {
        for p in &self.pairs {
            if p.i >= n_points || p.j >= n_points {
                return Err(invalid(format!(
                    "distance pair ({}, {}) out of range for {} points",
                    p.i, p.j, n_points
                )));
            }
            if p.i == p.j {
                return Err(invalid(format!("distance pair ({}, {}) is degenerate", p.i, p.j)));
            }
            if !(p.reference >= 0.0 && p.reference.is_finite()) {
                return Err(invalid(format!("reference distance {} invalid", p.reference)));
            }
        }
        Ok(())
    }
}

/// Sum over pairs of `|d_ij - reference|` (or its square) where `d_ij` is the
/// distance between points of the flat point-major array `[x0 y0 z0 x1 ...]`.
pub fn distance_potential(points: &[f64], spec: &DistanceSpec, squared: bool) -> Result<f64> {
    if points.len() % 3 != 0 || points.is_empty() {
        return Err(invalid("distance_potential: points must be a non-empty multiple of 3"));
    }
    let n = points.len() / 3;
    spec.validate(n)?;
    let mut acc = 0.0;
    for p in &spec.pairs {
        let mut d2 = 0.0;
        for a in 0..3 {
            let d = points[3 * p.i + a] - points[3 * p.j + a];
            d2 += d * d;
        }
        let gap = d2.sqrt() - p.reference;
        acc += if squared { gap * gap } else { gap.abs() };
    }
    Ok(acc)
}
