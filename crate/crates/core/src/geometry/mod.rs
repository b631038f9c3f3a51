//! Rigid-body geometry: SO(3) exp/log maps, geodesics, SE(3) frames, and
//! idealized backbone-atom placement.
//!
//! Conventions used throughout:
//!
//! * Rotations are 3x3 row-major matrices acting on column vectors from the
//!   left. Axis-angle vectors `w` satisfy `||w|| <= pi` (canonical range); the
//!   log map clamps `acos` arguments and switches to Taylor / near-pi branches
//!   close to the singular angles.
//! * A [`Frame`] is the pair `(r, s)` with `r` in SO(3) and `s` in R^3, acting
//!   as `p -> r p + s`. Composition `x * (r_u, s_u) = (r r_u, r s_u + s)`
//!   applies the update in the local frame.
//! * Small-angle branch below `1e-7` rad, near-pi branch within `1e-6` of pi.
//!   Both thresholds sit well above f64 noise and well below where the closed
//!   forms lose accuracy, so branch choice never costs more than ~1e-12.

mod table;

pub use table::{chains_from_table, chains_to_table};

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};

/// Max-abs tolerance on `R^T R - I` (and `det R - 1`) accepted by ops that
/// consume externally supplied rotations.
pub const ROTATION_TOL: f64 = 1e-6;

/// Below this angle (radians) exp/log switch to second-order Taylor forms.
pub const SMALL_ANGLE: f64 = 1e-7;

/// Within this distance of pi the log map extracts the axis from `R + I`.
pub const NEAR_PI: f64 = 1e-6;

/// Idealized backbone coordinates in the local residue frame (angstroms):
/// nitrogen, alpha-carbon (origin), carbonyl carbon, carbonyl oxygen.
pub const IDEAL_N: [f64; 3] = [-0.525, 1.363, 0.0];
pub const IDEAL_CA: [f64; 3] = [0.0, 0.0, 0.0];
pub const IDEAL_C: [f64; 3] = [1.526, 0.0, 0.0];
pub const IDEAL_O: [f64; 3] = [0.627, 1.062, 0.0];

/// Rigid transform `p -> rot * p + trans`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub rot: Matrix3<f64>,
    pub trans: Vector3<f64>,
}

impl Frame {
    pub fn new(rot: Matrix3<f64>, trans: Vector3<f64>) -> Self {
        Frame { rot, trans }
    }

    pub fn identity() -> Self {
        Frame { rot: Matrix3::identity(), trans: Vector3::zeros() }
    }
}

/// Ordered list of residue frames; index i is residue i.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameChain {
    pub frames: Vec<Frame>,
}

impl FrameChain {
    pub fn new(frames: Vec<Frame>) -> Self {
        FrameChain { frames }
    }

    pub fn identity(n: usize) -> Self {
        FrameChain { frames: vec![Frame::identity(); n] }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Serializes to the plain-text frame table (see [`table`]).
    pub fn to_table(&self) -> String {
        table::chain_to_table(self)
    }

    /// Parses a single-chain frame table, validating rotations at
    /// [`ROTATION_TOL`] and consecutive zero-based indices.
    pub fn from_table(text: &str) -> Result<Self> {
        table::chain_from_table(text)
    }
}

/// Backbone heavy atoms of one residue, in global coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneAtoms {
    pub n: Vector3<f64>,
    pub ca: Vector3<f64>,
    pub c: Vector3<f64>,
    pub o: Vector3<f64>,
}

/// Skew-symmetric matrix with `hat(w) v = w x v`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -w.z, w.y, //
        w.z, 0.0, -w.x, //
        -w.y, w.x, 0.0,
    )
}

/// Inverse of [`hat`] on exactly skew-symmetric input.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Checks `R^T R = I` and `det R = 1` to `tol` (max-abs entrywise).
pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    let gram = r.transpose() * r - Matrix3::identity();
    gram.iter().all(|v| v.abs() <= tol) && (r.determinant() - 1.0).abs() <= tol
}

fn require_rotation(r: &Matrix3<f64>, what: &str) -> Result<()> {
    if !is_rotation(r, ROTATION_TOL) {
        return Err(invalid(format!(
            "{what} is not a rotation matrix within tolerance {ROTATION_TOL:e}"
        )));
    }
    Ok(())
}

/// Exponential map of SO(3) (Rodrigues), with a second-order Taylor branch
/// below [`SMALL_ANGLE`].
pub fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = hat(w);
    if theta < SMALL_ANGLE {
        // I + hat(w) + hat(w)^2/2, exact to O(theta^3).
        Matrix3::identity() + k + k * k * 0.5
    } else {
        let e = w / theta;
        let (s, c) = theta.sin_cos();
        Matrix3::identity() * c + hat(&e) * s + e * e.transpose() * (1.0 - c)
    }
}

/// Logarithm map of SO(3): returns the canonical axis-angle vector with
/// `||w|| <= pi`.
///
/// Branches: `acos` of the clamped trace gives the angle; the axis comes from
/// the skew part for generic angles, from `(R - R^T)/2` directly below
/// [`SMALL_ANGLE`], and from the dominant column of `R + I` within [`NEAR_PI`]
/// of pi (where the skew part vanishes). At exactly pi the axis sign is
/// ambiguous; the first nonzero component is made positive so the result is
/// deterministic.
pub fn so3_log(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    require_rotation(r, "so3_log input")?;
    let cos_theta = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let skew = vee(&(r - r.transpose()));

    if theta < SMALL_ANGLE {
        return Ok(skew * 0.5);
    }
    if std::f64::consts::PI - theta < NEAR_PI {
        // R + I = 2 e e^T + O(pi - theta); its largest-diagonal column is the
        // best-conditioned multiple of the axis.
        let b = r + Matrix3::identity();
        let j = (0..3)
            .max_by(|&a, &c| b[(a, a)].total_cmp(&b[(c, c)]))
            .unwrap();
        let col = b.column(j).into_owned();
        let norm = col.norm();
        if norm == 0.0 {
            return Err(invalid("so3_log: R + I vanished for a claimed rotation"));
        }
        let mut axis = col / norm;
        // Orient along the residual skew part when it is meaningful, otherwise
        // fall back to the deterministic sign convention.
        let along_skew = skew.dot(&axis);
        if along_skew.abs() > 1e-12 {
            if along_skew < 0.0 {
                axis = -axis;
            }
        } else if let Some(first) = axis.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                axis = -axis;
            }
        }
        return Ok(axis * theta);
    }
    Ok(skew * (theta / (2.0 * theta.sin())))
}

/// Geodesic from `r0` to `r1`: `r0 * exp(t * log(r0^T r1))`.
pub fn so3_geodesic(r0: &Matrix3<f64>, r1: &Matrix3<f64>, t: f64) -> Result<Matrix3<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid(format!("so3_geodesic: t = {t} outside [0, 1]")));
    }
    require_rotation(r0, "so3_geodesic r0")?;
    let w = so3_log(&(r0.transpose() * r1))?;
    Ok(r0 * so3_exp(&(w * t)))
}

/// Product-metric interpolant on SE(3): translations lerp, rotations follow
/// the geodesic.
pub fn se3_interpolant(x0: &Frame, x1: &Frame, t: f64) -> Result<Frame> {
    let rot = so3_geodesic(&x0.rot, &x1.rot, t)?;
    let trans = x0.trans * (1.0 - t) + x1.trans * t;
    Ok(Frame { rot, trans })
}

fn quat_to_matrix(a: f64, b: f64, c: f64, d: f64) -> Matrix3<f64> {
    Matrix3::new(
        a * a + b * b - c * c - d * d,
        2.0 * (b * c - a * d),
        2.0 * (b * d + a * c),
        2.0 * (b * c + a * d),
        a * a - b * b + c * c - d * d,
        2.0 * (c * d - a * b),
        2.0 * (b * d - a * c),
        2.0 * (c * d + a * b),
        a * a - b * b - c * c + d * d,
    )
}

/// Applies a local update to a frame. The rotation update is the unit
/// quaternion obtained by normalizing `(1, b, c, d)` (so zero input is exactly
/// the identity), and the update composes on the right:
/// `(r, s) -> (r R(q), r s_update + s)`.
///
/// Arithmetic order is pinned (explicit ascending-index accumulation) so that
/// a differentiable re-implementation can reproduce the values exactly.
pub fn frame_update(frame: &Frame, s_update: &Vector3<f64>, bcd: &Vector3<f64>) -> Frame {
    let (b, c, d) = (bcd.x, bcd.y, bcd.z);
    let inv = 1.0 / (b * b + c * c + d * d + 1.0).sqrt();
    let r_up = quat_to_matrix(inv, b * inv, c * inv, d * inv);
    let mut rot = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += frame.rot[(i, k)] * r_up[(k, j)];
            }
            rot[(i, j)] = acc;
        }
    }
    let mut trans = Vector3::zeros();
    for i in 0..3 {
        let mut acc = 0.0;
        for j in 0..3 {
            acc += frame.rot[(i, j)] * s_update[j];
        }
        trans[i] = acc + frame.trans[i];
    }
    Frame { rot, trans }
}

/// Places the idealized backbone atoms of one residue: `atom = rot * p + trans`
/// for each ideal local coordinate `p`.
pub fn frame_to_atoms(frame: &Frame) -> BackboneAtoms {
    let place = |p: [f64; 3]| frame.rot * Vector3::new(p[0], p[1], p[2]) + frame.trans;
    BackboneAtoms {
        n: place(IDEAL_N),
        ca: place(IDEAL_CA),
        c: place(IDEAL_C),
        o: place(IDEAL_O),
    }
}

/// Haar-uniform rotation, via a uniform unit quaternion on S^3.
pub fn uniform_so3_sample<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    loop {
        let q: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if n > 1e-12 {
            return quat_to_matrix(q[0] / n, q[1] / n, q[2] / n, q[3] / n);
        }
    }
}

/// Product-metric squared distance between two equally long chains:
/// `sum_i ||s_a - s_b||^2 + ||log(r_a^T r_b)||^2`.
pub fn chain_squared_distance(a: &FrameChain, b: &FrameChain) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid(format!(
            "chain_squared_distance: lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let mut acc = 0.0;
    for (fa, fb) in a.frames.iter().zip(&b.frames) {
        let w = so3_log(&(fa.rot.transpose() * fb.rot))?;
        acc += (fa.trans - fb.trans).norm_squared() + w.norm_squared();
    }
    Ok(acc)
}
