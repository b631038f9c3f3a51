//! Synthetic desk-scale tasks: a 2D Gaussian mixture, a 3D bonded chain, and
//! an idealized helix of rigid frames. Each task knows its own prior
//! (standard normal, harmonic chain, or uniform rotations with normal
//! translations) and produces endpoint draws for training.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::flow::harmonic_prior_sample;
use crate::geometry::{so3_exp, Frame, FrameChain};
use crate::sampler::se3::prior_chain;
use nalgebra::Vector3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    /// Gaussian mixture in the plane.
    Mixture2d { means: Vec<[f64; 2]>, weights: Vec<f64>, stds: Vec<f64> },
    /// Random walk of unit steps with exact bond lengths: each step direction
    /// is the previous one rotated by a Gaussian axis-angle perturbation.
    Chain3d { length: usize, bond_length: f64, angular_noise: f64 },
    /// Rigid frames along an ideal helix with the stated rise per residue,
    /// twist, and consecutive-residue spacing.
    HelixFrames { residues: usize, rise: f64, twist_deg: f64, ca_spacing: f64, noise_std: f64 },
}

impl TaskSpec {
    /// Eight equally weighted modes on a circle of radius 4, std 0.3.
    pub fn mixture2d_default() -> Self {
        let n = 8;
        let means = (0..n)
            .map(|j| {
                let a = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                [4.0 * a.cos(), 4.0 * a.sin()]
            })
            .collect();
        TaskSpec::Mixture2d {
            means,
            weights: vec![1.0 / n as f64; n],
            stds: vec![0.3; n],
        }
    }

    pub fn chain3d_default() -> Self {
        TaskSpec::Chain3d { length: 16, bond_length: 3.8, angular_noise: 0.4 }
    }

    pub fn helix_default() -> Self {
        TaskSpec::HelixFrames {
            residues: 16,
            rise: 1.5,
            twist_deg: 100.0,
            ca_spacing: 3.8,
            noise_std: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TaskSpec::Mixture2d { means, weights, stds } => {
                if means.is_empty() || means.len() != weights.len() || means.len() != stds.len() {
                    return Err(invalid(
                        "mixture2d: means, weights, and stds must be non-empty and equally long",
                    ));
                }
                if weights.iter().any(|w| !(w > &0.0) || !w.is_finite()) {
                    return Err(invalid("mixture2d: weights must be positive"));
                }
                if stds.iter().any(|s| !(s > &0.0) || !s.is_finite()) {
                    return Err(invalid("mixture2d: stds must be positive"));
                }
                Ok(())
            }
            TaskSpec::Chain3d { length, bond_length, angular_noise } => {
                if *length < 2 {
                    return Err(invalid("chain3d: length must be >= 2"));
                }
                if !(bond_length > &0.0) || !bond_length.is_finite() {
                    return Err(invalid("chain3d: bond_length must be positive"));
                }
                if *angular_noise < 0.0 {
                    return Err(invalid("chain3d: angular_noise must be >= 0"));
                }
                Ok(())
            }
            TaskSpec::HelixFrames { residues, rise, twist_deg, ca_spacing, noise_std } => {
                if *residues < 2 {
                    return Err(invalid("helix_frames: residues must be >= 2"));
                }
                if !(rise > &0.0) || !(ca_spacing > &0.0) {
                    return Err(invalid("helix_frames: rise and ca_spacing must be positive"));
                }
                if ca_spacing <= rise {
                    return Err(invalid(
                        "helix_frames: ca_spacing must exceed rise (the helix needs a radius)",
                    ));
                }
                if !(twist_deg > &0.0) || *twist_deg >= 360.0 {
                    return Err(invalid("helix_frames: twist_deg must be in (0, 360)"));
                }
                if *noise_std < 0.0 {
                    return Err(invalid("helix_frames: noise_std must be >= 0"));
                }
                Ok(())
            }
        }
    }

    /// Flat Euclidean dimension of one draw, for the point tasks.
    pub fn point_dim(&self) -> Option<usize> {
        match self {
            TaskSpec::Mixture2d { .. } => Some(2),
            TaskSpec::Chain3d { length, .. } => Some(3 * length),
            TaskSpec::HelixFrames { .. } => None,
        }
    }

    pub fn is_frame_task(&self) -> bool {
        matches!(self, TaskSpec::HelixFrames { .. })
    }

    pub fn chain_len(&self) -> Option<usize> {
        match self {
            TaskSpec::HelixFrames { residues, .. } => Some(*residues),
            _ => None,
        }
    }

    /// One target draw for the point tasks (flat, point-major for the chain).
    pub fn sample_target_points(&self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.validate()?;
        match self {
            TaskSpec::Mixture2d { means, weights, stds } => {
                let total: f64 = weights.iter().sum();
                let mut u = rng.gen::<f64>() * total;
                let mut idx = means.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if u < *w {
                        idx = i;
                        break;
                    }
                    u -= w;
                }
                let z0: f64 = rng.sample(StandardNormal);
                let z1: f64 = rng.sample(StandardNormal);
                Ok(vec![means[idx][0] + stds[idx] * z0, means[idx][1] + stds[idx] * z1])
            }
            TaskSpec::Chain3d { length, bond_length, angular_noise } => {
                Ok(chain3d_target(*length, *bond_length, *angular_noise, rng))
            }
            TaskSpec::HelixFrames { .. } => {
                Err(invalid("sample_target_points: helix_frames is a frame task"))
            }
        }
    }

    /// One prior draw matching the task's state space.
    pub fn sample_prior_points(&self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.validate()?;
        match self {
            TaskSpec::Mixture2d { .. } => {
                Ok(vec![rng.sample(StandardNormal), rng.sample(StandardNormal)])
            }
            TaskSpec::Chain3d { length, .. } => harmonic_prior_sample(*length, rng),
            TaskSpec::HelixFrames { .. } => {
                Err(invalid("sample_prior_points: helix_frames is a frame task"))
            }
        }
    }

    pub fn sample_target_chain(&self, rng: &mut ChaCha8Rng) -> Result<FrameChain> {
        self.validate()?;
        match self {
            TaskSpec::HelixFrames { residues, rise, twist_deg, ca_spacing, noise_std } => {
                Ok(helix_target(*residues, *rise, *twist_deg, *ca_spacing, *noise_std, rng))
            }
            _ => Err(invalid("sample_target_chain: not a frame task")),
        }
    }

    pub fn sample_prior_chain(&self, rng: &mut ChaCha8Rng) -> Result<FrameChain> {
        self.validate()?;
        match self {
            TaskSpec::HelixFrames { residues, .. } => prior_chain(*residues, rng),
            _ => Err(invalid("sample_prior_chain: not a frame task")),
        }
    }
}

fn unit_sphere_sample(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Walk of `length` points with exact bond lengths. The first direction is
/// uniform on the sphere; each later one is the previous rotated by
/// `exp(w)`, `w ~ N(0, angular_noise^2 I)`. The result is centered.
fn chain3d_target(
    length: usize,
    bond_length: f64,
    angular_noise: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut points = Vec::with_capacity(length);
    points.push(Vector3::zeros());
    let mut dir = unit_sphere_sample(rng);
    for i in 1..length {
        if i > 1 {
            let w = Vector3::new(
                angular_noise * rng.sample::<f64, _>(StandardNormal),
                angular_noise * rng.sample::<f64, _>(StandardNormal),
                angular_noise * rng.sample::<f64, _>(StandardNormal),
            );
            dir = so3_exp(&w) * dir;
        }
        let prev = points[i - 1];
        points.push(prev + dir * bond_length);
    }
    let centroid: Vector3<f64> = points.iter().sum::<Vector3<f64>>() / length as f64;
    let mut out = Vec::with_capacity(3 * length);
    for p in &points {
        let q = p - centroid;
        out.extend_from_slice(&[q.x, q.y, q.z]);
    }
    out
}

/// Radius that makes consecutive points of a helix with the given rise and
/// twist sit exactly `ca_spacing` apart.
pub fn helix_radius(ca_spacing: f64, rise: f64, twist_deg: f64) -> f64 {
    let half = twist_deg.to_radians() / 2.0;
    (ca_spacing * ca_spacing - rise * rise).sqrt() / (2.0 * half.sin())
}

/// Ideal helix of frames: translations on the helix, rotations the
/// tangent/normal/binormal frame. Optional Gaussian noise perturbs the
/// translations directly and the rotations through the exponential map;
/// the chain is centered on its translation centroid afterwards.
fn helix_target(
    residues: usize,
    rise: f64,
    twist_deg: f64,
    ca_spacing: f64,
    noise_std: f64,
    rng: &mut ChaCha8Rng,
) -> FrameChain {
    let twist = twist_deg.to_radians();
    let rho = helix_radius(ca_spacing, rise, twist_deg);
    let mut frames = Vec::with_capacity(residues);
    for i in 0..residues {
        let phi = twist * i as f64;
        let trans = Vector3::new(rho * phi.cos(), rho * phi.sin(), rise * i as f64);
        // Tangent of the continuous helix, inward normal, and their cross
        // product form a right-handed orthonormal frame.
        let tangent = Vector3::new(-rho * twist * phi.sin(), rho * twist * phi.cos(), rise)
            .normalize();
        let normal = Vector3::new(-phi.cos(), -phi.sin(), 0.0);
        let binormal = tangent.cross(&normal);
        let rot = nalgebra::Matrix3::from_columns(&[tangent, normal, binormal]);
        frames.push(Frame::new(rot, trans));
    }
    if noise_std > 0.0 {
        for f in frames.iter_mut() {
            for i in 0..3 {
                f.trans[i] += noise_std * rng.sample::<f64, _>(StandardNormal);
            }
            let w = Vector3::new(
                noise_std * rng.sample::<f64, _>(StandardNormal),
                noise_std * rng.sample::<f64, _>(StandardNormal),
                noise_std * rng.sample::<f64, _>(StandardNormal),
            );
            f.rot *= so3_exp(&w);
        }
    }
    let centroid: Vector3<f64> =
        frames.iter().map(|f| f.trans).sum::<Vector3<f64>>() / residues as f64;
    for f in frames.iter_mut() {
        f.trans -= centroid;
    }
    FrameChain::new(frames)
}

/// Flat rows as CSV with header `d0,d1,...`; full precision.
pub fn batch_to_csv(batch: &[Vec<f64>]) -> Result<String> {
    let dim = match batch.first() {
        Some(row) => row.len(),
        None => return Err(invalid("batch_to_csv: empty batch")),
    };
    let mut out = String::new();
    for i in 0..dim {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!("d{i}"));
    }
    out.push('\n');
    for row in batch {
        if row.len() != dim {
            return Err(invalid("batch_to_csv: ragged rows"));
        }
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("{v:.16e}"));
        }
        out.push('\n');
    }
    Ok(out)
}
