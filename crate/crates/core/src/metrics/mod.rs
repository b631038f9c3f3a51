//! Sample-quality metrics: plain and optimally superposed RMSD, order
//! statistics, and the energy distance between sample sets.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};

fn to_points(a: &[f64], what: &str) -> Result<Vec<Vector3<f64>>> {
    if a.is_empty() || a.len() % 3 != 0 {
        return Err(invalid(format!("{what}: expected a non-empty multiple of 3 coordinates")));
    }
    Ok(a.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect())
}

/// Root-mean-square deviation over paired 3D points, no alignment.
pub fn rmsd(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid("rmsd: coordinate lengths differ"));
    }
    let pa = to_points(a, "rmsd")?;
    let pb = to_points(b, "rmsd")?;
    let acc: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - y).norm_squared()).sum();
    Ok((acc / pa.len() as f64).sqrt())
}

/// RMSD after the optimal rigid superposition (rotation plus translation) of
/// `a` onto `b`. Fails with `DegenerateInput` when the cross-covariance has
/// rank below 2 (coincident or collinear points), where the optimal rotation
/// is not unique.
pub fn kabsch_rmsd(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid("kabsch_rmsd: coordinate lengths differ"));
    }
    let mut pa = to_points(a, "kabsch_rmsd")?;
    let mut pb = to_points(b, "kabsch_rmsd")?;
    let n = pa.len() as f64;
    let ca: Vector3<f64> = pa.iter().sum::<Vector3<f64>>() / n;
    let cb: Vector3<f64> = pb.iter().sum::<Vector3<f64>>() / n;
    for p in pa.iter_mut() {
        *p -= ca;
    }
    for p in pb.iter_mut() {
        *p -= cb;
    }

    let mut h = Matrix3::zeros();
    for (x, y) in pa.iter().zip(&pb) {
        h += x * y.transpose();
    }
    let svd = h.svd(true, true);
    let s = svd.singular_values;
    let scale = s[0].max(1.0);
    if s[1] <= 1e-9 * scale {
        return Err(CoreError::DegenerateInput(
            "kabsch_rmsd: points are coincident or collinear; rotation is not unique".into(),
        ));
    }
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant();
    let mut corr = Matrix3::identity();
    corr[(2, 2)] = if d < 0.0 { -1.0 } else { 1.0 };
    let r = v * corr * u.transpose();

    let acc: f64 = pa.iter().zip(&pb).map(|(x, y)| (r * x - y).norm_squared()).sum();
    // Guard against tiny negative accumulation noise.
    Ok((acc.max(0.0) / n).sqrt())
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(invalid(format!("{what}: empty input")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid(format!("{what}: non-finite value")));
    }
    Ok(())
}

/// Fraction of values strictly below the threshold.
pub fn fraction_below(values: &[f64], threshold: f64) -> Result<f64> {
    check_finite(values, "fraction_below")?;
    let hits = values.iter().filter(|v| **v < threshold).count();
    Ok(hits as f64 / values.len() as f64)
}

/// Lower median: the element at index `(n - 1) / 2` of the sorted values.
pub fn median(values: &[f64]) -> Result<f64> {
    check_finite(values, "median")?;
    let mut sorted = values.to_vec();
    sorted.sort_by(|x, y| x.partial_cmp(y).expect("values checked finite"));
    Ok(sorted[(sorted.len() - 1) / 2])
}

fn pair_mean_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut acc = 0.0;
    for x in a {
        for y in b {
            acc += x
                .iter()
                .zip(y)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
        }
    }
    acc / (a.len() * b.len()) as f64
}

/// Energy distance between two sample sets, as the V-statistic
/// `2 E|X - Y| - E|X - X'| - E|Y - Y'|` with all pairs included (so the
/// within-set means count the zero diagonal). Non-negative, and zero only
/// for identical empirical distributions.
pub fn energy_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("energy_distance: empty sample set"));
    }
    let dim = a[0].len();
    if dim == 0 {
        return Err(invalid("energy_distance: zero-dimensional samples"));
    }
    for v in a.iter().chain(b) {
        if v.len() != dim {
            return Err(invalid("energy_distance: ragged sample dimensions"));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(invalid("energy_distance: non-finite value"));
        }
    }
    let cross = pair_mean_distance(a, b);
    let within_a = pair_mean_distance(a, a);
    let within_b = pair_mean_distance(b, b);
    Ok(2.0 * cross - within_a - within_b)
}

/// One row of the refinement-depth ablation at a fixed evaluation budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KAblationRow {
    pub k: usize,
    pub steps: usize,
    pub nfe: usize,
    pub median_score: f64,
    pub energy_distance: f64,
}

/// Evaluation summary written by the CLI. `score` is the per-sample distance
/// to the closest reference draw (Euclidean for point tasks, superposed RMSD
/// for chains of frames).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub nfe_per_sample: usize,
    pub fraction_below_2: f64,
    pub fraction_below_5: f64,
    pub median_score: f64,
    pub mean_score: f64,
    pub energy_distance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_idempotency_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub k_ablation: Vec<KAblationRow>,
}

impl EvalReport {
    /// Scalar metrics as `metric,value` CSV rows.
    pub fn scalar_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("n_samples,{}\n", self.n_samples));
        out.push_str(&format!("nfe_per_sample,{}\n", self.nfe_per_sample));
        out.push_str(&format!("fraction_below_2,{:.16e}\n", self.fraction_below_2));
        out.push_str(&format!("fraction_below_5,{:.16e}\n", self.fraction_below_5));
        out.push_str(&format!("median_score,{:.16e}\n", self.median_score));
        out.push_str(&format!("mean_score,{:.16e}\n", self.mean_score));
        out.push_str(&format!("energy_distance,{:.16e}\n", self.energy_distance));
        if let Some(r) = self.mean_idempotency_residual {
            out.push_str(&format!("mean_idempotency_residual,{r:.16e}\n"));
        }
        out
    }

    /// The ablation table as CSV.
    pub fn ablation_csv(&self) -> String {
        let mut out = String::from("k,steps,nfe,median_score,energy_distance\n");
        for row in &self.k_ablation {
            out.push_str(&format!(
                "{},{},{},{:.16e},{:.16e}\n",
                row.k, row.steps, row.nfe, row.median_score, row.energy_distance
            ));
        }
        out
    }
}
