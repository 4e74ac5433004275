use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{mspd, mssd, vsd_many};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose, TriangleMesh};

fn steps(lo: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|k| (lo * k as f64 * 1e9).round() / 1e9).collect()
}

/// Recall threshold grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricThresholds {
    pub name: String,
    /// VSD depth tolerances, fractions of the diameter.
    pub vsd_taus: Vec<f64>,
    /// VSD error cutoffs (fractions of the visible union).
    pub vsd_thresholds: Vec<f64>,
    /// VSD visibility tolerance, fraction of the diameter.
    pub vsd_delta: f64,
    /// MSSD cutoffs, fractions of the diameter.
    pub mssd_thresholds: Vec<f64>,
    /// MSPD cutoffs in pixels of a 640-wide image.
    pub mspd_thresholds: Vec<f64>,
}

impl Default for MetricThresholds {
    fn default() -> Self {
        Self::bop()
    }
}

impl MetricThresholds {
    /// The standard BOP-family grids.
    pub fn bop() -> Self {
        Self {
            name: "bop".into(),
            vsd_taus: steps(0.05, 10),
            vsd_thresholds: steps(0.05, 10),
            vsd_delta: 0.03,
            mssd_thresholds: steps(0.05, 10),
            mspd_thresholds: steps(5.0, 10),
        }
    }

    /// Grids ten times finer in distance for noise-free renders, where the
    /// standard grids saturate. VSD error cutoffs are unchanged.
    pub fn synthetic() -> Self {
        Self {
            name: "synthetic".into(),
            vsd_taus: steps(0.005, 10),
            vsd_thresholds: steps(0.05, 10),
            vsd_delta: 0.003,
            mssd_thresholds: steps(0.005, 10),
            mspd_thresholds: steps(0.5, 10),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, g) in [
            ("vsd_taus", &self.vsd_taus),
            ("vsd_thresholds", &self.vsd_thresholds),
            ("mssd_thresholds", &self.mssd_thresholds),
            ("mspd_thresholds", &self.mspd_thresholds),
        ] {
            if g.is_empty() || g.iter().any(|&v| !(v > 0.0 && v.is_finite())) || g.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!("{name} must be positive and strictly ascending")));
            }
        }
        if !(self.vsd_delta > 0.0) {
            return Err(Error::Config("vsd_delta must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricErrors {
    /// One VSD value per tau.
    pub vsd: Vec<f64>,
    pub mssd: f64,
    pub mspd: f64,
}

/// One evaluated estimate. A missing estimate fails every threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub object: usize,
    pub gt: Pose,
    pub estimate: Option<Pose>,
    pub errors: Option<MetricErrors>,
    /// Row-major over (tau, cutoff).
    pub vsd_pass: Vec<bool>,
    pub mssd_pass: Vec<bool>,
    pub mspd_pass: Vec<bool>,
}

impl EvalRecord {
    /// Mean pass rate of this record over the three metrics.
    pub fn score(&self) -> f64 {
        let f = |v: &[bool]| v.iter().filter(|&&b| b).count() as f64 / v.len().max(1) as f64;
        (f(&self.vsd_pass) + f(&self.mssd_pass) + f(&self.mspd_pass)) / 3.0
    }
}

/// Errors and pass flags of `estimate` against `gt` in the image of `cam`.
pub fn evaluate_record(
    object: usize,
    gt: &Pose,
    estimate: Option<&Pose>,
    mesh: &TriangleMesh,
    cam: &CameraIntrinsics,
    th: &MetricThresholds,
) -> Result<EvalRecord> {
    let d = mesh.diameter;
    let nv = th.vsd_taus.len() * th.vsd_thresholds.len();
    let Some(est) = estimate else {
        return Ok(EvalRecord {
            object,
            gt: *gt,
            estimate: None,
            errors: None,
            vsd_pass: vec![false; nv],
            mssd_pass: vec![false; th.mssd_thresholds.len()],
            mspd_pass: vec![false; th.mspd_thresholds.len()],
        });
    };
    let taus: Vec<f64> = th.vsd_taus.iter().map(|t| t * d).collect();
    let vsd = vsd_many(est, gt, mesh, cam, &taus, th.vsd_delta * d)?;
    let e_mssd = mssd(est, gt, mesh);
    let e_mspd = match mspd(est, gt, mesh, cam) {
        Err(Error::NonPositiveDepth(_)) => f64::INFINITY,
        r => r?,
    };
    let scale = cam.width as f64 / 640.0;
    Ok(EvalRecord {
        object,
        gt: *gt,
        estimate: Some(*est),
        vsd_pass: vsd.iter().flat_map(|&e| th.vsd_thresholds.iter().map(move |&c| e < c)).collect(),
        mssd_pass: th.mssd_thresholds.iter().map(|&c| e_mssd < c * d).collect(),
        mspd_pass: th.mspd_thresholds.iter().map(|&c| e_mspd < c * scale).collect(),
        errors: Some(MetricErrors {
            vsd,
            mssd: e_mssd,
            mspd: e_mspd,
        }),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallSummary {
    pub ar: f64,
    pub vsd_recall: f64,
    pub mssd_recall: f64,
    pub mspd_recall: f64,
}

/// Recall per metric (pass count over records × thresholds) and their mean.
pub fn average_recall(records: &[EvalRecord]) -> Result<RecallSummary> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no evaluation records".into()));
    }
    let recall = |f: fn(&EvalRecord) -> &Vec<bool>| {
        let (mut pass, mut total) = (0usize, 0usize);
        for r in records {
            pass += f(r).iter().filter(|&&b| b).count();
            total += f(r).len();
        }
        pass as f64 / total as f64
    };
    let (v, s, p) = (recall(|r| &r.vsd_pass), recall(|r| &r.mssd_pass), recall(|r| &r.mspd_pass));
    Ok(RecallSummary {
        ar: (v + s + p) / 3.0,
        vsd_recall: v,
        mssd_recall: s,
        mspd_recall: p,
    })
}

/// Paired bootstrap of `mean(a − b)` over records: `(mean, lo, hi)` at the
/// given two-sided confidence.
pub fn bootstrap_difference(a: &[f64], b: &[f64], resamples: usize, confidence: f64, seed: u64) -> Result<(f64, f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("no paired scores".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len();
    let mean = d.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..n).map(|_| d[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let q = |p: f64| means[((p * (means.len() - 1) as f64).round() as usize).min(means.len() - 1)];
    let tail = (1.0 - confidence) / 2.0;
    Ok((mean, q(tail), q(1.0 - tail)))
}
