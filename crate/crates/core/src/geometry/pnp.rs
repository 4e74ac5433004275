//! Perspective-n-point: Grunert P3P hypotheses inside RANSAC, then
//! Levenberg-Marquardt refinement of the reprojection error over inliers.

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector2, Vector3, Vector6};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::camera::{CameraIntrinsics, MIN_DEPTH};
use super::pose::{nearest_rotation, skew};
use super::Pose;
use crate::error::{Error, Result};

/// Minimum number of correspondences accepted by [`solve_pnp_ransac`].
pub const MIN_CORRESPONDENCES: usize = 6;

/// A 2D pixel observation of a 3D model point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub pixel: Vector2<f64>,
    pub point: Vector3<f64>,
}

impl Correspondence {
    pub fn new(pixel: Vector2<f64>, point: Vector3<f64>) -> Self {
        Self { pixel, point }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacConfig {
    pub threshold_px: f64,
    pub max_iterations: usize,
    pub min_inliers: usize,
    /// Early-exit confidence for the adaptive iteration bound.
    pub confidence: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold_px: 2.0,
            max_iterations: 512,
            min_inliers: 6,
            confidence: 0.9999,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PnpSolution {
    pub pose: Pose,
    pub inliers: Vec<bool>,
}

impl PnpSolution {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// Robust pose from 2D-3D correspondences. Deterministic in `seed`.
pub fn solve_pnp_ransac(
    corr: &[Correspondence],
    cam: &CameraIntrinsics,
    cfg: &RansacConfig,
    seed: u64,
) -> Result<PnpSolution> {
    if corr.len() < MIN_CORRESPONDENCES {
        return Err(Error::TooFewCorrespondences {
            required: MIN_CORRESPONDENCES,
            got: corr.len(),
        });
    }
    let bearings: Vec<Vector3<f64>> = corr
        .iter()
        .map(|c| {
            let n = cam.normalize(&c.pixel);
            Vector3::new(n.x, n.y, 1.0).normalize()
        })
        .collect();
    let thr2 = cfg.threshold_px * cfg.threshold_px;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, Pose)> = None;
    let mut bound = cfg.max_iterations;
    let mut iter = 0;
    while iter < bound {
        iter += 1;
        let idx = sample(&mut rng, corr.len(), 3);
        let (i, j, k) = (idx.index(0), idx.index(1), idx.index(2));
        let world = [corr[i].point, corr[j].point, corr[k].point];
        let rays = [bearings[i], bearings[j], bearings[k]];
        for pose in p3p(&world, &rays) {
            let n = count_inliers(corr, cam, &pose, thr2);
            if best.as_ref().map_or(true, |(b, _)| n > *b) {
                best = Some((n, pose));
                let w = n as f64 / corr.len() as f64;
                if w >= 1.0 {
                    bound = iter;
                } else {
                    let denom = (1.0 - w.powi(3)).ln();
                    if denom < 0.0 {
                        let need = ((1.0 - cfg.confidence).ln() / denom).ceil();
                        if need.is_finite() {
                            bound = bound.min((need as usize).max(1));
                        }
                    }
                }
            }
        }
    }
    let min_inliers = cfg.min_inliers.max(MIN_CORRESPONDENCES);
    let (n_best, pose) = best.unwrap_or((0, Pose::identity()));
    if n_best < min_inliers {
        return Err(Error::DegenerateConfiguration {
            min_inliers,
            best: n_best,
        });
    }
    let mut pose = pose;
    let mut inliers = inlier_mask(corr, cam, &pose, thr2);
    for _ in 0..2 {
        let subset: Vec<Correspondence> = corr
            .iter()
            .zip(&inliers)
            .filter(|(_, &b)| b)
            .map(|(c, _)| *c)
            .collect();
        pose = refine_pose_lm(&subset, cam, &pose, 50);
        let next = inlier_mask(corr, cam, &pose, thr2);
        let changed = next != inliers;
        inliers = next;
        if !changed {
            break;
        }
    }
    if inliers.iter().filter(|&&b| b).count() < min_inliers {
        return Err(Error::DegenerateConfiguration {
            min_inliers,
            best: n_best,
        });
    }
    Ok(PnpSolution { pose, inliers })
}

/// Re-solves on the correspondences within each successively smaller
/// reprojection threshold, stopping once fewer than `min_keep` remain.
pub fn tighten_pose(corr: &[Correspondence], cam: &CameraIntrinsics, pose: &Pose, schedule_px: &[f64], min_keep: usize) -> Pose {
    let mut pose = *pose;
    for &t in schedule_px {
        let subset: Vec<Correspondence> = corr
            .iter()
            .filter(|c| reprojection_sq(c, cam, &pose).is_some_and(|e| e < t * t))
            .copied()
            .collect();
        if subset.len() < min_keep.max(MIN_CORRESPONDENCES) {
            break;
        }
        pose = refine_pose_lm(&subset, cam, &pose, 50);
    }
    pose
}

fn reprojection_sq(c: &Correspondence, cam: &CameraIntrinsics, pose: &Pose) -> Option<f64> {
    let pc = pose.transform_point(&c.point);
    if pc.z <= MIN_DEPTH {
        return None;
    }
    let u = cam.fx * pc.x / pc.z + cam.cx - c.pixel.x;
    let v = cam.fy * pc.y / pc.z + cam.cy - c.pixel.y;
    Some(u * u + v * v)
}

fn count_inliers(corr: &[Correspondence], cam: &CameraIntrinsics, pose: &Pose, thr2: f64) -> usize {
    corr.iter()
        .filter(|c| reprojection_sq(c, cam, pose).is_some_and(|e| e < thr2))
        .count()
}

fn inlier_mask(corr: &[Correspondence], cam: &CameraIntrinsics, pose: &Pose, thr2: f64) -> Vec<bool> {
    corr.iter()
        .map(|c| reprojection_sq(c, cam, pose).is_some_and(|e| e < thr2))
        .collect()
}

/// Root-mean-square reprojection error in pixels; points behind the camera
/// count as infinite.
pub fn reprojection_rmse(corr: &[Correspondence], cam: &CameraIntrinsics, pose: &Pose) -> f64 {
    if corr.is_empty() {
        return 0.0;
    }
    let s: f64 = corr
        .iter()
        .map(|c| reprojection_sq(c, cam, pose).unwrap_or(f64::INFINITY))
        .sum();
    (s / corr.len() as f64).sqrt()
}

/// Levenberg-Marquardt on the summed squared reprojection error with left
/// tangent updates `[ω, v]`.
pub fn refine_pose_lm(corr: &[Correspondence], cam: &CameraIntrinsics, init: &Pose, max_iters: usize) -> Pose {
    let cost = |p: &Pose| -> f64 {
        corr.iter()
            .map(|c| reprojection_sq(c, cam, p).unwrap_or(1e12))
            .sum()
    };
    let mut pose = *init;
    let mut current = cost(&pose);
    let mut lambda = 1e-3;
    for _ in 0..max_iters {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for c in corr {
            let rp = pose.rotation * c.point;
            let pc = rp + pose.translation;
            if pc.z <= MIN_DEPTH {
                continue;
            }
            let iz = 1.0 / pc.z;
            let r = Vector2::new(
                cam.fx * pc.x * iz + cam.cx - c.pixel.x,
                cam.fy * pc.y * iz + cam.cy - c.pixel.y,
            );
            let dproj = nalgebra::Matrix2x3::new(
                cam.fx * iz,
                0.0,
                -cam.fx * pc.x * iz * iz,
                0.0,
                cam.fy * iz,
                -cam.fy * pc.y * iz * iz,
            );
            let mut dp = nalgebra::Matrix3x6::<f64>::zeros();
            dp.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&rp)));
            dp.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
            let j = dproj * dp;
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut a = jtj;
            for d in 0..6 {
                a[(d, d)] += lambda * (jtj[(d, d)].max(1e-12));
            }
            let Some(step) = a.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = pose.retract(&[step[0], step[1], step[2], step[3], step[4], step[5]]);
            let c = cost(&candidate);
            if c < current {
                let rel = (current - c) / current.max(1e-300);
                pose = candidate;
                current = c;
                lambda = (lambda * 0.3).max(1e-12);
                improved = rel > 1e-15 && step.amax() > 1e-15;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    pose.orthonormalized()
}

/// Grunert's P3P. `world` are model points, `rays` unit bearing vectors in
/// the camera frame. Returns up to four poses.
pub fn p3p(world: &[Vector3<f64>; 3], rays: &[Vector3<f64>; 3]) -> Vec<Pose> {
    let a2 = (world[1] - world[2]).norm_squared();
    let b2 = (world[0] - world[2]).norm_squared();
    let c2 = (world[0] - world[1]).norm_squared();
    if a2 < 1e-18 || b2 < 1e-18 || c2 < 1e-18 {
        return Vec::new();
    }
    // Collinear model points give no unique solution.
    if (world[1] - world[0]).cross(&(world[2] - world[0])).norm_squared() < 1e-18 * a2 * b2 {
        return Vec::new();
    }
    let ca = rays[1].dot(&rays[2]);
    let cb = rays[0].dot(&rays[2]);
    let cg = rays[0].dot(&rays[1]);
    let amc = (a2 - c2) / b2;
    let apc = (a2 + c2) / b2;
    let bmc = (b2 - c2) / b2;
    let bma = (b2 - a2) / b2;
    let a4 = (amc - 1.0).powi(2) - 4.0 * c2 / b2 * ca * ca;
    let a3 = 4.0 * (amc * (1.0 - amc) * cb - (1.0 - apc) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb);
    let a2c = 2.0
        * (amc * amc - 1.0 + 2.0 * amc * amc * cb * cb + 2.0 * bmc * ca * ca - 4.0 * apc * ca * cb * cg
            + 2.0 * bma * cg * cg);
    let a1 = 4.0 * (-amc * (1.0 + amc) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - apc) * ca * cg);
    let a0 = (1.0 + amc).powi(2) - 4.0 * a2 / b2 * cg * cg;

    let mut out = Vec::with_capacity(4);
    for v in real_quartic_roots([a4, a3, a2c, a1, a0]) {
        let den = 2.0 * (cg - v * ca);
        if den.abs() < 1e-12 {
            continue;
        }
        let u = ((-1.0 + amc) * v * v - 2.0 * amc * cb * v + 1.0 + amc) / den;
        let d1 = 1.0 + v * v - 2.0 * v * cb;
        if d1 <= 0.0 || u <= 0.0 || v <= 0.0 {
            continue;
        }
        let s1 = (b2 / d1).sqrt();
        let cam_pts = [rays[0] * s1, rays[1] * (u * s1), rays[2] * (v * s1)];
        if let Some(pose) = absolute_orientation(world, &cam_pts) {
            out.push(pose);
        }
    }
    out
}

/// Real roots of `c[0] x⁴ + c[1] x³ + c[2] x² + c[3] x + c[4]`, each polished
/// with Newton steps.
fn real_quartic_roots(c: [f64; 5]) -> Vec<f64> {
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let c: Vec<f64> = c.iter().map(|v| v / scale).collect();
    let lead = c[0];
    let mut roots = Vec::new();
    if lead.abs() < 1e-12 {
        // Degenerates to a cubic; fall back to a companion matrix of size 3.
        if c[1].abs() < 1e-12 {
            return roots;
        }
        let m = nalgebra::Matrix3::new(
            -c[2] / c[1],
            -c[3] / c[1],
            -c[4] / c[1],
            1.0,
            0.0,
            0.0,
            0.0,
            1.0,
            0.0,
        );
        for z in m.complex_eigenvalues().iter() {
            if z.im.abs() < 1e-6 * (1.0 + z.re.abs()) {
                roots.push(z.re);
            }
        }
    } else {
        let m = Matrix4::new(
            -c[1] / lead,
            -c[2] / lead,
            -c[3] / lead,
            -c[4] / lead,
            1.0,
            0.0,
            0.0,
            0.0,
            0.0,
            1.0,
            0.0,
            0.0,
            0.0,
            0.0,
            1.0,
            0.0,
        );
        for z in m.complex_eigenvalues().iter() {
            if z.im.abs() < 1e-6 * (1.0 + z.re.abs()) {
                roots.push(z.re);
            }
        }
    }
    let f = |x: f64| (((c[0] * x + c[1]) * x + c[2]) * x + c[3]) * x + c[4];
    let df = |x: f64| ((4.0 * c[0] * x + 3.0 * c[1]) * x + 2.0 * c[2]) * x + c[3];
    for r in roots.iter_mut() {
        for _ in 0..8 {
            let d = df(*r);
            if d.abs() < 1e-300 {
                break;
            }
            let step = f(*r) / d;
            *r -= step;
            if step.abs() < 1e-15 * (1.0 + r.abs()) {
                break;
            }
        }
    }
    roots
}

/// Rigid transform mapping `src` onto `dst` (Kabsch).
pub fn absolute_orientation(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<Pose> {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (d - cd) * (s - cs).transpose();
    }
    if !h.iter().all(|v| v.is_finite()) {
        return None;
    }
    let r = nearest_rotation(&h);
    Some(Pose {
        rotation: r,
        translation: cd - r * cs,
    })
}
