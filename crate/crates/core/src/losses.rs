//! Training objectives with analytic gradients w.r.t. their direct inputs.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::grid::bbox_lattice;
use crate::geometry::{Pose, TriangleMesh};
use crate::refine::EncodedGeometryMap;

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Option<Vec<f64>>,
}

impl LossValue {
    pub fn scalar(value: f64) -> Self {
        Self { value, gradient: None }
    }
}

/// Mean absolute difference over the channels of pixels masked in `gt`.
/// Gradient w.r.t. `pred.values`.
pub fn geo_loss(pred: &EncodedGeometryMap, gt: &EncodedGeometryMap) -> Result<LossValue> {
    if !pred.same_shape(gt) {
        return Err(Error::DimMismatch(format!(
            "prediction {}x{}x{}, target {}x{}x{}",
            pred.width, pred.height, pred.channels, gt.width, gt.height, gt.channels
        )));
    }
    let n = gt.mask_count() * gt.channels;
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let inv = 1.0 / n as f64;
    let mut grad = vec![0.0; pred.values.len()];
    let mut sum = 0.0;
    for (i, _) in gt.mask.iter().enumerate().filter(|(_, &m)| m) {
        let r = i * gt.channels..(i + 1) * gt.channels;
        for j in r {
            let d = pred.values[j] - gt.values[j];
            sum += d.abs();
            grad[j] = d.signum() * inv * (d != 0.0) as u8 as f64;
        }
    }
    Ok(LossValue {
        value: sum * inv,
        gradient: Some(grad),
    })
}

/// Grid-matching plus grid-distance loss on the 3×3×3 bounding-box lattice:
/// mean point distance between the transformed grids plus the absolute
/// difference of translation norms. The gradient is w.r.t. the left tangent
/// `[ω, v]` of `pred` (see [`Pose::retract`]).
pub fn pose_loss(pred: &Pose, gt: &Pose, mesh: &TriangleMesh) -> LossValue {
    pose_loss_on(pred, gt, &bbox_lattice(mesh))
}

pub fn pose_loss_on(pred: &Pose, gt: &Pose, lattice: &[Vector3<f64>]) -> LossValue {
    let inv = 1.0 / lattice.len() as f64;
    let (mut term1, mut gw, mut gv) = (0.0, Vector3::zeros(), Vector3::zeros());
    for x in lattice {
        let rx = pred.rotation * x;
        let d = (rx + pred.translation) - gt.transform_point(x);
        let n = d.norm();
        term1 += n;
        if n > 0.0 {
            let u = d / n;
            gw += rx.cross(&u) * inv;
            gv += u * inv;
        }
    }
    let (a, b) = (pred.translation.norm(), gt.translation.norm());
    let term2 = (a - b).abs();
    if a > 0.0 && a != b {
        gv += pred.translation / a * (a - b).signum();
    }
    LossValue {
        value: term1 * inv + term2,
        gradient: Some(vec![gw.x, gw.y, gw.z, gv.x, gv.y, gv.z]),
    }
}

/// `Σ_m γ^{M−m} L_m`; the gradient holds the weight of each term.
pub fn sequence_loss(per_iteration: &[LossValue], gamma: f64) -> Result<LossValue> {
    if per_iteration.is_empty() {
        return Err(Error::EmptySequence);
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    let m = per_iteration.len();
    let weights: Vec<f64> = (0..m).map(|k| gamma.powi((m - 1 - k) as i32)).collect();
    let value = per_iteration.iter().zip(&weights).map(|(l, w)| w * l.value).sum();
    Ok(LossValue {
        value,
        gradient: Some(weights),
    })
}

/// Mean binary cross-entropy on logits. Gradient `(σ(z) − y)/n`.
pub fn bce_loss(logits: &[f64], labels: &[bool]) -> Result<LossValue> {
    if logits.len() != labels.len() {
        return Err(Error::LengthMismatch(logits.len(), labels.len()));
    }
    if logits.is_empty() {
        return Err(Error::EmptyInput("no logits".into()));
    }
    let inv = 1.0 / logits.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(labels) {
        let m = if y { z } else { -z };
        // log(1 + e^{-m}) without overflow
        value += (-m).max(0.0) + (-m.abs()).exp().ln_1p();
        let sig = if z >= 0.0 {
            1.0 / (1.0 + (-z).exp())
        } else {
            let e = z.exp();
            e / (1.0 + e)
        };
        grad.push((sig - y as u8 as f64) * inv);
    }
    Ok(LossValue {
        value: value * inv,
        gradient: Some(grad),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_procedural_mesh, MeshSpec};
    use crate::geometry::sampling::random_rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    fn enc(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> EncodedGeometryMap {
        let mut e = EncodedGeometryMap::zeros(w, h, c);
        e.values.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        e.mask.iter_mut().for_each(|m| *m = rng.gen_bool(0.7));
        e.mask[0] = true;
        e
    }

    #[test]
    fn geo_loss_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = enc(&mut rng, 4, 3, 6);
        assert_eq!(geo_loss(&gt, &gt).unwrap().value, 0.0);
        let mut p = gt.clone();
        p.values.iter_mut().for_each(|v| *v += 0.5);
        assert!((geo_loss(&p, &gt).unwrap().value - 0.5).abs() < 1e-12);
        let mut empty = gt.clone();
        empty.mask.fill(false);
        assert!(matches!(geo_loss(&p, &empty), Err(Error::EmptyMask)));
    }

    #[test]
    fn geo_loss_matches_brute_force_and_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (p, g) = (enc(&mut rng, 5, 4, 6), enc(&mut rng, 5, 4, 6));
        let l = geo_loss(&p, &g).unwrap();
        let (mut s, mut n) = (0.0, 0);
        for i in 0..20 {
            if g.mask[i] {
                for c in 0..6 {
                    s += (p.values[i * 6 + c] - g.values[i * 6 + c]).abs();
                    n += 1;
                }
            }
        }
        assert!((l.value - s / n as f64).abs() < 1e-9);
        let grad = l.gradient.unwrap();
        let h = 1e-6;
        for j in 0..p.values.len() {
            if (p.values[j] - g.values[j]).abs() < 1e-3 {
                continue;
            }
            let (mut a, mut b) = (p.clone(), p.clone());
            a.values[j] += h;
            b.values[j] -= h;
            let fd = (geo_loss(&a, &g).unwrap().value - geo_loss(&b, &g).unwrap().value) / (2.0 * h);
            assert!((fd - grad[j]).abs() < 1e-6, "{j}: {fd} vs {}", grad[j]);
        }
    }

    fn mesh() -> TriangleMesh {
        generate_procedural_mesh(&MeshSpec::Box { size: [0.4, 0.6, 0.3] }, 0).unwrap()
    }

    #[test]
    fn pose_loss_zero_and_tangent_offset() {
        let m = mesh();
        let p = Pose::from_axis_angle(Vector3::new(0.2, 0.1, -0.3), Vector3::new(0.0, 0.0, 2.0));
        assert_eq!(pose_loss(&p, &p, &m).value, 0.0);
        // Offset perpendicular to t keeps |t| only to first order; pick a
        // chord of the sphere |t| = 2 instead.
        let a = 0.05f64;
        let q = Pose::new(p.rotation, Vector3::new(2.0 * a.sin(), 0.0, 2.0 * a.cos())).unwrap();
        let l = pose_loss(&q, &p, &m).value;
        let d = (q.translation - p.translation).norm();
        assert!((l - d).abs() < 1e-12);
    }

    #[test]
    fn pose_loss_gradient_fd() {
        let m = mesh();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let gt = Pose::new(random_rotation(&mut rng), Vector3::new(rng.gen_range(-0.3..0.3), 0.1, 2.0)).unwrap();
            let pred = Pose::new(
                random_rotation(&mut rng),
                Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(1.5..2.5)),
            )
            .unwrap();
            let g = pose_loss(&pred, &gt, &m).gradient.unwrap();
            let h = 1e-6;
            for k in 0..6 {
                let mut d = [0.0; 6];
                d[k] = h;
                let up = pose_loss(&pred.retract(&d), &gt, &m).value;
                d[k] = -h;
                let dn = pose_loss(&pred.retract(&d), &gt, &m).value;
                let fd = (up - dn) / (2.0 * h);
                assert!(rel_err(fd, g[k]) < 1e-4 || (fd - g[k]).abs() < 1e-8, "{k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn sequence_loss_cases() {
        let ones: Vec<_> = (0..3).map(|_| LossValue::scalar(1.0)).collect();
        assert_eq!(sequence_loss(&ones, 0.5).unwrap().value, 1.75);
        assert_eq!(sequence_loss(&ones, 1.0).unwrap().value, 3.0);
        let one = [LossValue::scalar(0.37)];
        assert_eq!(sequence_loss(&one, 0.8).unwrap().value, 0.37);
        assert!(matches!(sequence_loss(&[], 0.8), Err(Error::EmptySequence)));
        assert!(sequence_loss(&one, 0.0).is_err());
    }

    #[test]
    fn bce_cases() {
        for y in [false, true] {
            assert!((bce_loss(&[0.0], &[y]).unwrap().value - 2f64.ln()).abs() < 1e-15);
        }
        assert!(bce_loss(&[20.0], &[true]).unwrap().value < 1e-8);
        assert!(bce_loss(&[-800.0], &[true]).unwrap().value.is_finite());
        assert!(matches!(bce_loss(&[1.0], &[]), Err(Error::LengthMismatch(1, 0))));
    }

    #[test]
    fn bce_gradient_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z: Vec<f64> = (0..32).map(|_| rng.gen_range(-6.0..6.0)).collect();
        let y: Vec<bool> = (0..32).map(|_| rng.gen_bool(0.5)).collect();
        let g = bce_loss(&z, &y).unwrap().gradient.unwrap();
        for k in 0..z.len() {
            let (mut a, mut b) = (z.clone(), z.clone());
            a[k] += 1e-5;
            b[k] -= 1e-5;
            let fd = (bce_loss(&a, &y).unwrap().value - bce_loss(&b, &y).unwrap().value) / 2e-5;
            assert!((fd - g[k]).abs() < 1e-6);
        }
    }
}
