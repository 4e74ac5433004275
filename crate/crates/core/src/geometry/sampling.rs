use std::f64::consts::PI;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Pose;

/// `n` points of the spherical Fibonacci lattice, rotated about z by `twist`.
pub fn fibonacci_sphere(n: usize, twist: f64) -> Vec<Vector3<f64>> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64 + twist;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Rotation whose camera looks from `viewpoint` (unit vector, model frame)
/// toward the model origin, followed by an in-plane `roll` about the optical
/// axis.
pub fn look_at_rotation(viewpoint: &Vector3<f64>, roll: f64) -> Matrix3<f64> {
    let z = -viewpoint.normalize();
    let helper = if z.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let x = helper.cross(&z).normalize();
    let y = z.cross(&x);
    let base = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    Pose::rot_z(roll).rotation * base
}

/// Camera-facing pose at distance `radius` looking from `viewpoint`.
pub fn pose_from_viewpoint(viewpoint: &Vector3<f64>, roll: f64, radius: f64) -> Pose {
    Pose {
        rotation: look_at_rotation(viewpoint, roll),
        translation: Vector3::new(0.0, 0.0, radius),
    }
}

/// Direction from the model origin toward the camera center, model frame.
pub fn viewpoint_of(pose: &Pose) -> Vector3<f64> {
    let center = -(pose.rotation.transpose() * pose.translation);
    if center.norm() > 0.0 {
        center.normalize()
    } else {
        -(pose.rotation.transpose() * Vector3::z())
    }
}

/// Angle between the viewing directions of two poses, radians.
pub fn viewpoint_angle(a: &Pose, b: &Pose) -> f64 {
    viewpoint_of(a).dot(&viewpoint_of(b)).clamp(-1.0, 1.0).acos()
}

/// Template poses: Fibonacci-lattice viewpoints with a seeded lattice twist
/// and uniform random in-plane roll, object centered at `radius`.
pub fn sample_template_poses(n: usize, radius: f64, seed: u64) -> Vec<Pose> {
    assert!(n >= 1, "need at least one template pose");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let twist = rng.gen_range(0.0..2.0 * PI);
    fibonacci_sphere(n, twist)
        .iter()
        .map(|v| {
            let roll = rng.gen_range(-PI..PI);
            pose_from_viewpoint(v, roll, radius)
        })
        .collect()
}

/// Uniformly distributed rotation (Shoemake's unit-quaternion method).
pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let q = nalgebra::Quaternion::new(
        b * (2.0 * PI * u3).cos(),
        a * (2.0 * PI * u2).sin(),
        a * (2.0 * PI * u2).cos(),
        b * (2.0 * PI * u3).sin(),
    );
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pose_at_radius() {
        let poses = sample_template_poses(1, 2.5, 3);
        assert_eq!(poses.len(), 1);
        assert!((poses[0].translation - Vector3::new(0.0, 0.0, 2.5)).norm() < 1e-12);
    }

    #[test]
    fn look_at_centers_origin_on_axis() {
        for v in fibonacci_sphere(50, 0.3) {
            let p = pose_from_viewpoint(&v, 0.7, 3.0);
            let r = p.rotation;
            assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
            // The camera sits at radius·v in the model frame.
            let center = -(r.transpose() * p.translation);
            assert!((center - v * 3.0).norm() < 1e-12);
            assert!((viewpoint_of(&p) - v).norm() < 1e-12);
        }
    }

    #[test]
    fn n128_distinct_viewpoints() {
        let poses = sample_template_poses(128, 1.0, 9);
        assert_eq!(poses.len(), 128);
        let mut min_angle = f64::INFINITY;
        for i in 0..poses.len() {
            for j in i + 1..poses.len() {
                min_angle = min_angle.min(viewpoint_angle(&poses[i], &poses[j]));
            }
        }
        assert!(min_angle > 0.0);
    }

    /// Brute-force scan: largest angle from a dense probe set to its nearest
    /// template viewpoint.
    fn max_coverage_gap(poses: &[Pose]) -> f64 {
        let views: Vec<_> = poses.iter().map(viewpoint_of).collect();
        fibonacci_sphere(20_000, 0.123)
            .iter()
            .map(|probe| {
                views
                    .iter()
                    .map(|v| v.dot(probe).clamp(-1.0, 1.0).acos())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn stratification_depends_on_n_and_covers_sphere() {
        let a = sample_template_poses(64, 1.0, 42);
        let b = sample_template_poses(128, 1.0, 42);
        assert!((a[0].rotation - b[0].rotation).amax() > 1e-6);
        assert!(max_coverage_gap(&b).to_degrees() < 40.0);
        assert!(max_coverage_gap(&a).to_degrees() < 40.0);
    }

    #[test]
    fn sampling_is_pure() {
        let a = sample_template_poses(32, 1.5, 5);
        let b = sample_template_poses(32, 1.5, 5);
        assert_eq!(a, b);
    }

    #[test]
    fn random_rotation_is_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }
}
