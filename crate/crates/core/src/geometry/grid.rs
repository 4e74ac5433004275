use nalgebra::Vector3;

use super::{Pose, TriangleMesh};

/// Points per axis of the bounding-box lattice.
pub const GRID_SIDE: usize = 3;

/// Fixed model-frame lattice transformed by a pose.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseGrid {
    pub points: Vec<Vector3<f64>>,
}

/// The `GRID_SIDE³` lattice spanning the mesh bounding box, x fastest.
pub fn bbox_lattice(mesh: &TriangleMesh) -> Vec<Vector3<f64>> {
    let (lo, hi) = mesh.bounding_box();
    let step = |k: usize| k as f64 / (GRID_SIDE - 1) as f64;
    let mut pts = Vec::with_capacity(GRID_SIDE.pow(3));
    for k in 0..GRID_SIDE {
        for j in 0..GRID_SIDE {
            for i in 0..GRID_SIDE {
                let f = Vector3::new(step(i), step(j), step(k));
                pts.push(lo + (hi - lo).component_mul(&f));
            }
        }
    }
    pts
}

impl PoseGrid {
    pub fn new(lattice: &[Vector3<f64>], pose: &Pose) -> Self {
        Self {
            points: lattice.iter().map(|p| pose.transform_point(p)).collect(),
        }
    }

    pub fn from_mesh(mesh: &TriangleMesh, pose: &Pose) -> Self {
        Self::new(&bbox_lattice(mesh), pose)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_procedural_mesh, MeshSpec};

    #[test]
    fn lattice_size_and_determinism() {
        let mesh = generate_procedural_mesh(&MeshSpec::Box { size: [1.0, 2.0, 3.0] }, 0).unwrap();
        let pose = Pose::from_axis_angle(Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.0, 0.0, 4.0));
        let a = PoseGrid::from_mesh(&mesh, &pose);
        let b = PoseGrid::from_mesh(&mesh, &pose);
        assert_eq!(a.points.len(), 27);
        assert_eq!(a, b);
        let lat = bbox_lattice(&mesh);
        assert_eq!(lat[0], Vector3::new(-0.5, -1.0, -1.5));
        assert_eq!(lat[26], Vector3::new(0.5, 1.0, 1.5));
    }
}
