//! Rigid-body math, pinhole camera, meshes, pose sampling and PnP.

pub mod camera;
pub mod grid;
pub mod mesh;
pub mod pnp;
pub mod pose;
pub mod sampling;

pub use camera::{project, CameraIntrinsics};
pub use grid::PoseGrid;
pub use mesh::{generate_procedural_mesh, MeshSpec, Texture, TextureParams, TriangleMesh};
pub use pnp::{solve_pnp_ransac, tighten_pose, Correspondence, PnpSolution, RansacConfig};
pub use pose::Pose;
pub use sampling::sample_template_poses;
