use super::field::FlowField;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose, TriangleMesh};
use crate::render::crop::nearest_index;
use crate::render::{render_geometry, GeometryMap};

/// Relative depth tolerance of the visibility test, in object diameters.
const OCCLUSION_TOLERANCE: f64 = 0.01;

/// Ground-truth flow from a geometry map rendered at `pose_a` to the view at
/// `pose_b`. Pixels whose surface point leaves the image or is hidden at
/// `pose_b` are invalid.
pub fn gt_flow_from_geometry(
    geom_a: &GeometryMap,
    pose_a: &Pose,
    pose_b: &Pose,
    cam: &CameraIntrinsics,
    mesh: &TriangleMesh,
) -> Result<FlowField> {
    if !geom_a.same_dims(cam.width, cam.height) {
        return Err(Error::DimMismatch("geometry map does not match the camera".into()));
    }
    let mut out = FlowField::invalid(geom_a.width, geom_a.height);
    if pose_a == pose_b {
        for (i, &m) in geom_a.mask.iter().enumerate() {
            if m {
                out.set(i, 0.0, 0.0);
            }
        }
        return Ok(out);
    }
    let geom_b = match render_geometry(mesh, pose_b, cam) {
        Ok(g) => g,
        Err(Error::EmptyRender) => return Ok(out),
        Err(e) => return Err(e),
    };
    let tol = OCCLUSION_TOLERANCE * mesh.diameter;
    for i in 0..geom_a.mask.len() {
        if !geom_a.mask[i] {
            continue;
        }
        let pc = pose_b.transform_point(&geom_a.coord(i));
        let Ok(uv) = cam.project_camera_point(&pc) else {
            continue;
        };
        let Some(j) = nearest_index(uv.x, uv.y, cam.width, cam.height) else {
            continue;
        };
        if !geom_b.mask[j] || (geom_b.depth[j] as f64 - pc.z).abs() > tol {
            continue;
        }
        let (x, y) = ((i % geom_a.width) as f64, (i / geom_a.width) as f64);
        out.set(i, (uv.x - x) as f32, (uv.y - y) as f32);
    }
    Ok(out)
}
