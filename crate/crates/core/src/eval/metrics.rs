use crate::error::{Error, Result};
use crate::geometry::{project, CameraIntrinsics, Pose, TriangleMesh};
use crate::render::{render_geometry, GeometryMap};

/// Rotation error to the closest symmetry-equivalent ground truth, radians.
pub fn symmetric_rotation_error(pred: &Pose, gt: &Pose, symmetries: &[Pose]) -> f64 {
    symmetries
        .iter()
        .map(|s| pred.rotation_error(&gt.compose(s)))
        .fold(pred.rotation_error(gt), f64::min)
}

/// Maximum symmetry-aware surface distance in model units.
pub fn mssd(pred: &Pose, gt: &Pose, mesh: &TriangleMesh) -> f64 {
    let per_sym = |s: &Pose| {
        let g = gt.compose(s);
        mesh.vertices
            .iter()
            .map(|v| (pred.transform_point(v) - g.transform_point(v)).norm())
            .fold(0.0, f64::max)
    };
    mesh.symmetries.iter().map(per_sym).fold(per_sym(&Pose::identity()), f64::min)
}

/// Maximum symmetry-aware projection distance in pixels.
pub fn mspd(pred: &Pose, gt: &Pose, mesh: &TriangleMesh, cam: &CameraIntrinsics) -> Result<f64> {
    let projected = |p: &Pose| -> Result<Vec<_>> { mesh.vertices.iter().map(|v| project(v, p, cam)).collect() };
    let a = projected(pred)?;
    let mut best = f64::INFINITY;
    for s in mesh.symmetries.iter().chain([&Pose::identity()]) {
        let b = projected(&gt.compose(s))?;
        best = best.min(a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max));
    }
    Ok(best)
}

fn render_or_empty(mesh: &TriangleMesh, pose: &Pose, cam: &CameraIntrinsics) -> Result<GeometryMap> {
    match render_geometry(mesh, pose, cam) {
        Err(Error::EmptyRender) | Err(Error::NonPositiveDepth(_)) => Ok(GeometryMap::empty(cam.width, cam.height)),
        r => r,
    }
}

/// Visible surface discrepancy of a single-object scene whose depth is the
/// ground-truth render. `tau` and `delta` are in model units.
pub fn vsd(pred: &Pose, gt: &Pose, mesh: &TriangleMesh, cam: &CameraIntrinsics, tau: f64, delta: f64) -> Result<f64> {
    Ok(vsd_many(pred, gt, mesh, cam, &[tau], delta)?[0])
}

/// [`vsd`] for several `tau` on one pair of renders.
pub fn vsd_many(
    pred: &Pose,
    gt: &Pose,
    mesh: &TriangleMesh,
    cam: &CameraIntrinsics,
    taus: &[f64],
    delta: f64,
) -> Result<Vec<f64>> {
    let g = render_geometry(mesh, gt, cam)?;
    let p = render_or_empty(mesh, pred, cam)?;
    let mut union = 0usize;
    let mut bad = vec![0usize; taus.len()];
    for i in 0..g.mask.len() {
        let dg = g.mask[i].then(|| g.depth[i] as f64);
        // The scene is the ground-truth object: estimate pixels hidden behind
        // it by more than delta are not visible.
        let dp = (p.mask[i] && dg.is_none_or(|s| p.depth[i] as f64 <= s + delta)).then(|| p.depth[i] as f64);
        match (dp, dg) {
            (None, None) => {}
            (Some(a), Some(b)) => {
                union += 1;
                for (n, t) in bad.iter_mut().zip(taus) {
                    *n += ((a - b).abs() > *t) as usize;
                }
            }
            _ => {
                union += 1;
                bad.iter_mut().for_each(|n| *n += 1);
            }
        }
    }
    Ok(bad.iter().map(|&n| n as f64 / union as f64).collect())
}
