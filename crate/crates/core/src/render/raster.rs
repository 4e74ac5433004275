use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeometryMap, ImageBuffer};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose, TriangleMesh};

/// Vertices closer than this to the camera plane drop their triangle.
const NEAR_PLANE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shading {
    /// Albedo × (0.2 ambient + 0.8 · max(0, n·l)), fixed camera-frame light.
    #[default]
    Lambertian,
    /// Camera-frame normal mapped to RGB.
    NormalRgb,
}

fn light_dir() -> Vector3<f64> {
    Vector3::new(0.3, 0.4, -1.0).normalize()
}

/// Per-pixel winner of the z-test: triangle index and perspective-correct
/// barycentric weights.
struct Fragment {
    tri: u32,
    weights: [f64; 3],
}

/// Rasterizes the mesh and returns the shaded image and the geometry map.
pub fn render(
    mesh: &TriangleMesh,
    pose: &Pose,
    cam: &CameraIntrinsics,
    shading: Shading,
) -> Result<(ImageBuffer, GeometryMap)> {
    let (geom, frags) = rasterize(mesh, pose, cam)?;
    let mut img = ImageBuffer::new(cam.width, cam.height, 3);
    let light = light_dir();
    let normals: Vec<Vector3<f64>> = (0..mesh.triangles.len())
        .map(|i| pose.rotation * mesh.face_normal(i))
        .collect();
    for (i, frag) in frags.iter().enumerate() {
        let Some(frag) = frag else { continue };
        let n = normals[frag.tri as usize];
        let rgb = match shading {
            Shading::Lambertian => {
                let albedo = mesh.albedo(&geom.coord(i));
                let k = 0.2 + 0.8 * n.dot(&light).max(0.0);
                [albedo[0] * k, albedo[1] * k, albedo[2] * k]
            }
            Shading::NormalRgb => [(n.x + 1.0) * 0.5, (n.y + 1.0) * 0.5, (n.z + 1.0) * 0.5],
        };
        for (c, v) in rgb.iter().enumerate() {
            img.data[i * 3 + c] = v.clamp(0.0, 1.0) as f32;
        }
    }
    Ok((img, geom))
}

/// Geometry-only render (no shading).
pub fn render_geometry(mesh: &TriangleMesh, pose: &Pose, cam: &CameraIntrinsics) -> Result<GeometryMap> {
    rasterize(mesh, pose, cam).map(|(g, _)| g)
}

#[inline]
fn edge(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Top-left ownership for an edge of a positively oriented triangle. The
/// predicate is antisymmetric in edge direction, so a shared edge belongs to
/// exactly one of its two triangles.
#[inline]
fn owns_edge(a: &Vector2<f64>, b: &Vector2<f64>) -> bool {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    dy > 0.0 || (dy == 0.0 && dx < 0.0)
}

fn rasterize(
    mesh: &TriangleMesh,
    pose: &Pose,
    cam: &CameraIntrinsics,
) -> Result<(GeometryMap, Vec<Option<Fragment>>)> {
    let (w, h) = (cam.width, cam.height);
    let cam_pts: Vec<Vector3<f64>> = mesh.vertices.iter().map(|v| pose.transform_point(v)).collect();
    let screen: Vec<Option<Vector2<f64>>> = cam_pts
        .iter()
        .map(|p| {
            (p.z > NEAR_PLANE).then(|| Vector2::new(cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy))
        })
        .collect();
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut frags: Vec<Option<Fragment>> = (0..w * h).map(|_| None).collect();

    for (ti, tri) in mesh.triangles.iter().enumerate() {
        let (Some(s0), Some(s1), Some(s2)) = (screen[tri[0]], screen[tri[1]], screen[tri[2]]) else {
            continue;
        };
        let mut v = [s0, s1, s2];
        let mut z = [cam_pts[tri[0]].z, cam_pts[tri[1]].z, cam_pts[tri[2]].z];
        let mut order = [0usize, 1, 2];
        let mut area = edge(&v[0], &v[1], &v[2]);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        if area < 0.0 {
            v.swap(1, 2);
            z.swap(1, 2);
            order.swap(1, 2);
            area = -area;
        }
        let min_x = v.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let max_x = v.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).floor().min(w as f64 - 1.0);
        let min_y = v.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let max_y = v.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).floor().min(h as f64 - 1.0);
        if min_x > max_x || min_y > max_y {
            continue;
        }
        let own = [owns_edge(&v[1], &v[2]), owns_edge(&v[2], &v[0]), owns_edge(&v[0], &v[1])];
        let inv_z = [1.0 / z[0], 1.0 / z[1], 1.0 / z[2]];
        for py in min_y as usize..=max_y as usize {
            for px in min_x as usize..=max_x as usize {
                let p = Vector2::new(px as f64, py as f64);
                let e = [edge(&v[1], &v[2], &p), edge(&v[2], &v[0], &p), edge(&v[0], &v[1], &p)];
                if !(0..3).all(|k| e[k] > 0.0 || (e[k] == 0.0 && own[k])) {
                    continue;
                }
                let b = [e[0] / area, e[1] / area, e[2] / area];
                let iz = b[0] * inv_z[0] + b[1] * inv_z[1] + b[2] * inv_z[2];
                let depth = 1.0 / iz;
                let idx = py * w + px;
                // Strict test: on equal depth the earlier triangle keeps the pixel.
                if depth < zbuf[idx] {
                    zbuf[idx] = depth;
                    let mut weights = [0.0; 3];
                    for k in 0..3 {
                        weights[order[k]] = b[k] * inv_z[k] * depth;
                    }
                    frags[idx] = Some(Fragment {
                        tri: ti as u32,
                        weights,
                    });
                }
            }
        }
    }

    let mut geom = GeometryMap::empty(w, h);
    for (idx, frag) in frags.iter().enumerate() {
        let Some(f) = frag else { continue };
        let tri = mesh.triangles[f.tri as usize];
        let p = mesh.vertices[tri[0]] * f.weights[0]
            + mesh.vertices[tri[1]] * f.weights[1]
            + mesh.vertices[tri[2]] * f.weights[2];
        geom.set(idx, [p.x as f32, p.y as f32, p.z as f32], zbuf[idx] as f32);
    }
    if geom.mask_count() == 0 {
        return Err(Error::EmptyRender);
    }
    Ok((geom, frags))
}
