use crate::error::Result;
use crate::geometry::{CameraIntrinsics, Pose, TriangleMesh};
use crate::render::{render_geometry, ImageBuffer};

pub const GT_COLOR: [f32; 3] = [0.0, 1.0, 0.0];
pub const PRED_COLOR: [f32; 3] = [0.0, 0.0, 1.0];

/// Silhouette edge of the mesh at `pose`: masked pixels with an unmasked
/// 4-neighbor or on the image border. Empty when nothing is visible.
pub fn silhouette_edge(mesh: &TriangleMesh, pose: &Pose, cam: &CameraIntrinsics) -> Vec<bool> {
    let (w, h) = (cam.width, cam.height);
    let Ok(g) = render_geometry(mesh, pose, cam) else {
        return vec![false; w * h];
    };
    (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            g.mask[i]
                && (x == 0
                    || y == 0
                    || x + 1 == w
                    || y + 1 == h
                    || !g.mask[i - 1]
                    || !g.mask[i + 1]
                    || !g.mask[i - w]
                    || !g.mask[i + w])
        })
        .collect()
}

/// `image` with the ground-truth contour in green and the predicted one in
/// blue (drawn last).
pub fn draw_overlay(image: &ImageBuffer, mesh: &TriangleMesh, cam: &CameraIntrinsics, gt: &Pose, pred: Option<&Pose>) -> Result<ImageBuffer> {
    let mut out = if image.channels == 3 {
        image.clone()
    } else {
        let g = image.to_gray();
        ImageBuffer::from_data(g.width, g.height, 3, g.data.iter().flat_map(|&v| [v; 3]).collect())?
    };
    let mut paint = |edge: Vec<bool>, color: [f32; 3]| {
        for (i, e) in edge.into_iter().enumerate() {
            if e {
                out.data[i * 3..i * 3 + 3].copy_from_slice(&color);
            }
        }
    };
    paint(silhouette_edge(mesh, gt, cam), GT_COLOR);
    if let Some(p) = pred {
        paint(silhouette_edge(mesh, p, cam), PRED_COLOR);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::scene::{object_mesh, SceneConfig};
    use nalgebra::Vector3;

    #[test]
    fn contours_are_colored() {
        let cam = SceneConfig::default().camera().unwrap();
        let mesh = object_mesh(0, 1).unwrap();
        let gt = Pose::from_translation(Vector3::new(0.0, 0.0, 3.0));
        let pred = Pose::from_translation(Vector3::new(0.3, 0.0, 3.0));
        let img = ImageBuffer::new(cam.width, cam.height, 3);
        let o = draw_overlay(&img, &mesh, &cam, &gt, Some(&pred)).unwrap();
        let count = |c: [f32; 3]| o.data.chunks(3).filter(|p| *p == c).count();
        assert!(count(GT_COLOR) > 50 && count(PRED_COLOR) > 50);
        let edge = silhouette_edge(&mesh, &gt, &cam);
        assert!(edge.iter().filter(|&&e| e).count() < 2000);
    }
}
