use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::{GeometryMap, ImageBuffer};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose, TriangleMesh};

/// Axis-aligned box in pixel-edge coordinates: pixel `i` spans `[i, i + 1)`,
/// so the full image is `(0, 0, width, height)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::new(0.0, 0.0, width as f64, height as f64)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    /// Same center, extents multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> BBox {
        let (cx, cy) = ((self.x0 + self.x1) * 0.5, (self.y0 + self.y1) * 0.5);
        let (hw, hh) = (self.width() * 0.5 * factor, self.height() * 0.5 * factor);
        BBox::new(cx - hw, cy - hh, cx + hw, cy + hh)
    }

    fn intersects_image(&self, width: usize, height: usize) -> bool {
        self.x1.min(width as f64) > self.x0.max(0.0) && self.y1.min(height as f64) > self.y0.max(0.0)
    }
}

/// Tight box around the projected mesh vertices.
pub fn object_bbox(mesh: &TriangleMesh, pose: &Pose, cam: &CameraIntrinsics) -> Result<BBox> {
    let mut b = BBox::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for v in &mesh.vertices {
        let uv = cam.project_camera_point(&pose.transform_point(v))?;
        b.x0 = b.x0.min(uv.x + 0.5);
        b.y0 = b.y0.min(uv.y + 0.5);
        b.x1 = b.x1.max(uv.x + 0.5);
        b.y1 = b.y1.max(uv.y + 0.5);
    }
    Ok(b)
}

/// Square box centered on the mask centroid whose inscribed circle holds
/// every mask pixel, enlarged by `margin`. Rotating the object about the
/// optical axis rotates the centroid and leaves the side unchanged.
pub fn mask_crop_box(mask: &[bool], width: usize, margin: f64) -> Option<BBox> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        sx += (i % width) as f64;
        sy += (i / width) as f64;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let (cx, cy) = (sx / n as f64, sy / n as f64);
    let r2 = mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| ((i % width) as f64 - cx).powi(2) + ((i / width) as f64 - cy).powi(2))
        .fold(0.0, f64::max);
    let half = (r2.sqrt() + 0.5) * margin;
    Some(BBox::new(cx + 0.5 - half, cy + 0.5 - half, cx + 0.5 + half, cy + 0.5 + half))
}

/// Affine pixel map of a square crop: `p_out = scale·(p_in + ½ − origin) − ½`
/// in pixel-center coordinates, plus the matching virtual intrinsics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    pub scale: f64,
    pub origin: [f64; 2],
    pub out_size: usize,
    /// Intrinsics under which a render reproduces the crop. The principal
    /// point may fall outside the crop for off-center objects.
    pub virtual_cam: CameraIntrinsics,
}

impl CropTransform {
    pub fn new(bbox: &BBox, cam: &CameraIntrinsics, out: usize) -> Self {
        let side = bbox.width().max(bbox.height());
        let (cx, cy) = ((bbox.x0 + bbox.x1) * 0.5, (bbox.y0 + bbox.y1) * 0.5);
        let origin = [cx - side * 0.5, cy - side * 0.5];
        let scale = out as f64 / side;
        let virtual_cam = CameraIntrinsics {
            fx: cam.fx * scale,
            fy: cam.fy * scale,
            cx: scale * (cam.cx + 0.5 - origin[0]) - 0.5,
            cy: scale * (cam.cy + 0.5 - origin[1]) - 0.5,
            width: out,
            height: out,
        };
        Self {
            scale,
            origin,
            out_size: out,
            virtual_cam,
        }
    }

    pub fn to_crop(&self, p: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(
            self.scale * (p.x + 0.5 - self.origin[0]) - 0.5,
            self.scale * (p.y + 0.5 - self.origin[1]) - 0.5,
        )
    }

    pub fn to_source(&self, p: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(
            (p.x + 0.5) / self.scale + self.origin[0] - 0.5,
            (p.y + 0.5) / self.scale + self.origin[1] - 0.5,
        )
    }
}

/// Square crop around `bbox` (shorter side padded), resized to `out × out`:
/// bilinear for the image, nearest neighbor for geometry and mask.
pub fn crop_and_resize(
    image: &ImageBuffer,
    geom: &GeometryMap,
    bbox: &BBox,
    cam: &CameraIntrinsics,
    out: usize,
) -> Result<(ImageBuffer, GeometryMap, CropTransform)> {
    if !image.same_dims(&ImageBuffer::new(geom.width, geom.height, 1)) {
        return Err(Error::DimMismatch("image and geometry sizes differ".into()));
    }
    if !(bbox.width() > 0.0 && bbox.height() > 0.0) || !bbox.intersects_image(image.width, image.height) {
        return Err(Error::EmptyIntersection);
    }
    let tf = CropTransform::new(bbox, cam, out);
    let img = remap_image(image, out, out, |x, y| {
        let s = tf.to_source(&Vector2::new(x, y));
        (s.x, s.y)
    });
    let g = remap_geometry(geom, out, out, |x, y| {
        let s = tf.to_source(&Vector2::new(x, y));
        (s.x, s.y)
    });
    Ok((img, g, tf))
}

/// Backward bilinear remap: output pixel `(x, y)` reads `src` at `map(x, y)`.
pub fn remap_image(
    src: &ImageBuffer,
    width: usize,
    height: usize,
    map: impl Fn(f64, f64) -> (f64, f64),
) -> ImageBuffer {
    let mut out = ImageBuffer::new(width, height, src.channels);
    let mut px = vec![0.0f32; src.channels];
    for y in 0..height {
        for x in 0..width {
            let (sx, sy) = map(x as f64, y as f64);
            src.sample_bilinear(sx, sy, &mut px);
            let base = (y * width + x) * src.channels;
            out.data[base..base + src.channels].copy_from_slice(&px);
        }
    }
    out
}

/// Backward nearest-neighbor remap of a geometry map; samples falling
/// outside `src` or on unmasked pixels stay unmasked.
pub fn remap_geometry(
    src: &GeometryMap,
    width: usize,
    height: usize,
    map: impl Fn(f64, f64) -> (f64, f64),
) -> GeometryMap {
    let mut out = GeometryMap::empty(width, height);
    for y in 0..height {
        for x in 0..width {
            let (sx, sy) = map(x as f64, y as f64);
            if let Some(j) = nearest_index(sx, sy, src.width, src.height) {
                if src.mask[j] {
                    out.set(y * width + x, src.coords[j], src.depth[j]);
                }
            }
        }
    }
    out
}

#[inline]
pub(crate) fn nearest_index(x: f64, y: f64, width: usize, height: usize) -> Option<usize> {
    let (rx, ry) = (x.round(), y.round());
    if rx < 0.0 || ry < 0.0 || rx >= width as f64 || ry >= height as f64 || !rx.is_finite() || !ry.is_finite() {
        return None;
    }
    Some(ry as usize * width + rx as usize)
}

/// Backward map of a rotation by `angle` (radians, image y down) about the
/// image center: returns where output pixel `(x, y)` samples the source.
pub fn rotation_map(angle: f64, width: usize, height: usize) -> impl Fn(f64, f64) -> (f64, f64) {
    rotation_map_about(angle, (width as f64 - 1.0) * 0.5, (height as f64 - 1.0) * 0.5)
}

/// As [`rotation_map`], about an arbitrary center. About the principal point
/// this is the image of a camera roll `Rz(angle)`.
pub fn rotation_map_about(angle: f64, cx: f64, cy: f64) -> impl Fn(f64, f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    move |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        (c * dx + s * dy + cx, -s * dx + c * dy + cy)
    }
}
