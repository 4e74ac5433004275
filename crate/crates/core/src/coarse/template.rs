use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CoarseConfig;
use crate::error::{Error, Result};
use crate::geometry::{sample_template_poses, CameraIntrinsics, Pose, TriangleMesh};
use crate::render::crop::{remap_geometry, remap_image, rotation_map_about};
use crate::render::{mask_crop_box, render, render_geometry, CropTransform, GeometryMap, ImageBuffer, Shading};

/// Fraction of the shorter image side the object diameter spans at the
/// template distance.
const TEMPLATE_FILL: f64 = 0.35;

/// A pre-rendered view of the object: image, geometry and the pose and
/// intrinsics it was rendered with.
#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    pub image: ImageBuffer,
    pub geometry: GeometryMap,
    pub pose: Pose,
    pub cam: CameraIntrinsics,
}

impl Template {
    /// The view after rolling the camera by `angle` about its optical axis:
    /// image and geometry rotate about the principal point.
    pub fn rolled(&self, angle: f64) -> Template {
        if angle == 0.0 {
            return self.clone();
        }
        let (w, h) = (self.image.width, self.image.height);
        let map = rotation_map_about(angle, self.cam.cx, self.cam.cy);
        Template {
            image: remap_image(&self.image, w, h, &map),
            geometry: remap_geometry(&self.geometry, w, h, &map),
            pose: Pose::rot_z(angle).compose(&self.pose),
            cam: self.cam,
        }
    }
}

/// Camera distance at which the object spans a fixed share of the image.
pub fn template_distance(mesh: &TriangleMesh, cam: &CameraIntrinsics) -> f64 {
    cam.fx * mesh.diameter / (TEMPLATE_FILL * cam.width.min(cam.height) as f64)
}

/// Intrinsics of the square crop that a query at `pose` seen through `cam`
/// would get: the mask-centroid box of [`mask_crop_box`].
pub fn crop_camera(
    mesh: &TriangleMesh,
    pose: &Pose,
    cam: &CameraIntrinsics,
    margin: f64,
    size: usize,
) -> Result<CameraIntrinsics> {
    let g = render_geometry(mesh, pose, cam)?;
    let bbox = mask_crop_box(&g.mask, g.width, margin).ok_or(Error::EmptyRender)?;
    Ok(CropTransform::new(&bbox, cam, size).virtual_cam)
}

/// Renders one template directly at crop resolution.
pub fn render_template(mesh: &TriangleMesh, pose: &Pose, cam: &CameraIntrinsics, cfg: &CoarseConfig) -> Result<Template> {
    let vcam = crop_camera(mesh, pose, cam, cfg.crop_margin, cfg.crop_size)?;
    let (image, geometry) = render(mesh, pose, &vcam, Shading::Lambertian)?;
    Ok(Template {
        image,
        geometry,
        pose: *pose,
        cam: vcam,
    })
}

/// `cfg.n_templates` views at [`sample_template_poses`], framed as a query
/// crop from `cam` would be.
pub fn build_template_set(mesh: &TriangleMesh, cam: &CameraIntrinsics, cfg: &CoarseConfig, seed: u64) -> Result<Vec<Template>> {
    cfg.validate()?;
    let radius = template_distance(mesh, cam);
    sample_template_poses(cfg.n_templates, radius, seed)
        .iter()
        .map(|p| render_template(mesh, p, cam, cfg))
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseEntry {
    index: usize,
    pose: Pose,
    cam: CameraIntrinsics,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseFile {
    templates: Vec<PoseEntry>,
}

/// Writes `dir/{index:03}.ppm`, `dir/{index:03}.rgmp` and `dir/pose.json`.
pub fn save_template_set(dir: impl AsRef<Path>, set: &[Template]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(set.len());
    for (i, t) in set.iter().enumerate() {
        t.image.write_ppm(dir.join(format!("{i:03}.ppm")))?;
        t.geometry.write(dir.join(format!("{i:03}.rgmp")))?;
        entries.push(PoseEntry {
            index: i,
            pose: t.pose,
            cam: t.cam,
        });
    }
    fs::write(dir.join("pose.json"), serde_json::to_string_pretty(&PoseFile { templates: entries })?)?;
    Ok(())
}

pub fn load_template_set(dir: impl AsRef<Path>) -> Result<Vec<Template>> {
    let dir = dir.as_ref();
    let poses = dir.join("pose.json");
    let file: PoseFile = serde_json::from_str(&fs::read_to_string(&poses)?)?;
    let mut out = Vec::with_capacity(file.templates.len());
    for (k, e) in file.templates.into_iter().enumerate() {
        if e.index != k {
            return Err(Error::format(&poses, format!("entry {k} has index {}", e.index)));
        }
        let image = ImageBuffer::read_ppm(dir.join(format!("{k:03}.ppm")))?;
        let geometry = GeometryMap::read(dir.join(format!("{k:03}.rgmp")))?;
        if !geometry.same_dims(image.width, image.height) || !geometry.same_dims(e.cam.width, e.cam.height) {
            return Err(Error::format(&poses, format!("template {k} has inconsistent sizes")));
        }
        out.push(Template {
            image,
            geometry,
            pose: e.pose,
            cam: e.cam,
        });
    }
    Ok(out)
}
