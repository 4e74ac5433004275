use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coarse::template::template_distance;
use crate::error::{Error, Result};
use crate::geometry::sampling::random_rotation;
use crate::geometry::{generate_procedural_mesh, CameraIntrinsics, MeshSpec, Pose, TriangleMesh};
use crate::render::{crop_and_resize, mask_crop_box, render, render_geometry, GeometryMap, ImageBuffer, Shading};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub objects: usize,
    pub poses_per_object: usize,
    /// Query depth range as multiples of the template distance.
    pub depth_range: [f64; 2],
    /// Largest offset of the projected object center from the image center,
    /// as a fraction of the half image size.
    pub max_offset: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            focal: 572.0,
            objects: 10,
            poses_per_object: 20,
            depth_range: [0.85, 1.2],
            max_offset: 0.4,
        }
    }
}

impl SceneConfig {
    pub fn camera(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(
            self.focal,
            self.focal,
            (self.width as f64 - 1.0) * 0.5,
            (self.height as f64 - 1.0) * 0.5,
            self.width,
            self.height,
        )
    }
}

/// The `i`-th procedural object: families cycle box, cylinder, deformed
/// sphere, composite, with seeded proportions.
pub fn object_spec(i: usize, seed: u64) -> MeshSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x5eed_0000 + i as u64));
    let mut u = |a: f64, b: f64| rng.gen_range(a..b);
    match i % 4 {
        0 => MeshSpec::Box {
            size: [u(0.35, 0.6), u(0.25, 0.45), u(0.15, 0.3)],
        },
        1 => MeshSpec::CappedCylinder {
            radius: u(0.15, 0.25),
            height: u(0.35, 0.6),
            segments: 24,
            symmetry_fold: if i % 8 == 1 { 4 } else { 1 },
        },
        2 => MeshSpec::DeformedIcosphere {
            radius: u(0.22, 0.3),
            subdivisions: 2,
            amplitude: u(0.1, 0.25),
        },
        _ => MeshSpec::Composite {
            body: [u(0.25, 0.35), u(0.2, 0.3), u(0.15, 0.25)],
            arm_radius: u(0.04, 0.07),
            arm_length: u(0.1, 0.2),
            segments: 12,
        },
    }
}

pub fn object_mesh(i: usize, seed: u64) -> Result<TriangleMesh> {
    generate_procedural_mesh(&object_spec(i, seed), seed.wrapping_add(i as u64))
}

/// Uniform random orientation; depth and image position drawn from the
/// configured ranges.
pub fn sample_query_pose(mesh: &TriangleMesh, cam: &CameraIntrinsics, cfg: &SceneConfig, rng: &mut impl Rng) -> Pose {
    let r = random_rotation(rng);
    let z = template_distance(mesh, cam) * rng.gen_range(cfg.depth_range[0]..cfg.depth_range[1]);
    let du = rng.gen_range(-cfg.max_offset..cfg.max_offset) * cam.width as f64 * 0.5;
    let dv = rng.gen_range(-cfg.max_offset..cfg.max_offset) * cam.height as f64 * 0.5;
    Pose {
        rotation: r,
        translation: Vector3::new(du * z / cam.fx, dv * z / cam.fy, z),
    }
}

/// A query crop with its ground truth.
#[derive(Clone, Debug)]
pub struct Query {
    pub image: ImageBuffer,
    pub mask: Vec<bool>,
    /// Intrinsics of the crop.
    pub cam: CameraIntrinsics,
    pub gt_geometry: GeometryMap,
}

/// Renders the full frame and cuts the mask-centered square crop. The
/// geometry and mask are rendered again in the crop camera, so they hold
/// exact coordinates at crop pixel centers.
pub fn render_query(mesh: &TriangleMesh, pose: &Pose, cam: &CameraIntrinsics, margin: f64, size: usize) -> Result<Query> {
    let (img, geom) = render(mesh, pose, cam, Shading::Lambertian)?;
    let bbox = mask_crop_box(&geom.mask, geom.width, margin).ok_or(Error::EmptyRender)?;
    let (image, _, tf) = crop_and_resize(&img, &geom, &bbox, cam, size)?;
    let gt_geometry = render_geometry(mesh, pose, &tf.virtual_cam)?;
    Ok(Query {
        mask: gt_geometry.mask.clone(),
        image,
        cam: tf.virtual_cam,
        gt_geometry,
    })
}
