//! C interface to the pose pipeline.
//!
//! Every function returns a [`GpStatus`]. On failure the message is kept per
//! thread and read with [`gp_last_error`]. Objects cross the boundary as
//! opaque handles released by their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use geopose::coarse::{build_template_set, estimate_coarse_pose_detailed, load_template_set, save_template_set, CoarseConfig, Template};
use geopose::eval::{mspd, mssd, vsd};
use geopose::geometry::{CameraIntrinsics, Pose, TriangleMesh};
use geopose::pipeline::scene::object_mesh;
use geopose::refine::{refine_pose, QueryView, RefineNets, RefinementConfig};
use geopose::render::ImageBuffer;
use geopose::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Geometry = 5,
    NoSolution = 6,
    Config = 7,
    Panic = 8,
}

impl From<&Error> for GpStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io(_) => GpStatus::Io,
            Error::Format { .. } | Error::Json(_) | Error::ManifestMismatch(_) => GpStatus::Format,
            Error::NonPositiveDepth(_) | Error::EmptyRender | Error::EmptyIntersection | Error::InvalidMesh(_) | Error::InvalidPose(_) => {
                GpStatus::Geometry
            }
            Error::TooFewCorrespondences { .. }
            | Error::DegenerateConfiguration { .. }
            | Error::InsufficientCorrespondences(_)
            | Error::NaNGuard => GpStatus::NoSolution,
            Error::Config(_) | Error::KTooLarge { .. } => GpStatus::Config,
            _ => GpStatus::InvalidArgument,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), (GpStatus, String)>) -> GpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            GpStatus::Ok
        }
        Ok(Err((s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            GpStatus::Panic
        }
    }
}

fn lift<T>(r: geopose::Result<T>) -> Result<T, (GpStatus, String)> {
    r.map_err(|e| (GpStatus::from(&e), e.to_string()))
}

fn null(what: &str) -> (GpStatus, String) {
    (GpStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (GpStatus, String) {
    (GpStatus::InvalidArgument, msg.into())
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (GpStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path<'a>(p: *const c_char, what: &str) -> Result<&'a Path, (GpStatus, String)> {
    let s = deref(p, what)?;
    CStr::from_ptr(s).to_str().map(Path::new).map_err(|_| invalid(format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn gp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn gp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Pinhole intrinsics; pixel centers at integer coordinates.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl GpCamera {
    fn to_core(self) -> geopose::Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width as usize, self.height as usize)
    }
}

/// Rigid transform, row-major 4x4 (model to camera).
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpPose {
    pub m: [f64; 16],
}

impl GpPose {
    fn to_core(self) -> geopose::Result<Pose> {
        Pose::from_row_major(&self.m)
    }
    fn from_core(p: &Pose) -> Self {
        Self { m: p.to_row_major() }
    }
}

/// Opaque triangle mesh.
pub struct GpMesh(TriangleMesh);

/// Opaque template set.
pub struct GpTemplateSet(Vec<Template>);

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), (GpStatus, String)> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

/// The `index`-th procedural benchmark object for `seed`.
#[no_mangle]
pub unsafe extern "C" fn gp_mesh_procedural(index: u32, seed: u64, out: *mut *mut GpMesh) -> GpStatus {
    guard(|| {
        let m = lift(object_mesh(index as usize, seed))?;
        put(out, GpMesh(m))
    })
}

/// Loads an ASCII or binary PLY with an optional JSON sidecar (symmetries,
/// texture); `sidecar` may be null.
#[no_mangle]
pub unsafe extern "C" fn gp_mesh_load(ply: *const c_char, sidecar: *const c_char, out: *mut *mut GpMesh) -> GpStatus {
    guard(|| {
        let ply = path(ply, "ply path")?;
        let side = if sidecar.is_null() { None } else { Some(path(sidecar, "sidecar path")?) };
        put(out, GpMesh(lift(TriangleMesh::load(ply, side))?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn gp_mesh_diameter(mesh: *const GpMesh, out: *mut f64) -> GpStatus {
    guard(|| {
        let m = deref(mesh, "mesh")?;
        *out.as_mut().ok_or_else(|| null("output"))? = m.0.diameter;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gp_mesh_free(mesh: *mut GpMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

fn coarse_cfg(n: u32, k: u32) -> CoarseConfig {
    CoarseConfig {
        n_templates: n as usize,
        k_selected: k.max(1) as usize,
        ..CoarseConfig::default()
    }
}

/// Renders `n` templates of `mesh` framed for queries seen through `cam`.
#[no_mangle]
pub unsafe extern "C" fn gp_templates_build(
    mesh: *const GpMesh,
    cam: *const GpCamera,
    n: u32,
    seed: u64,
    out: *mut *mut GpTemplateSet,
) -> GpStatus {
    guard(|| {
        let m = deref(mesh, "mesh")?;
        let c = lift(deref(cam, "camera")?.to_core())?;
        let cfg = coarse_cfg(n, 1);
        put(out, GpTemplateSet(lift(build_template_set(&m.0, &c, &cfg, seed))?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn gp_templates_load(dir: *const c_char, out: *mut *mut GpTemplateSet) -> GpStatus {
    guard(|| {
        let d = path(dir, "directory")?;
        put(out, GpTemplateSet(lift(load_template_set(d))?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn gp_templates_save(set: *const GpTemplateSet, dir: *const c_char) -> GpStatus {
    guard(|| {
        let s = deref(set, "template set")?;
        lift(save_template_set(path(dir, "directory")?, &s.0))
    })
}

#[no_mangle]
pub unsafe extern "C" fn gp_templates_count(set: *const GpTemplateSet, out: *mut u32) -> GpStatus {
    guard(|| {
        let s = deref(set, "template set")?;
        *out.as_mut().ok_or_else(|| null("output"))? = s.0.len() as u32;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gp_templates_free(set: *mut GpTemplateSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

struct Crop {
    image: ImageBuffer,
    mask: Vec<bool>,
}

/// `rgb`: width*height*3 floats in [0, 1], row-major; `mask`: width*height
/// bytes, nonzero for object pixels.
unsafe fn crop(rgb: *const f32, mask: *const u8, cam: &CameraIntrinsics) -> Result<Crop, (GpStatus, String)> {
    let n = cam.width * cam.height;
    if rgb.is_null() || mask.is_null() {
        return Err(null("image or mask"));
    }
    let data = std::slice::from_raw_parts(rgb, n * 3).to_vec();
    let mask = std::slice::from_raw_parts(mask, n).iter().map(|&m| m != 0).collect();
    Ok(Crop {
        image: lift(ImageBuffer::from_data(cam.width, cam.height, 3, data))?,
        mask,
    })
}

/// Coarse pose of the object in a query crop with intrinsics `cam` (same
/// size as the templates), voting over the `k` best templates.
#[no_mangle]
pub unsafe extern "C" fn gp_estimate_coarse(
    rgb: *const f32,
    mask: *const u8,
    cam: *const GpCamera,
    mesh: *const GpMesh,
    set: *const GpTemplateSet,
    k: u32,
    seed: u64,
    out: *mut GpPose,
) -> GpStatus {
    guard(|| {
        let c = lift(deref(cam, "camera")?.to_core())?;
        let (m, s) = (deref(mesh, "mesh")?, deref(set, "template set")?);
        let out = out.as_mut().ok_or_else(|| null("output pose"))?;
        let q = crop(rgb, mask, &c)?;
        let mut cfg = coarse_cfg(s.0.len() as u32, k);
        cfg.crop_size = c.width;
        if c.width != c.height {
            return Err(invalid("query crops must be square"));
        }
        let r = lift(estimate_coarse_pose_detailed(&q.image, &q.mask, &s.0, None, &m.0.symmetries, &c, &cfg, seed))?;
        *out = GpPose::from_core(&r.pose);
        Ok(())
    })
}

/// Geometric refinement of `initial` against the query crop with the
/// default configuration and `iterations` steps.
#[no_mangle]
pub unsafe extern "C" fn gp_refine(
    rgb: *const f32,
    mask: *const u8,
    cam: *const GpCamera,
    mesh: *const GpMesh,
    initial: *const GpPose,
    iterations: u32,
    seed: u64,
    out: *mut GpPose,
) -> GpStatus {
    guard(|| {
        let c = lift(deref(cam, "camera")?.to_core())?;
        let m = deref(mesh, "mesh")?;
        let p0 = lift(deref(initial, "initial pose")?.to_core())?;
        let out = out.as_mut().ok_or_else(|| null("output pose"))?;
        let q = crop(rgb, mask, &c)?;
        let cfg = RefinementConfig {
            m_iterations: iterations as usize,
            ..RefinementConfig::default()
        };
        let nets = RefineNets::new(cfg.n_freq, seed);
        let view = QueryView {
            image: &q.image,
            mask: &q.mask,
            cam: &c,
            gt_geometry: None,
            gt_pose: None,
        };
        let (p, _) = lift(refine_pose(&view, &p0, &m.0, &nets, &cfg, seed))?;
        *out = GpPose::from_core(&p);
        Ok(())
    })
}

/// Symmetry-aware maximum surface distance, model units.
#[no_mangle]
pub unsafe extern "C" fn gp_mssd(pred: *const GpPose, gt: *const GpPose, mesh: *const GpMesh, out: *mut f64) -> GpStatus {
    guard(|| {
        let (p, g) = (lift(deref(pred, "pred")?.to_core())?, lift(deref(gt, "gt")?.to_core())?);
        let m = deref(mesh, "mesh")?;
        *out.as_mut().ok_or_else(|| null("output"))? = mssd(&p, &g, &m.0);
        Ok(())
    })
}

/// Symmetry-aware maximum projection distance, pixels.
#[no_mangle]
pub unsafe extern "C" fn gp_mspd(
    pred: *const GpPose,
    gt: *const GpPose,
    mesh: *const GpMesh,
    cam: *const GpCamera,
    out: *mut f64,
) -> GpStatus {
    guard(|| {
        let (p, g) = (lift(deref(pred, "pred")?.to_core())?, lift(deref(gt, "gt")?.to_core())?);
        let (m, c) = (deref(mesh, "mesh")?, lift(deref(cam, "camera")?.to_core())?);
        *out.as_mut().ok_or_else(|| null("output"))? = lift(mspd(&p, &g, &m.0, &c))?;
        Ok(())
    })
}

/// Visible surface discrepancy in [0, 1]; `tau` and `delta` in model units.
#[no_mangle]
pub unsafe extern "C" fn gp_vsd(
    pred: *const GpPose,
    gt: *const GpPose,
    mesh: *const GpMesh,
    cam: *const GpCamera,
    tau: f64,
    delta: f64,
    out: *mut f64,
) -> GpStatus {
    guard(|| {
        let (p, g) = (lift(deref(pred, "pred")?.to_core())?, lift(deref(gt, "gt")?.to_core())?);
        let (m, c) = (deref(mesh, "mesh")?, lift(deref(cam, "camera")?.to_core())?);
        if !(tau > 0.0 && delta > 0.0) {
            return Err(invalid("tau and delta must be positive"));
        }
        *out.as_mut().ok_or_else(|| null("output"))? = lift(vsd(&p, &g, &m.0, &c, tau, delta))?;
        Ok(())
    })
}
