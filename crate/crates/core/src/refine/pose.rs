use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::encoding::{decode_point, positional_encode, EncodedGeometryMap, EncodingConfig};
use super::net::{AttentionMode, GeometryNet, NetInputs, RelPoseNet};
use super::upsample::convex_upsample;
use crate::error::{Error, Result};
use crate::flow::{estimate_flow, forward_backward_consistency, FlowConfig};
use crate::geometry::{solve_pnp_ransac, tighten_pose, CameraIntrinsics, Correspondence, Pose, RansacConfig, TriangleMesh};
use crate::losses::pose_loss;
use crate::render::{render, render_geometry, GeometryMap, ImageBuffer, Shading};

/// Same schedule as the coarse stage.
const TIGHTEN_PX: [f64; 3] = [1.0, 0.5, 0.25];

/// Depth agreement needed to interpolate reference coordinates.
const SAMPLE_REL_DEPTH: f64 = 0.01;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Decode the query encoding and solve PnP.
    #[default]
    Geometric,
    /// Regress the pose update from stacked encodings.
    Learned,
}

/// Where the fixed query encoding comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GeometrySource {
    /// Encoded ground-truth query geometry.
    Oracle,
    /// The geometry network against a render at the initial pose.
    Network,
    /// Reference geometry at the initial pose carried to the query by
    /// optical flow.
    #[default]
    FlowWarp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinementConfig {
    pub m_iterations: usize,
    pub gamma: f64,
    pub estimator: Estimator,
    pub attention: AttentionMode,
    pub geometry: GeometrySource,
    pub n_freq: usize,
    pub flow: FlowConfig,
    pub ransac: RansacConfig,
    /// Warped reference coordinates with a larger forward-backward error are
    /// dropped.
    pub gate_fb_px: f64,
    pub corr_stride: usize,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            m_iterations: 5,
            gamma: 0.8,
            estimator: Estimator::Geometric,
            attention: AttentionMode::CorrelationGuided,
            geometry: GeometrySource::FlowWarp,
            n_freq: 5,
            flow: FlowConfig::default(),
            ransac: RansacConfig::default(),
            gate_fb_px: 3.0,
            corr_stride: 1,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_iterations == 0 {
            return Err(Error::Config("m_iterations must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.n_freq == 0 || self.corr_stride == 0 {
            return Err(Error::Config("n_freq and corr_stride must be positive".into()));
        }
        Ok(())
    }

    pub fn encoding(&self, mesh: &TriangleMesh) -> EncodingConfig {
        EncodingConfig::for_diameter(self.n_freq, mesh.diameter)
    }
}

/// A query crop as the refinement stage sees it.
#[derive(Clone, Copy, Debug)]
pub struct QueryView<'a> {
    pub image: &'a ImageBuffer,
    pub mask: &'a [bool],
    /// Intrinsics of the crop.
    pub cam: &'a CameraIntrinsics,
    /// Needed by [`GeometrySource::Oracle`] only.
    pub gt_geometry: Option<&'a GeometryMap>,
    /// When known, the trace reports the pose loss against it.
    pub gt_pose: Option<Pose>,
}

/// Networks used by the learned paths.
#[derive(Clone, Debug)]
pub struct RefineNets {
    pub geometry: GeometryNet,
    pub relpose: RelPoseNet,
}

impl RefineNets {
    pub fn new(n_freq: usize, seed: u64) -> Self {
        Self {
            geometry: GeometryNet::new(n_freq, seed),
            relpose: RelPoseNet::new(n_freq, seed ^ 0x9e37_79b9),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Row-major 4×4.
    pub pose: Vec<f64>,
    pub pose_loss: f64,
}

/// Per-iteration poses. `pose_loss` is measured against the ground truth
/// when the query carries it, otherwise against the previous iterate.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineTrace {
    pub iterations: Vec<TraceEntry>,
}

fn check_mask(q: &QueryView) -> Result<()> {
    if q.mask.len() != q.image.width * q.image.height || !q.cam.same_size(q.image.width, q.image.height) {
        return Err(Error::DimMismatch("query image, mask and intrinsics disagree".into()));
    }
    Ok(())
}

/// Fixed query encoding `G_q` for refinement from `p0`.
pub fn estimate_query_geometry(
    nets: &RefineNets,
    query: &QueryView,
    p0: &Pose,
    mesh: &TriangleMesh,
    cfg: &RefinementConfig,
) -> Result<EncodedGeometryMap> {
    check_mask(query)?;
    let enc = cfg.encoding(mesh);
    match cfg.geometry {
        GeometrySource::Oracle => {
            let gt = query
                .gt_geometry
                .ok_or_else(|| Error::Config("oracle geometry requested without ground truth".into()))?;
            Ok(positional_encode(gt, &enc))
        }
        GeometrySource::Network => {
            let (ir, gr) = render(mesh, p0, query.cam, Shading::Lambertian)?;
            let inputs = NetInputs::new(query.image, &ir, &positional_encode(&gr, &enc))?;
            let out = nets.geometry.forward_inputs(&inputs, cfg.attention)?;
            let full = convex_upsample(&out.geo, &out.up_mask)?;
            let mut g = EncodedGeometryMap {
                width: full.width,
                height: full.height,
                channels: full.channels,
                values: full.data,
                mask: query.mask.to_vec(),
            };
            g.apply_mask();
            Ok(g)
        }
        GeometrySource::FlowWarp => {
            let (ir, gr) = render(mesh, p0, query.cam, Shading::Lambertian)?;
            let f = estimate_flow(query.image, &ir, &cfg.flow)?;
            let b = estimate_flow(&ir, query.image, &cfg.flow)?;
            let fb = forward_backward_consistency(&f, &b)?;
            let mut warped = GeometryMap::empty(gr.width, gr.height);
            for i in 0..warped.mask.len() {
                if !(f.valid[i] && query.mask[i] && fb.valid[i] && fb.error[i] as f64 <= cfg.gate_fb_px) {
                    continue;
                }
                let (x, y) = ((i % gr.width) as f64 + f.du[i] as f64, (i / gr.width) as f64 + f.dv[i] as f64);
                if let Some((c, z)) = gr.sample(x, y, SAMPLE_REL_DEPTH) {
                    warped.set(i, c, z);
                }
            }
            Ok(positional_encode(&warped, &enc))
        }
    }
}

/// Decodable masked pixels of `gq` on a `stride` grid. Pixels whose bands
/// lost their phase are skipped.
pub fn decoded_correspondences(gq: &EncodedGeometryMap, enc: &EncodingConfig, stride: usize) -> Vec<Correspondence> {
    let mut out = Vec::new();
    for y in (0..gq.height).step_by(stride) {
        for x in (0..gq.width).step_by(stride) {
            let i = y * gq.width + x;
            if gq.mask[i] {
                if let Some(c) = decode_point(gq.pixel(i), enc) {
                    out.push(Correspondence::new(Vector2::new(x as f64, y as f64), c.into()));
                }
            }
        }
    }
    out
}

/// One render-and-compare update from `p_current`.
#[allow(clippy::too_many_arguments)]
pub fn relative_pose_step(
    gq: &EncodedGeometryMap,
    p_current: &Pose,
    mesh: &TriangleMesh,
    cam: &CameraIntrinsics,
    nets: &RefineNets,
    cfg: &RefinementConfig,
    seed: u64,
) -> Result<Pose> {
    let enc = cfg.encoding(mesh);
    if gq.channels != enc.channels() || !cam.same_size(gq.width, gq.height) {
        return Err(Error::DimMismatch("query encoding does not match the configuration".into()));
    }
    match cfg.estimator {
        Estimator::Geometric => {
            let corr = decoded_correspondences(gq, &enc, cfg.corr_stride);
            if corr.len() < 6 {
                return Err(Error::InsufficientCorrespondences(corr.len()));
            }
            let sol = solve_pnp_ransac(&corr, cam, &cfg.ransac, seed)?;
            Ok(tighten_pose(&corr, cam, &sol.pose, &TIGHTEN_PX, sol.inlier_count() / 5))
        }
        Estimator::Learned => {
            let gr = positional_encode(&render_geometry(mesh, p_current, cam)?, &enc);
            let t = |e: &EncodedGeometryMap| {
                let p = e.pool(8);
                super::layers::Tensor {
                    width: p.width,
                    height: p.height,
                    channels: p.channels,
                    data: p.values,
                }
            };
            let o = nets.relpose.forward(&t(gq), &t(&gr))?;
            if o.iter().any(|v| !v.is_finite()) {
                return Err(Error::NaNGuard);
            }
            let z = p_current.translation.z;
            let dt = [o[3] * z / cam.fx, o[4] * z / cam.fy, z * o[5].exp_m1()];
            let p = p_current.retract(&[o[0], o[1], o[2], dt[0], dt[1], dt[2]]);
            if p.translation.iter().chain(p.rotation.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NaNGuard);
            }
            Ok(p)
        }
    }
}

/// Iterative refinement from `p0` against a query encoding computed once.
pub fn refine_pose(
    query: &QueryView,
    p0: &Pose,
    mesh: &TriangleMesh,
    nets: &RefineNets,
    cfg: &RefinementConfig,
    seed: u64,
) -> Result<(Pose, RefineTrace)> {
    cfg.validate()?;
    let gq = estimate_query_geometry(nets, query, p0, mesh, cfg)?;
    refine_with_geometry(&gq, query, p0, mesh, nets, cfg, seed)
}

/// The loop of [`refine_pose`] on a given query encoding.
#[allow(clippy::too_many_arguments)]
pub fn refine_with_geometry(
    gq: &EncodedGeometryMap,
    query: &QueryView,
    p0: &Pose,
    mesh: &TriangleMesh,
    nets: &RefineNets,
    cfg: &RefinementConfig,
    seed: u64,
) -> Result<(Pose, RefineTrace)> {
    let mut pose = *p0;
    let mut trace = RefineTrace::default();
    for _ in 0..cfg.m_iterations {
        let next = relative_pose_step(gq, &pose, mesh, query.cam, nets, cfg, seed)?;
        let loss = pose_loss(&next, query.gt_pose.as_ref().unwrap_or(&pose), mesh).value;
        trace.iterations.push(TraceEntry {
            pose: next.to_row_major().to_vec(),
            pose_loss: loss,
        });
        pose = next;
    }
    Ok((pose, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::scene::{object_mesh, render_query, sample_query_pose, Query, SceneConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene(obj: usize, seed: u64) -> (TriangleMesh, Pose, Query) {
        let sc = SceneConfig::default();
        let cam = sc.camera().unwrap();
        let mesh = object_mesh(obj, 1).unwrap();
        let pose = sample_query_pose(&mesh, &cam, &sc, &mut ChaCha8Rng::seed_from_u64(seed));
        let q = render_query(&mesh, &pose, &cam, 1.1, 256).unwrap();
        (mesh, pose, q)
    }

    fn view(q: &Query, gt: Pose) -> QueryView<'_> {
        QueryView {
            image: &q.image,
            mask: &q.mask,
            cam: &q.cam,
            gt_geometry: Some(&q.gt_geometry),
            gt_pose: Some(gt),
        }
    }

    fn oracle() -> RefinementConfig {
        RefinementConfig {
            geometry: GeometrySource::Oracle,
            ..RefinementConfig::default()
        }
    }

    fn perturb(p: &Pose, deg: f64, frac: f64, d: f64, rng: &mut ChaCha8Rng) -> Pose {
        let axis = nalgebra::Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
        let dir = nalgebra::Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
        let w = axis * deg.to_radians();
        let v = dir * frac * d;
        p.retract(&[w.x, w.y, w.z, v.x, v.y, v.z])
    }

    #[test]
    fn oracle_geometry_is_the_encoded_ground_truth() {
        let (mesh, pose, q) = scene(0, 1);
        let cfg = oracle();
        let g = estimate_query_geometry(&RefineNets::new(5, 0), &view(&q, pose), &pose, &mesh, &cfg).unwrap();
        assert_eq!(g, positional_encode(&q.gt_geometry, &cfg.encoding(&mesh)));
        let mut blind = view(&q, pose);
        blind.gt_geometry = None;
        assert!(estimate_query_geometry(&RefineNets::new(5, 0), &blind, &pose, &mesh, &cfg).is_err());
    }

    #[test]
    fn network_geometry_has_the_query_mask() {
        let (mesh, pose, q) = scene(2, 2);
        let cfg = RefinementConfig {
            geometry: GeometrySource::Network,
            ..RefinementConfig::default()
        };
        let g = estimate_query_geometry(&RefineNets::new(5, 0), &view(&q, pose), &pose, &mesh, &cfg).unwrap();
        assert_eq!((g.width, g.height, g.channels), (256, 256, 30));
        assert_eq!(g.mask, q.mask);
        assert!(g.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn oracle_refinement_is_a_one_step_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (obj, seed) in [(0, 3), (2, 4), (3, 5)] {
            let (mesh, gt, q) = scene(obj, seed);
            let p0 = perturb(&gt, 20.0, 0.1, mesh.diameter, &mut rng);
            let (p, trace) = refine_pose(&view(&q, gt), &p0, &mesh, &RefineNets::new(5, 0), &oracle(), 9).unwrap();
            assert!(p.rotation_error(&gt) < 1e-3);
            assert!(p.translation_error(&gt) < 1e-3 * mesh.diameter);
            assert_eq!(trace.iterations.len(), 5);
            let first = Pose::from_row_major(&trace.iterations[0].pose.clone().try_into().unwrap()).unwrap();
            for e in &trace.iterations[1..] {
                let pi = Pose::from_row_major(&e.pose.clone().try_into().unwrap()).unwrap();
                assert!(pi.rotation_error(&first) < 1e-6 && pi.translation_error(&first) < 1e-6);
            }
        }
    }

    #[test]
    fn flow_warp_geometry_refines_a_perturbed_pose() {
        let (mesh, gt, q) = scene(0, 6);
        let p0 = perturb(&gt, 2.0, 0.02, mesh.diameter, &mut ChaCha8Rng::seed_from_u64(1));
        let cfg = RefinementConfig::default();
        let (p, _) = refine_pose(&view(&q, gt), &p0, &mesh, &RefineNets::new(5, 0), &cfg, 1).unwrap();
        assert!(p.rotation_error(&gt) < 0.5 * p0.rotation_error(&gt), "{}", p.rotation_error(&gt));
        assert!(p.translation_error(&gt) < 0.01 * mesh.diameter);
    }

    #[test]
    fn noisy_encoding_stays_bounded() {
        let (mesh, gt, q) = scene(0, 7);
        let cfg = oracle();
        let mut g = positional_encode(&q.gt_geometry, &cfg.encoding(&mesh));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..g.mask.len() {
            if g.mask[i] {
                g.pixel_mut(i).iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05));
            }
        }
        let p = relative_pose_step(&g, &gt, &mesh, &q.cam, &RefineNets::new(5, 0), &cfg, 0).unwrap();
        assert!(p.translation_error(&gt) < 0.05 * mesh.diameter);
    }

    #[test]
    fn zero_regressor_keeps_the_pose() {
        let (mesh, gt, q) = scene(1, 8);
        let cfg = RefinementConfig {
            estimator: Estimator::Learned,
            ..oracle()
        };
        let g = positional_encode(&q.gt_geometry, &cfg.encoding(&mesh));
        let mut nets = RefineNets::new(5, 0);
        nets.relpose = RelPoseNet::zeroed(5);
        let p0 = perturb(&gt, 5.0, 0.05, mesh.diameter, &mut ChaCha8Rng::seed_from_u64(3));
        let p = relative_pose_step(&g, &p0, &mesh, &q.cam, &nets, &cfg, 0).unwrap();
        assert_eq!(p, p0);
        let moved = relative_pose_step(&g, &p0, &mesh, &q.cam, &RefineNets::new(5, 0), &cfg, 0).unwrap();
        assert!(moved.rotation.iter().all(|v| v.is_finite()));
        nets.relpose.params[0] = f64::NAN;
        nets.relpose.params.iter_mut().for_each(|v| *v = f64::NAN);
        assert!(matches!(relative_pose_step(&g, &p0, &mesh, &q.cam, &nets, &cfg, 0), Err(Error::NaNGuard)));
    }

    #[test]
    fn config_is_validated() {
        assert!(RefinementConfig { m_iterations: 0, ..RefinementConfig::default() }.validate().is_err());
        assert!(RefinementConfig { gamma: 0.0, ..RefinementConfig::default() }.validate().is_err());
        assert!(RefinementConfig { gamma: 1.0, ..RefinementConfig::default() }.validate().is_ok());
        let j = serde_json::to_string(&RefinementConfig::default()).unwrap();
        assert!(j.contains("\"attention\":\"cg\"") && j.contains("\"geometry\":\"flow-warp\""));
        assert!(serde_json::from_str::<RefinementConfig>("{\"m_iter\": 3}").is_err());
    }
}
