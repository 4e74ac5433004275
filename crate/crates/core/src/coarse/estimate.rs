use nalgebra::Vector2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::score::{rank_templates, PreparedQuery, RollBank, ScoredTemplate};
use super::vote::{vote, CandidateMap, VoteMode};
use super::Template;
use crate::error::{Error, Result};
use crate::flow::features::BASE_CELL;
use crate::flow::{estimate_flow_detailed, forward_backward_consistency, FlowConfig, Warp};
use crate::geometry::{solve_pnp_ransac, tighten_pose, CameraIntrinsics, Correspondence, Pose, RansacConfig};
use crate::render::{GeometryMap, ImageBuffer};

/// Reprojection thresholds of the final re-solves after RANSAC.
const TIGHTEN_PX: [f64; 3] = [1.0, 0.5, 0.25];

/// Test hook: shifts the flow of a share of the selected templates by a
/// fixed-length random offset after candidate gating.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowCorruption {
    pub fraction: f64,
    pub offset_px: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoarseConfig {
    pub n_templates: usize,
    pub k_selected: usize,
    pub vote: VoteMode,
    pub ransac: RansacConfig,
    /// Flow used for scoring (cell level, no polish).
    pub score_flow: FlowConfig,
    /// Flow used to warp the selected templates.
    pub flow: FlowConfig,
    /// In-plane rolls tried per template; 1 disables the roll search.
    pub roll_steps: usize,
    /// Query and template crops enlarge the mask circle by this factor.
    pub crop_margin: f64,
    pub crop_size: usize,
    /// Warped candidates with a larger forward-backward error are dropped.
    pub gate_fb_px: f64,
    /// Pixel stride of the correspondences handed to PnP.
    pub corr_stride: usize,
    pub corruption: Option<FlowCorruption>,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        Self {
            n_templates: 128,
            k_selected: 4,
            vote: VoteMode::Medoid,
            ransac: RansacConfig::default(),
            score_flow: FlowConfig {
                polish: false,
                ..FlowConfig::default()
            },
            flow: FlowConfig::default(),
            roll_steps: 16,
            crop_margin: 1.1,
            crop_size: 256,
            gate_fb_px: 3.0,
            corr_stride: 2,
            corruption: None,
        }
    }
}

impl CoarseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_templates == 0 {
            return Err(Error::Config("n_templates must be at least 1".into()));
        }
        if self.k_selected == 0 || self.k_selected > self.n_templates {
            return Err(Error::KTooLarge {
                k: self.k_selected,
                n: self.n_templates,
            });
        }
        if self.roll_steps == 0 || self.corr_stride == 0 || !(self.crop_margin >= 1.0) {
            return Err(Error::Config("roll_steps, corr_stride and crop_margin must be positive".into()));
        }
        if self.crop_size < 32 << self.score_flow.levels.saturating_sub(1) {
            return Err(Error::Config(format!("crop_size {} too small for the flow pyramid", self.crop_size)));
        }
        Ok(())
    }

    /// Cell size of the coarsest scoring level.
    pub fn bank_cell(&self) -> usize {
        BASE_CELL << self.score_flow.levels.saturating_sub(1)
    }
}

/// Everything the coarse stage decided for one query.
#[derive(Clone, Debug)]
pub struct CoarseResult {
    pub pose: Pose,
    /// Voted query geometry.
    pub geometry: GeometryMap,
    /// Scores by template index.
    pub scores: Vec<f64>,
    pub selected: Vec<SelectedTemplate>,
    pub correspondences: usize,
    pub inliers: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedTemplate {
    pub index: usize,
    pub roll: f64,
    pub score: f64,
}

/// Selection report, `{scores, selected}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub scores: Vec<f64>,
    pub selected: Vec<SelectedTemplate>,
}

impl CoarseResult {
    pub fn report(&self) -> SelectionReport {
        SelectionReport {
            scores: self.scores.clone(),
            selected: self.selected.clone(),
        }
    }
}

/// Coarse pose of the object in `query` (a crop with intrinsics `cam`).
pub fn estimate_coarse_pose(
    query: &ImageBuffer,
    query_mask: &[bool],
    set: &[Template],
    cam: &CameraIntrinsics,
    cfg: &CoarseConfig,
    seed: u64,
) -> Result<(Pose, GeometryMap)> {
    let r = estimate_coarse_pose_detailed(query, query_mask, set, None, &[], cam, cfg, seed)?;
    Ok((r.pose, r.geometry))
}

/// As [`estimate_coarse_pose`], optionally with a prebuilt roll bank and the
/// object's symmetry group (see [`coarse_from_ranking`]).
#[allow(clippy::too_many_arguments)]
pub fn estimate_coarse_pose_detailed(
    query: &ImageBuffer,
    query_mask: &[bool],
    set: &[Template],
    bank: Option<&RollBank>,
    symmetries: &[Pose],
    cam: &CameraIntrinsics,
    cfg: &CoarseConfig,
    seed: u64,
) -> Result<CoarseResult> {
    cfg.validate()?;
    if cfg.k_selected > set.len() {
        return Err(Error::KTooLarge {
            k: cfg.k_selected,
            n: set.len(),
        });
    }
    if query_mask.len() != query.width * query.height {
        return Err(Error::DimMismatch("query mask does not match the image".into()));
    }
    if !query_mask.iter().any(|&m| m) {
        return Err(Error::InsufficientCorrespondences(0));
    }
    let own;
    let bank = match bank {
        Some(b) => Some(b),
        None if cfg.roll_steps > 1 => {
            own = RollBank::build(set, cfg.roll_steps, cfg.bank_cell())?;
            Some(&own)
        }
        None => None,
    };
    let prepared = PreparedQuery::new(query, &cfg.score_flow)?;
    let ranked = rank_templates(&prepared, set, bank, cfg)?;
    coarse_from_ranking(query, query_mask, &ranked, symmetries, cam, cfg, seed)
}

/// Voting and PnP on an existing ranking (descending, as returned by
/// [`rank_templates`]). With a symmetry group, each selected template's
/// coordinates are first moved into the symmetry branch closest to the best
/// template, so equivalent views vote for the same points.
pub fn coarse_from_ranking(
    query: &ImageBuffer,
    query_mask: &[bool],
    ranked: &[ScoredTemplate],
    symmetries: &[Pose],
    cam: &CameraIntrinsics,
    cfg: &CoarseConfig,
    seed: u64,
) -> Result<CoarseResult> {
    let k = cfg.k_selected;
    if k > ranked.len() {
        return Err(Error::KTooLarge { k, n: ranked.len() });
    }
    let selected = &ranked[..k];
    let corrupted: Vec<usize> = match cfg.corruption {
        Some(c) => {
            let mut order: Vec<usize> = (0..k).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(c.seed ^ seed));
            order.truncate((c.fraction * k as f64).round() as usize);
            order
        }
        None => Vec::new(),
    };
    let mut cands = CandidateMap::new(query.width, query.height);
    for (j, s) in selected.iter().enumerate() {
        let (mut f, _) = estimate_flow_detailed(query, &s.template.image, &cfg.flow)?;
        let (b, _) = estimate_flow_detailed(&s.template.image, query, &cfg.flow)?;
        let fb = forward_backward_consistency(&f, &b)?;
        if let (Some(c), true) = (cfg.corruption, corrupted.contains(&j)) {
            let a = ChaCha8Rng::seed_from_u64(c.seed ^ seed ^ (j as u64 + 1)).gen_range(0.0..std::f64::consts::TAU);
            let (ou, ov) = ((c.offset_px * a.cos()) as f32, (c.offset_px * a.sin()) as f32);
            for i in 0..f.valid.len() {
                if f.valid[i] {
                    f.du[i] += ou;
                    f.dv[i] += ov;
                }
            }
        }
        let mut warped = align_branch(&s.template, &selected[0].template.pose, symmetries).warp(&f)?;
        for i in 0..warped.mask.len() {
            if warped.mask[i] && !(query_mask[i] && fb.valid[i] && fb.error[i] as f64 <= cfg.gate_fb_px) {
                warped.clear(i);
            }
        }
        cands.push_map(&warped);
    }
    let geometry = vote(&cands, cfg.vote);
    let corr = correspondences(&geometry, cfg.corr_stride);
    if corr.len() < 6 {
        return Err(Error::InsufficientCorrespondences(corr.len()));
    }
    let sol = solve_pnp_ransac(&corr, cam, &cfg.ransac, seed)?;
    let pose = tighten_pose(&corr, cam, &sol.pose, &TIGHTEN_PX, sol.inlier_count() / 5);
    let mut scores = vec![0.0; ranked.len()];
    for s in ranked {
        scores[s.index] = s.score;
    }
    Ok(CoarseResult {
        pose,
        geometry,
        scores,
        selected: selected
            .iter()
            .map(|s| SelectedTemplate {
                index: s.index,
                roll: s.roll,
                score: s.score,
            })
            .collect(),
        correspondences: corr.len(),
        inliers: sol.inlier_count(),
    })
}

/// Template geometry with coordinates mapped by the symmetry `S` minimizing
/// the rotation distance between `reference∘S` and the template pose.
fn align_branch(t: &Template, reference: &Pose, symmetries: &[Pose]) -> GeometryMap {
    let best = symmetries
        .iter()
        .min_by(|a, b| {
            let da = reference.compose(a).rotation_error(&t.pose);
            let db = reference.compose(b).rotation_error(&t.pose);
            da.total_cmp(&db)
        })
        .filter(|s| s.rotation_error(&Pose::identity()) > 0.0 || s.translation.norm() > 0.0);
    let mut g = t.geometry.clone();
    if let Some(sym) = best {
        for i in 0..g.mask.len() {
            if g.mask[i] {
                let c = sym.transform_point(&g.coord(i));
                g.coords[i] = [c.x as f32, c.y as f32, c.z as f32];
            }
        }
    }
    g
}

/// Masked pixels of `geom` on a `stride` grid as 2D-3D pairs.
pub fn correspondences(geom: &GeometryMap, stride: usize) -> Vec<Correspondence> {
    let mut out = Vec::new();
    for y in (0..geom.height).step_by(stride) {
        for x in (0..geom.width).step_by(stride) {
            let i = y * geom.width + x;
            if geom.mask[i] {
                out.push(Correspondence::new(Vector2::new(x as f64, y as f64), geom.coord(i)));
            }
        }
    }
    out
}
