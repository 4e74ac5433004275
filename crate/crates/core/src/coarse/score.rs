use std::f64::consts::PI;

use super::{CoarseConfig, Template};
use crate::error::{Error, Result};
use crate::flow::features::{box_downsample, describe, dot, BASE_CELL};
use crate::flow::{build_feature_pyramid, match_pyramids, FeatureMap, FeaturePyramid, FlowConfig};
use crate::render::crop::{remap_image, rotation_map_about};
use crate::render::ImageBuffer;

/// Weight of the forward-backward error (pixels) against the correlation peak.
pub const FB_WEIGHT: f64 = 0.1;
/// Forward-backward errors are clamped here before weighting.
pub const FB_CLAMP_PX: f64 = 10.0;
/// Score of an unmatched cell: lowest peak minus the clamped penalty.
pub const WORST_SCORE: f64 = -1.0 - FB_WEIGHT * FB_CLAMP_PX;
/// Pre-shrink factor of the roll bank before rotating.
const BANK_PRESHRINK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredTemplate {
    /// The template in the selected roll.
    pub template: Template,
    /// Index into the template set.
    pub index: usize,
    /// In-plane roll applied to the stored template, radians.
    pub roll: f64,
    pub score: f64,
}

/// Cells of `cell`×`cell` pixels, masked when at least half their pixels are.
pub fn cell_mask(mask: &[bool], width: usize, height: usize, cell: usize) -> Vec<bool> {
    let (cw, ch) = (width / cell, height / cell);
    let mut out = vec![false; cw * ch];
    for cy in 0..ch {
        for cx in 0..cw {
            let n: usize = (cy * cell..(cy + 1) * cell)
                .map(|y| mask[y * width + cx * cell..y * width + (cx + 1) * cell].iter().filter(|&&m| m).count())
                .sum();
            out[cy * cw + cx] = 2 * n >= cell * cell;
        }
    }
    out
}

/// Mean over template-masked level-0 cells of `peak − λ·min(fb, 10 px)`,
/// with unmatched cells at [`WORST_SCORE`]. `t` is matched into `q`.
pub fn score_pyramids(t: &FeaturePyramid, q: &FeaturePyramid, tmask: &[bool], cfg: &FlowConfig) -> Result<f64> {
    let fwd = match_pyramids(t, q, cfg)?;
    let bwd = match_pyramids(q, t, cfg)?;
    if tmask.len() != fwd.valid.len() {
        return Err(Error::DimMismatch("template cell mask does not match the feature grid".into()));
    }
    let fb = fwd.forward_backward(&bwd);
    let (mut sum, mut n) = (0.0, 0usize);
    for i in (0..tmask.len()).filter(|&i| tmask[i]) {
        n += 1;
        sum += match fb[i] {
            Some(e) => fwd.peak[i] as f64 - FB_WEIGHT * (e as f64).min(FB_CLAMP_PX),
            None => WORST_SCORE,
        };
    }
    Ok(if n == 0 { WORST_SCORE } else { sum / n as f64 })
}

/// Flow-consistency score of one template against the query; higher is
/// better, 1 is a perfect self match.
pub fn score_template(query: &ImageBuffer, template: &Template, cfg: &FlowConfig) -> Result<f64> {
    if !query.same_dims(&template.image) {
        return Err(Error::DimMismatch("query and template sizes differ".into()));
    }
    let q = build_feature_pyramid(query, cfg.levels)?;
    let t = build_feature_pyramid(&template.image, cfg.levels)?;
    let g = &template.geometry;
    score_pyramids(&t, &q, &cell_mask(&g.mask, g.width, g.height, BASE_CELL), cfg)
}

/// Coarsest-level features of every template under each of `steps` rolls.
pub struct RollBank {
    pub steps: usize,
    /// Pixels per cell of the stored maps.
    pub cell: usize,
    entries: Vec<Vec<(FeatureMap, Vec<bool>)>>,
}

impl RollBank {
    pub fn build(set: &[Template], steps: usize, cell: usize) -> Result<Self> {
        if steps == 0 || cell % BANK_PRESHRINK != 0 {
            return Err(Error::Config(format!("invalid roll bank ({steps} steps, cell {cell})")));
        }
        let entries = set
            .iter()
            .map(|t| {
                let g = t.image.to_gray();
                let m: Vec<f32> = t.geometry.mask.iter().map(|&b| b as u8 as f32).collect();
                let small = |d: &[f32]| {
                    let (v, w, h) = box_downsample(d, g.width, g.height, BANK_PRESHRINK);
                    ImageBuffer { width: w, height: h, channels: 1, data: v }
                };
                let (gs, ms) = (small(&g.data), small(&m));
                let s = BANK_PRESHRINK as f64;
                let (cx, cy) = ((t.cam.cx + 0.5) / s - 0.5, (t.cam.cy + 0.5) / s - 0.5);
                let f = cell / BANK_PRESHRINK;
                (0..steps)
                    .map(|r| {
                        let map = rotation_map_about(roll_angle(r, steps), cx, cy);
                        let (gr, mr) = if r == 0 {
                            (gs.clone(), ms.clone())
                        } else {
                            (remap_image(&gs, gs.width, gs.height, &map), remap_image(&ms, ms.width, ms.height, &map))
                        };
                        let (gc, cw, ch) = box_downsample(&gr.data, gr.width, gr.height, f);
                        let (mc, _, _) = box_downsample(&mr.data, mr.width, mr.height, f);
                        (describe(&gc, cw, ch, cell), mc.iter().map(|&v| v >= 0.5).collect())
                    })
                    .collect()
            })
            .collect();
        Ok(Self { steps, cell, entries })
    }

    /// Index of the roll whose coarse features best fit the query map (ties:
    /// lowest roll).
    pub fn best_roll(&self, template: usize, query: &FeatureMap) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (r, (f, m)) in self.entries[template].iter().enumerate() {
            let s = neighborhood_fit(f, m, query);
            if s > best.1 {
                best = (r, s);
            }
        }
        best.0
    }
}

pub fn roll_angle(step: usize, steps: usize) -> f64 {
    2.0 * PI * step as f64 / steps as f64
}

/// Mean over masked cells of the best correlation within one cell.
fn neighborhood_fit(f: &FeatureMap, mask: &[bool], q: &FeatureMap) -> f64 {
    let (w, h) = (f.width as i64, f.height as i64);
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            if !mask[i] {
                continue;
            }
            n += 1;
            let mut best = -1.0f32;
            for qy in (y - 1).max(0)..=(y + 1).min(h - 1) {
                for qx in (x - 1).max(0)..=(x + 1).min(w - 1) {
                    best = best.max(dot(f.feature(i), q.feature_at(qx as usize, qy as usize)));
                }
            }
            sum += best as f64;
        }
    }
    if n == 0 {
        -1.0
    } else {
        sum / n as f64
    }
}

/// A query ready for repeated scoring.
pub struct PreparedQuery<'a> {
    pub image: &'a ImageBuffer,
    pub pyramid: FeaturePyramid,
}

impl<'a> PreparedQuery<'a> {
    pub fn new(image: &'a ImageBuffer, cfg: &FlowConfig) -> Result<Self> {
        Ok(Self {
            image,
            pyramid: build_feature_pyramid(image, cfg.levels)?,
        })
    }
}

/// Scores every template (in its best roll when a bank is given) and returns
/// them in descending score order, ties by template index.
pub fn rank_templates(
    query: &PreparedQuery,
    set: &[Template],
    bank: Option<&RollBank>,
    cfg: &CoarseConfig,
) -> Result<Vec<ScoredTemplate>> {
    let coarse = bank.map(|b| query_map(query.image, b.cell)).transpose()?;
    let mut out = Vec::with_capacity(set.len());
    for (index, t) in set.iter().enumerate() {
        if !query.image.same_dims(&t.image) {
            return Err(Error::DimMismatch(format!("template {index} differs in size from the query")));
        }
        let roll = match (bank, &coarse) {
            (Some(b), Some(q)) => roll_angle(b.best_roll(index, q), b.steps),
            _ => 0.0,
        };
        let template = t.rolled(roll);
        let tp = build_feature_pyramid(&template.image, cfg.score_flow.levels)?;
        let g = &template.geometry;
        let tmask = cell_mask(&g.mask, g.width, g.height, BASE_CELL);
        let score = score_pyramids(&tp, &query.pyramid, &tmask, &cfg.score_flow)?;
        out.push(ScoredTemplate {
            template,
            index,
            roll,
            score,
        });
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    Ok(out)
}

fn query_map(image: &ImageBuffer, cell: usize) -> Result<FeatureMap> {
    let g = image.to_gray();
    let (a, w, h) = box_downsample(&g.data, g.width, g.height, BANK_PRESHRINK);
    let (c, cw, ch) = box_downsample(&a, w, h, cell / BANK_PRESHRINK);
    if cw == 0 || ch == 0 {
        return Err(Error::ImageTooSmall {
            width: image.width,
            height: image.height,
            min: cell,
        });
    }
    Ok(describe(&c, cw, ch, cell))
}

/// Top-`k` templates by score.
pub fn select_templates(query: &ImageBuffer, set: &[Template], k: usize, cfg: &CoarseConfig) -> Result<Vec<ScoredTemplate>> {
    if k > set.len() {
        return Err(Error::KTooLarge { k, n: set.len() });
    }
    let bank = (cfg.roll_steps > 1).then(|| RollBank::build(set, cfg.roll_steps, cfg.bank_cell())).transpose()?;
    let q = PreparedQuery::new(query, &cfg.score_flow)?;
    let mut ranked = rank_templates(&q, set, bank.as_ref(), cfg)?;
    ranked.truncate(k);
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarse::build_template_set;
    use crate::geometry::{generate_procedural_mesh, CameraIntrinsics, MeshSpec};

    fn set(n: usize) -> Vec<Template> {
        let mesh = generate_procedural_mesh(&MeshSpec::Box { size: [0.5, 0.35, 0.2] }, 4).unwrap();
        let cam = CameraIntrinsics::new(572.0, 572.0, 319.5, 239.5, 640, 480).unwrap();
        let cfg = CoarseConfig {
            n_templates: n,
            k_selected: 1,
            ..CoarseConfig::default()
        };
        build_template_set(&mesh, &cam, &cfg, 1).unwrap()
    }

    #[test]
    fn self_match_scores_one() {
        let s = set(2);
        let cfg = CoarseConfig::default().score_flow;
        let own = score_template(&s[0].image, &s[0], &cfg).unwrap();
        assert!((own - 1.0).abs() < 1e-6, "{own}");
        assert!(score_template(&s[1].image, &s[0], &cfg).unwrap() < own);
    }

    #[test]
    fn flat_query_scores_worst_or_near() {
        let s = set(1);
        let flat = ImageBuffer::new(s[0].image.width, s[0].image.height, 3);
        let v = score_template(&flat, &s[0], &CoarseConfig::default().score_flow).unwrap();
        assert!(v <= 0.0, "{v}");
        assert!(v >= WORST_SCORE);
    }

    #[test]
    fn exact_template_ranks_first() {
        let s = set(12);
        let cfg = CoarseConfig::default();
        let bank = RollBank::build(&s, cfg.roll_steps, cfg.bank_cell()).unwrap();
        for i in [0, 5, 11] {
            let q = PreparedQuery::new(&s[i].image, &cfg.score_flow).unwrap();
            let r = rank_templates(&q, &s, Some(&bank), &cfg).unwrap();
            assert_eq!(r[0].index, i);
            assert_eq!(r[0].roll, 0.0);
            assert!(r.windows(2).all(|w| w[0].score > w[1].score || (w[0].score == w[1].score && w[0].index < w[1].index)));
        }
    }

    #[test]
    fn k_larger_than_set_is_rejected() {
        let s = set(2);
        let e = select_templates(&s[0].image, &s, 3, &CoarseConfig::default()).unwrap_err();
        assert!(matches!(e, Error::KTooLarge { k: 3, n: 2 }));
        assert_eq!(select_templates(&s[0].image, &s, 2, &CoarseConfig::default()).unwrap().len(), 2);
    }

    #[test]
    fn cell_mask_needs_half_coverage() {
        let mut m = vec![false; 16 * 8];
        for y in 0..8 {
            for x in 0..4 {
                m[y * 16 + x] = true;
            }
        }
        assert_eq!(cell_mask(&m, 16, 8, 8), vec![true, false]);
        m[3] = false;
        assert_eq!(cell_mask(&m, 16, 8, 8), vec![false, false]);
    }
}
