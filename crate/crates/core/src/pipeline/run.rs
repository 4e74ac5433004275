use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Stage};
use super::scene::{object_mesh, render_query, sample_query_pose, Query};
use crate::coarse::{build_template_set, coarse_from_ranking, rank_templates, CoarseConfig, PreparedQuery, RollBank, Template};
use crate::error::{Error, Result};
use crate::eval::{evaluate_record, EvalRecord, Failure, MetricThresholds};
use crate::geometry::{CameraIntrinsics, Pose, TriangleMesh};
use crate::refine::{refine_pose, QueryView, RefineNets, RefineTrace, RefinementConfig};

/// One query: the `index`-th pose of `object`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub id: usize,
    pub object: usize,
    pub index: usize,
    pub gt: Pose,
}

/// Meshes, query entries and their crops, and template sets.
pub trait SceneSource: Sync {
    /// Full-frame camera.
    fn camera(&self) -> &CameraIntrinsics;
    fn meshes(&self) -> &[TriangleMesh];
    fn entries(&self) -> &[Entry];
    fn query(&self, entry: &Entry, cfg: &CoarseConfig) -> Result<Query>;
    fn templates(&self, object: usize, cfg: &CoarseConfig) -> Result<Vec<Template>>;
}

pub(crate) fn template_seed(seed: u64, object: usize) -> u64 {
    seed ^ (0x7e37_0000 + object as u64)
}

pub(crate) fn entry_seed(seed: u64, id: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(id as u64)
}

/// Procedural scenes rendered on demand.
#[derive(Clone, Debug)]
pub struct SyntheticSuite {
    pub cam: CameraIntrinsics,
    pub meshes: Vec<TriangleMesh>,
    pub entries: Vec<Entry>,
    pub seed: u64,
}

impl SyntheticSuite {
    pub fn generate(cfg: &RunConfig) -> Result<Self> {
        let cam = cfg.scene.camera()?;
        let meshes = (0..cfg.scene.objects)
            .map(|i| object_mesh(i, cfg.seed))
            .collect::<Result<Vec<_>>>()?;
        let mut entries = Vec::new();
        for (object, mesh) in meshes.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x9e3_0000 + object as u64));
            for index in 0..cfg.scene.poses_per_object {
                entries.push(Entry {
                    id: entries.len(),
                    object,
                    index,
                    gt: sample_query_pose(mesh, &cam, &cfg.scene, &mut rng),
                });
            }
        }
        Ok(Self {
            cam,
            meshes,
            entries,
            seed: cfg.seed,
        })
    }
}

impl SceneSource for SyntheticSuite {
    fn camera(&self) -> &CameraIntrinsics {
        &self.cam
    }
    fn meshes(&self) -> &[TriangleMesh] {
        &self.meshes
    }
    fn entries(&self) -> &[Entry] {
        &self.entries
    }
    fn query(&self, e: &Entry, cfg: &CoarseConfig) -> Result<Query> {
        render_query(&self.meshes[e.object], &e.gt, &self.cam, cfg.crop_margin, cfg.crop_size)
    }
    fn templates(&self, object: usize, cfg: &CoarseConfig) -> Result<Vec<Template>> {
        build_template_set(&self.meshes[object], &self.cam, cfg, template_seed(self.seed, object))
    }
}

/// One pipeline configuration of a batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub stage: Stage,
    pub coarse: CoarseConfig,
    pub refine: RefinementConfig,
}

impl Variant {
    pub fn from_config(label: impl Into<String>, cfg: &RunConfig) -> Self {
        Self {
            label: label.into(),
            stage: cfg.stage,
            coarse: cfg.coarse.clone(),
            refine: cfg.refine.clone(),
        }
    }
}

/// What happened to one entry under one variant. A failed refinement keeps
/// the coarse pose as the estimate and records the error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub entry: usize,
    pub object: usize,
    pub coarse: Option<Pose>,
    pub estimate: Option<Pose>,
    pub trace: Option<RefineTrace>,
    pub error: Option<String>,
}

/// Template fields that decide the ranking; variants agreeing on them share
/// one ranking per query.
fn ranking_key(c: &CoarseConfig) -> CoarseConfig {
    let d = CoarseConfig::default();
    CoarseConfig {
        k_selected: d.k_selected,
        vote: d.vote,
        ransac: d.ransac,
        flow: d.flow,
        gate_fb_px: d.gate_fb_px,
        corr_stride: d.corr_stride,
        corruption: d.corruption,
        ..c.clone()
    }
}

struct RankGroup {
    cfg: CoarseConfig,
    templates: Result<(Vec<Template>, Option<RollBank>)>,
}

fn failed(e: &Entry, err: &Error) -> Outcome {
    Outcome {
        entry: e.id,
        object: e.object,
        coarse: None,
        estimate: None,
        trace: None,
        error: Some(err.to_string()),
    }
}

fn run_entry(
    source: &dyn SceneSource,
    e: &Entry,
    groups: &[RankGroup],
    group_of: &[usize],
    variants: &[Variant],
    nets: &RefineNets,
    seed: u64,
) -> Vec<Outcome> {
    let mesh = &source.meshes()[e.object];
    let query = match source.query(e, &variants[0].coarse) {
        Ok(q) => q,
        Err(err) => return variants.iter().map(|_| failed(e, &err)).collect(),
    };
    let s = entry_seed(seed, e.id);
    let rankings: Vec<Result<_>> = groups
        .iter()
        .map(|g| {
            let (set, bank) = g.templates.as_ref().map_err(|err| Error::Config(err.to_string()))?;
            let pq = PreparedQuery::new(&query.image, &g.cfg.score_flow)?;
            rank_templates(&pq, set, bank.as_ref(), &g.cfg)
        })
        .collect();
    variants
        .iter()
        .zip(group_of)
        .map(|(v, &g)| {
            let ranked = match &rankings[g] {
                Ok(r) => r,
                Err(err) => return failed(e, err),
            };
            let coarse = match coarse_from_ranking(
                &query.image,
                &query.mask,
                ranked,
                &mesh.symmetries,
                &query.cam,
                &v.coarse,
                s,
            ) {
                Ok(c) => c,
                Err(err) => return failed(e, &err),
            };
            let mut out = Outcome {
                entry: e.id,
                object: e.object,
                coarse: Some(coarse.pose),
                estimate: Some(coarse.pose),
                trace: None,
                error: None,
            };
            if v.stage == Stage::Full {
                let view = QueryView {
                    image: &query.image,
                    mask: &query.mask,
                    cam: &query.cam,
                    gt_geometry: Some(&query.gt_geometry),
                    gt_pose: Some(e.gt),
                };
                match refine_pose(&view, &coarse.pose, mesh, nets, &v.refine, s) {
                    Ok((p, trace)) => {
                        out.estimate = Some(p);
                        out.trace = Some(trace);
                    }
                    Err(err) => out.error = Some(format!("refinement: {err}")),
                }
            }
            out
        })
        .collect()
}

/// Runs every variant on every entry. Returns outcomes as
/// `[variant][entry]` in entry order, independent of `workers`.
pub fn run_variants(
    source: &dyn SceneSource,
    variants: &[Variant],
    nets: &RefineNets,
    seed: u64,
    workers: usize,
) -> Result<Vec<Vec<Outcome>>> {
    if variants.is_empty() {
        return Err(Error::EmptyInput("no pipeline variants".into()));
    }
    for v in variants {
        v.coarse.validate()?;
        v.refine.validate()?;
        if v.coarse.crop_margin != variants[0].coarse.crop_margin || v.coarse.crop_size != variants[0].coarse.crop_size {
            return Err(Error::Config("variants must share the query crop".into()));
        }
    }
    let mut keys: Vec<CoarseConfig> = Vec::new();
    let group_of: Vec<usize> = variants
        .iter()
        .map(|v| {
            let k = ranking_key(&v.coarse);
            keys.iter().position(|x| *x == k).unwrap_or_else(|| {
                keys.push(k);
                keys.len() - 1
            })
        })
        .collect();
    let mut out: Vec<Vec<Outcome>> = vec![Vec::new(); variants.len()];
    for object in 0..source.meshes().len() {
        let entries: Vec<&Entry> = source.entries().iter().filter(|e| e.object == object).collect();
        if entries.is_empty() {
            continue;
        }
        let groups: Vec<RankGroup> = keys
            .iter()
            .map(|cfg| RankGroup {
                cfg: cfg.clone(),
                templates: source.templates(object, cfg).and_then(|set| {
                    if set.len() != cfg.n_templates {
                        return Err(Error::ManifestMismatch(format!(
                            "object {object} has {} templates, configured {}",
                            set.len(),
                            cfg.n_templates
                        )));
                    }
                    let bank =
                        (cfg.roll_steps > 1).then(|| RollBank::build(&set, cfg.roll_steps, cfg.bank_cell())).transpose()?;
                    Ok((set, bank))
                }),
            })
            .collect();
        let n_workers = workers.clamp(1, entries.len());
        let chunk = entries.len().div_ceil(n_workers);
        let results: Vec<Vec<Outcome>> = std::thread::scope(|sc| {
            let handles: Vec<_> = entries
                .chunks(chunk)
                .map(|part| {
                    let (groups, group_of) = (&groups, &group_of);
                    sc.spawn(move || {
                        part.iter()
                            .map(|e| run_entry(source, e, groups, group_of, variants, nets, seed))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
        });
        for per_entry in results {
            for (v, o) in per_entry.into_iter().enumerate() {
                out[v].push(o);
            }
        }
    }
    for list in &mut out {
        list.sort_by_key(|o| o.entry);
    }
    Ok(out)
}

/// Evaluation records of one variant's outcomes, in the full-frame camera.
pub fn evaluate_outcomes(source: &dyn SceneSource, outcomes: &[Outcome], th: &MetricThresholds) -> Result<Vec<EvalRecord>> {
    outcomes
        .iter()
        .map(|o| {
            let e = source
                .entries()
                .get(o.entry)
                .filter(|e| e.id == o.entry)
                .ok_or_else(|| Error::ManifestMismatch(format!("unknown entry {}", o.entry)))?;
            evaluate_record(e.object, &e.gt, o.estimate.as_ref(), &source.meshes()[e.object], source.camera(), th)
        })
        .collect()
}

pub fn failures(source: &dyn SceneSource, outcomes: &[Outcome]) -> Vec<Failure> {
    outcomes
        .iter()
        .filter_map(|o| {
            o.error.as_ref().map(|err| Failure {
                object: o.object,
                index: source.entries().get(o.entry).map_or(0, |e| e.index),
                error: err.clone(),
            })
        })
        .collect()
}
