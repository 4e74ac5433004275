use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Stage};
use super::run::{template_seed, Entry, Outcome, SceneSource};
use super::scene::Query;
use crate::coarse::{build_template_set, load_template_set, save_template_set, CoarseConfig, Template};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose, TriangleMesh};
use crate::render::{GeometryMap, ImageBuffer};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.json";

pub type Matrix4x4 = [[f64; 4]; 4];

pub fn pose_to_matrix(p: &Pose) -> Matrix4x4 {
    let m = p.to_row_major();
    std::array::from_fn(|r| std::array::from_fn(|c| m[r * 4 + c]))
}

pub fn pose_from_matrix(m: &Matrix4x4) -> Result<Pose> {
    let mut flat = [0.0; 16];
    for r in 0..4 {
        flat[r * 4..r * 4 + 4].copy_from_slice(&m[r]);
    }
    Pose::from_row_major(&flat)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRecord {
    pub id: usize,
    pub mesh: String,
    pub sidecar: String,
    pub templates: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryRecord {
    pub id: usize,
    pub object: usize,
    pub index: usize,
    pub gt: Matrix4x4,
    /// Intrinsics of the query crop.
    pub crop_cam: CameraIntrinsics,
    pub image: String,
    pub mask: String,
    pub geometry: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub camera: CameraIntrinsics,
    pub crop_margin: f64,
    pub crop_size: usize,
    pub n_templates: usize,
    pub objects: Vec<ObjectRecord>,
    pub entries: Vec<EntryRecord>,
}

/// A generated scene directory.
#[derive(Clone, Debug)]
pub struct SceneDir {
    pub root: PathBuf,
    pub manifest: Manifest,
    meshes: Vec<TriangleMesh>,
    entries: Vec<Entry>,
}

/// Writes meshes, template sets, query crops with masks and ground-truth
/// geometry, the manifest and the configuration used.
pub fn write_scene(root: &Path, cfg: &RunConfig, source: &dyn SceneSource) -> Result<SceneDir> {
    cfg.validate()?;
    fs::create_dir_all(root.join("objects"))?;
    fs::create_dir_all(root.join("queries"))?;
    let mut objects = Vec::new();
    for (id, mesh) in source.meshes().iter().enumerate() {
        let rec = ObjectRecord {
            id,
            mesh: format!("objects/{id:03}.ply"),
            sidecar: format!("objects/{id:03}.json"),
            templates: format!("templates/{id:03}"),
        };
        mesh.save(root.join(&rec.mesh), root.join(&rec.sidecar))?;
        save_template_set(root.join(&rec.templates), &source.templates(id, &cfg.coarse)?)?;
        objects.push(rec);
    }
    let mut entries = Vec::new();
    for e in source.entries() {
        let q = source.query(e, &cfg.coarse)?;
        let stem = format!("queries/{:04}", e.id);
        let rec = EntryRecord {
            id: e.id,
            object: e.object,
            index: e.index,
            gt: pose_to_matrix(&e.gt),
            crop_cam: q.cam,
            image: format!("{stem}.ppm"),
            mask: format!("{stem}_mask.pgm"),
            geometry: format!("{stem}.rgmp"),
        };
        q.image.write_ppm(root.join(&rec.image))?;
        let mask = q.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        ImageBuffer::from_data(q.image.width, q.image.height, 1, mask)?.write_ppm(root.join(&rec.mask))?;
        q.gt_geometry.write(root.join(&rec.geometry))?;
        entries.push(rec);
    }
    let manifest = Manifest {
        seed: cfg.seed,
        camera: *source.camera(),
        crop_margin: cfg.coarse.crop_margin,
        crop_size: cfg.coarse.crop_size,
        n_templates: cfg.coarse.n_templates,
        objects,
        entries,
    };
    fs::write(root.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    fs::write(root.join(CONFIG), serde_json::to_string_pretty(cfg)?)?;
    SceneDir::open(root)
}

impl SceneDir {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST);
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(&path)?).map_err(|e| Error::format(&path, e.to_string()))?;
        manifest.camera.validate()?;
        let meshes = manifest
            .objects
            .iter()
            .enumerate()
            .map(|(k, o)| {
                if o.id != k {
                    return Err(Error::ManifestMismatch(format!("object {k} has id {}", o.id)));
                }
                TriangleMesh::load(root.join(&o.mesh), Some(&root.join(&o.sidecar)))
            })
            .collect::<Result<Vec<_>>>()?;
        let entries = manifest
            .entries
            .iter()
            .enumerate()
            .map(|(k, e)| {
                if e.id != k || e.object >= meshes.len() {
                    return Err(Error::ManifestMismatch(format!("entry {k} is out of order or names a missing object")));
                }
                Ok(Entry {
                    id: e.id,
                    object: e.object,
                    index: e.index,
                    gt: pose_from_matrix(&e.gt)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            root,
            manifest,
            meshes,
            entries,
        })
    }

    /// The configuration stored at generation time.
    pub fn config(&self) -> Result<RunConfig> {
        RunConfig::load(self.root.join(CONFIG))
    }
}

impl SceneSource for SceneDir {
    fn camera(&self) -> &CameraIntrinsics {
        &self.manifest.camera
    }
    fn meshes(&self) -> &[TriangleMesh] {
        &self.meshes
    }
    fn entries(&self) -> &[Entry] {
        &self.entries
    }

    fn query(&self, e: &Entry, cfg: &CoarseConfig) -> Result<Query> {
        let rec = &self.manifest.entries[e.id];
        if cfg.crop_size != self.manifest.crop_size {
            return Err(Error::ManifestMismatch(format!(
                "scene crops are {} px, configured {}",
                self.manifest.crop_size, cfg.crop_size
            )));
        }
        let image = ImageBuffer::read_ppm(self.root.join(&rec.image))?;
        let mask_img = ImageBuffer::read_ppm(self.root.join(&rec.mask))?;
        let gt_geometry = GeometryMap::read(self.root.join(&rec.geometry))?;
        if !mask_img.same_dims(&ImageBuffer::new(image.width, image.height, 1))
            || !gt_geometry.same_dims(image.width, image.height)
            || !rec.crop_cam.same_size(image.width, image.height)
        {
            return Err(Error::format(self.root.join(&rec.image), "query files disagree in size"));
        }
        Ok(Query {
            mask: mask_img.data.iter().map(|&v| v > 0.5).collect(),
            image,
            cam: rec.crop_cam,
            gt_geometry,
        })
    }

    /// The stored set when its size matches, otherwise a freshly rendered
    /// one with the scene seed.
    fn templates(&self, object: usize, cfg: &CoarseConfig) -> Result<Vec<Template>> {
        if cfg.n_templates == self.manifest.n_templates {
            load_template_set(self.root.join(&self.manifest.objects[object].templates))
        } else {
            build_template_set(&self.meshes[object], &self.manifest.camera, cfg, template_seed(self.manifest.seed, object))
        }
    }
}

/// One line of the estimates file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateRecord {
    pub entry: usize,
    pub object: usize,
    pub pose: Option<Matrix4x4>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn estimate_records(outcomes: &[Outcome]) -> Vec<EstimateRecord> {
    outcomes
        .iter()
        .map(|o| EstimateRecord {
            entry: o.entry,
            object: o.object,
            pose: o.estimate.as_ref().map(pose_to_matrix),
            error: o.error.clone(),
        })
        .collect()
}

/// Checks that `records` name every manifest entry once, in order, and
/// turns them back into outcomes.
pub fn outcomes_from_records(source: &dyn SceneSource, records: &[EstimateRecord]) -> Result<Vec<Outcome>> {
    let entries = source.entries();
    if records.len() != entries.len() {
        return Err(Error::ManifestMismatch(format!(
            "{} estimates for {} scene entries",
            records.len(),
            entries.len()
        )));
    }
    records
        .iter()
        .zip(entries)
        .map(|(r, e)| {
            if r.entry != e.id || r.object != e.object {
                return Err(Error::ManifestMismatch(format!("estimate for entry {} does not match the scene", r.entry)));
            }
            let estimate = r.pose.as_ref().map(pose_from_matrix).transpose()?;
            Ok(Outcome {
                entry: r.entry,
                object: r.object,
                coarse: None,
                estimate,
                trace: None,
                error: r.error.clone().or_else(|| estimate.is_none().then(|| "no estimate".to_string())),
            })
        })
        .collect()
}

/// Summary written next to the estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub stage: Stage,
    pub entries: usize,
    pub failures: usize,
}
