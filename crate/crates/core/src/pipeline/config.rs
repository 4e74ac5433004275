use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::scene::SceneConfig;
use crate::coarse::CoarseConfig;
use crate::error::{Error, Result};
use crate::eval::MetricThresholds;
use crate::refine::{GeometryNet, RefineNets, RefinementConfig, RelPoseNet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    /// Coarse pose only.
    Coarse,
    /// Coarse pose followed by refinement.
    #[default]
    Full,
}

/// Every knob of a run. Unknown keys are rejected when parsing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub stage: Stage,
    pub scene: SceneConfig,
    pub coarse: CoarseConfig,
    pub refine: RefinementConfig,
    pub thresholds: MetricThresholds,
    /// Entry-level worker threads; 0 uses the available parallelism.
    pub workers: usize,
    /// Geometry network weights (used by the network geometry source).
    pub geometry_weights: Option<PathBuf>,
    /// Relative-pose regressor weights (used by the learned estimator).
    pub relpose_weights: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            stage: Stage::Full,
            scene: SceneConfig::default(),
            coarse: CoarseConfig::default(),
            refine: RefinementConfig::default(),
            thresholds: MetricThresholds::bop(),
            workers: 1,
            geometry_weights: None,
            relpose_weights: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str::<RunConfig>(&text)
            .map_err(|e| Error::format(path, e.to_string()))
            .and_then(|c| c.validate().map(|_| c))
    }

    pub fn validate(&self) -> Result<()> {
        self.coarse.validate()?;
        self.refine.validate()?;
        self.thresholds.validate()?;
        self.scene.camera()?;
        let s = &self.scene;
        if s.objects == 0 || s.poses_per_object == 0 {
            return Err(Error::Config("scene needs at least one object and one pose".into()));
        }
        if !(s.depth_range[0] > 0.0 && s.depth_range[0] < s.depth_range[1]) || !(0.0..1.0).contains(&s.max_offset) {
            return Err(Error::Config("invalid scene depth range or offset".into()));
        }
        for p in [&self.geometry_weights, &self.relpose_weights].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Config(format!("weights file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn worker_count(&self) -> usize {
        match self.workers {
            0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
            n => n,
        }
    }

    /// Randomly initialized networks, replaced by the configured weights.
    pub fn networks(&self) -> Result<RefineNets> {
        let mut nets = RefineNets::new(self.refine.n_freq, self.seed);
        if let Some(p) = &self.geometry_weights {
            nets.geometry = GeometryNet::load(p, self.refine.n_freq)?;
        }
        if let Some(p) = &self.relpose_weights {
            nets.relpose = RelPoseNet::load(p, self.refine.n_freq)?;
        }
        Ok(nets)
    }
}
