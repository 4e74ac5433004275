//! Scene generation, batch runs, storage and ablations.

pub mod ablation;
pub mod config;
pub mod overlay;
pub mod run;
pub mod scene;
pub mod store;

pub use ablation::{compare_outcomes, run_ablation, sweep_variants, AblationReport, AblationRow, SweepAxis};
pub use config::{RunConfig, Stage};
pub use run::{evaluate_outcomes, failures, run_variants, Entry, Outcome, SceneSource, SyntheticSuite, Variant};
pub use store::{write_scene, EstimateRecord, Manifest, SceneDir};
