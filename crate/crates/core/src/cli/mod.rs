//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::coarse::VoteMode;
use crate::error::{Error, Result};
use crate::eval::{average_recall, write_report, EvalSummary, MetricThresholds};
use crate::pipeline::overlay::draw_overlay;
use crate::pipeline::store::{estimate_records, outcomes_from_records, EstimateRecord, EstimateSummary};
use crate::pipeline::{
    evaluate_outcomes, failures, run_ablation, run_variants, write_scene, RunConfig, SceneDir, SceneSource, Stage,
    SweepAxis, SyntheticSuite, Variant,
};
use crate::refine::{AttentionMode, Estimator, GeometrySource};

#[derive(Debug, Parser)]
#[command(name = "geopose", version, about = "Template-based 6D pose estimation on procedural scenes")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub stage: Option<Stage>,
    #[arg(long, global = true, value_enum)]
    pub estimator: Option<Estimator>,
    /// Refine against the ground-truth query geometry.
    #[arg(long, global = true)]
    pub oracle_geometry: bool,
    #[arg(long, global = true, value_enum)]
    pub vote: Option<VoteMode>,
    #[arg(long, global = true, value_enum)]
    pub attention: Option<AttentionMode>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ThresholdGrid {
    Bop,
    Synthetic,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render meshes, template sets and query crops into a scene directory.
    Generate,
    /// Run the pipeline on every scene entry.
    Estimate {
        #[arg(long)]
        scene: PathBuf,
    },
    /// Score an estimates file against a scene.
    Evaluate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        estimates: PathBuf,
        /// Overrides the configured threshold grid.
        #[arg(long, value_enum)]
        thresholds: Option<ThresholdGrid>,
    },
    /// Sweep one pipeline setting and tabulate recall.
    Ablate {
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma-separated values; defaults depend on the axis.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        /// Scene directory; procedural scenes from the configuration otherwise.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, value_enum)]
        thresholds: Option<ThresholdGrid>,
    },
    /// Quick end-to-end checks on a tiny scene.
    Selftest,
}

impl GlobalArgs {
    /// Configuration file (or `fallback`, or defaults) with flag overrides.
    pub fn resolve(&self, fallback: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = match (&self.config, fallback) {
            (Some(p), _) => RunConfig::load(p)?,
            (None, Some(p)) if p.exists() => RunConfig::load(p)?,
            _ => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.stage {
            cfg.stage = s;
        }
        if let Some(e) = self.estimator {
            cfg.refine.estimator = e;
        }
        if self.oracle_geometry {
            cfg.refine.geometry = GeometrySource::Oracle;
        }
        if let Some(v) = self.vote {
            cfg.coarse.vote = v;
        }
        if let Some(a) = self.attention {
            cfg.refine.attention = a;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_or(&self, default: PathBuf) -> PathBuf {
        self.out.clone().unwrap_or(default)
    }
}

fn apply_grid(cfg: &mut RunConfig, grid: Option<ThresholdGrid>) {
    match grid {
        Some(ThresholdGrid::Bop) => cfg.thresholds = MetricThresholds::bop(),
        Some(ThresholdGrid::Synthetic) => cfg.thresholds = MetricThresholds::synthetic(),
        None => {}
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<SceneDir> {
    let suite = SyntheticSuite::generate(cfg)?;
    log::info!("writing {} entries to {}", suite.entries.len(), out.display());
    write_scene(out, cfg, &suite)
}

/// Writes `estimates.json`, `summary.json`, `traces/` and `overlays/`.
pub fn cmd_estimate(cfg: &RunConfig, scene: &SceneDir, out: &Path) -> Result<EstimateSummary> {
    let nets = cfg.networks()?;
    let variant = Variant::from_config(format!("{:?}", cfg.stage).to_lowercase(), cfg);
    let outcomes = run_variants(scene, std::slice::from_ref(&variant), &nets, cfg.seed, cfg.worker_count())?.remove(0);
    fs::create_dir_all(out.join("traces"))?;
    fs::create_dir_all(out.join("overlays"))?;
    let mut overlay_errors = Vec::new();
    for o in &outcomes {
        if let Some(t) = &o.trace {
            write_json(&out.join(format!("traces/{:04}.json", o.entry)), t)?;
        }
        let e = &scene.entries()[o.entry];
        let drawn = scene
            .query(e, &cfg.coarse)
            .and_then(|q| draw_overlay(&q.image, &scene.meshes()[e.object], &q.cam, &e.gt, o.estimate.as_ref()))
            .and_then(|img| img.write_ppm(out.join(format!("overlays/{:04}.ppm", o.entry))));
        if let Err(err) = drawn {
            overlay_errors.push(format!("entry {}: {err}", o.entry));
        }
    }
    write_json(&out.join("estimates.json"), &estimate_records(&outcomes))?;
    let summary = EstimateSummary {
        stage: cfg.stage,
        entries: outcomes.len(),
        failures: outcomes.iter().filter(|o| o.error.is_some()).count(),
    };
    #[derive(serde::Serialize)]
    struct Report<'a> {
        #[serde(flatten)]
        summary: &'a EstimateSummary,
        errors: Vec<crate::eval::Failure>,
        overlay_errors: Vec<String>,
    }
    write_json(
        &out.join("summary.json"),
        &Report {
            summary: &summary,
            errors: failures(scene, &outcomes),
            overlay_errors,
        },
    )?;
    Ok(summary)
}

/// Writes `records.csv` and `summary.json`.
pub fn cmd_evaluate(cfg: &RunConfig, scene: &SceneDir, estimates: &Path, out: &Path) -> Result<EvalSummary> {
    let text = fs::read_to_string(estimates)?;
    let records: Vec<EstimateRecord> =
        serde_json::from_str(&text).map_err(|e| Error::format(estimates, e.to_string()))?;
    let outcomes = outcomes_from_records(scene, &records)?;
    let evals = evaluate_outcomes(scene, &outcomes, &cfg.thresholds)?;
    let summary = EvalSummary {
        thresholds: cfg.thresholds.clone(),
        recall: average_recall(&evals)?,
        records: evals.len(),
        failures: failures(scene, &outcomes),
    };
    write_report(out, &evals, &summary)?;
    Ok(summary)
}

/// Tiny oracle run plus metric identities; returns failed check names.
pub fn cmd_selftest(seed: u64) -> Result<Vec<String>> {
    use crate::eval::{mspd, mssd};
    let mut cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    cfg.scene.objects = 2;
    cfg.scene.poses_per_object = 2;
    cfg.coarse.n_templates = 32;
    cfg.refine.geometry = GeometrySource::Oracle;
    let suite = SyntheticSuite::generate(&cfg)?;
    let nets = cfg.networks()?;
    let out = run_variants(&suite, &[Variant::from_config("oracle", &cfg)], &nets, seed, 1)?.remove(0);
    let mut failed = Vec::new();
    let mut check = |name: &str, ok: bool| {
        println!("{} {name}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failed.push(name.to_string());
        }
    };
    let near = out.iter().zip(&suite.entries).all(|(o, e)| {
        o.estimate.is_some_and(|p| {
            let d = suite.meshes[e.object].diameter;
            p.rotation_error(&e.gt) < 1e-3 && p.translation_error(&e.gt) < 1e-3 * d
        })
    });
    check("oracle refinement recovers the pose", near);
    let e = &suite.entries[0];
    let m = &suite.meshes[e.object];
    check("metrics vanish at the ground truth", mssd(&e.gt, &e.gt, m) == 0.0 && mspd(&e.gt, &e.gt, m, &suite.cam)? == 0.0);
    let recs = evaluate_outcomes(&suite, &out, &cfg.thresholds)?;
    check("recall is one for the oracle", average_recall(&recs)?.ar == 1.0);
    Ok(failed)
}

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Generate => {
            let cfg = g.resolve(None)?;
            let out = g.out_or(PathBuf::from("scene"));
            let scene = cmd_generate(&cfg, &out)?;
            println!("{} entries written to {}", scene.manifest.entries.len(), out.display());
        }
        Command::Estimate { scene } => {
            let cfg = g.resolve(Some(&scene.join(crate::pipeline::store::CONFIG)))?;
            let dir = SceneDir::open(scene)?;
            let out = g.out_or(scene.join("estimates"));
            let s = cmd_estimate(&cfg, &dir, &out)?;
            println!("{} entries, {} failures; estimates in {}", s.entries, s.failures, out.join("estimates.json").display());
        }
        Command::Evaluate {
            scene,
            estimates,
            thresholds,
        } => {
            let mut cfg = g.resolve(Some(&scene.join(crate::pipeline::store::CONFIG)))?;
            apply_grid(&mut cfg, *thresholds);
            let dir = SceneDir::open(scene)?;
            let out = g.out_or(estimates.parent().unwrap_or(Path::new(".")).join("eval"));
            let s = cmd_evaluate(&cfg, &dir, estimates, &out)?;
            println!(
                "AR {:.4} (VSD {:.4}, MSSD {:.4}, MSPD {:.4}) on {} records, {} thresholds, {} failures",
                s.recall.ar,
                s.recall.vsd_recall,
                s.recall.mssd_recall,
                s.recall.mspd_recall,
                s.records,
                s.thresholds.name,
                s.failures.len()
            );
        }
        Command::Ablate {
            axis,
            values,
            scene,
            thresholds,
        } => {
            let fallback = scene.as_ref().map(|s| s.join(crate::pipeline::store::CONFIG));
            let mut cfg = g.resolve(fallback.as_deref())?;
            apply_grid(&mut cfg, *thresholds);
            let values = if values.is_empty() { axis.default_values() } else { values.clone() };
            let nets = cfg.networks()?;
            let report = match scene {
                Some(s) => run_ablation(*axis, &values, &cfg, &SceneDir::open(s)?, &nets)?,
                None => run_ablation(*axis, &values, &cfg, &SyntheticSuite::generate(&cfg)?, &nets)?,
            };
            let out = g.out_or(PathBuf::from("ablation"));
            fs::create_dir_all(&out)?;
            write_json(&out.join("ablation.json"), &report)?;
            fs::write(out.join("ablation.txt"), report.table())?;
            print!("{}", report.table());
        }
        Command::Selftest => {
            let failed = cmd_selftest(g.seed.unwrap_or(0))?;
            if !failed.is_empty() {
                return Err(Error::Config(format!("self-test failed: {}", failed.join(", "))));
            }
        }
    }
    Ok(())
}
