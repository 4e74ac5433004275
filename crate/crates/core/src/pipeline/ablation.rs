use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::run::{evaluate_outcomes, run_variants, Outcome, SceneSource, Variant};
use crate::coarse::VoteMode;
use crate::error::{Error, Result};
use crate::eval::{average_recall, bootstrap_difference, EvalRecord, MetricThresholds, RecallSummary};
use crate::refine::{AttentionMode, Estimator, RefineNets};

const RESAMPLES: usize = 2000;
const CONFIDENCE: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    NTemplates,
    KSelected,
    VoteMode,
    AttentionMode,
    Estimator,
}

impl SweepAxis {
    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            SweepAxis::NTemplates => &["64", "128", "256"],
            SweepAxis::KSelected => &["1", "2", "4", "8"],
            SweepAxis::VoteMode => &["medoid", "mean"],
            SweepAxis::AttentionMode => &["cg", "vanilla"],
            SweepAxis::Estimator => &["geometric", "learned"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }
}

fn parse<T: clap::ValueEnum>(s: &str) -> Result<T> {
    T::from_str(s, true).map_err(|e| Error::Config(e))
}

fn parse_count(s: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::Config(format!("not a count: {s}")))
}

/// One variant of `base` per sweep value.
pub fn sweep_variants(axis: SweepAxis, values: &[String], base: &RunConfig) -> Result<Vec<Variant>> {
    if values.is_empty() {
        return Err(Error::EmptyInput("no sweep values".into()));
    }
    values
        .iter()
        .map(|s| {
            let mut v = Variant::from_config(s.clone(), base);
            match axis {
                SweepAxis::NTemplates => v.coarse.n_templates = parse_count(s)?,
                SweepAxis::KSelected => v.coarse.k_selected = parse_count(s)?,
                SweepAxis::VoteMode => v.coarse.vote = parse::<VoteMode>(s)?,
                SweepAxis::AttentionMode => v.refine.attention = parse::<AttentionMode>(s)?,
                SweepAxis::Estimator => v.refine.estimator = parse::<Estimator>(s)?,
            }
            v.coarse.validate()?;
            Ok(v)
        })
        .collect()
}

/// Paired bootstrap interval of a per-record score difference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub recall: RecallSummary,
    pub failures: usize,
    /// Per-record score of this row minus the first row's.
    pub delta_vs_first: Interval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub axis: Option<SweepAxis>,
    pub thresholds: String,
    pub trials: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Plain-text table, one row per configuration.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<12} {:>7} {:>7} {:>7} {:>7} {:>6}  delta vs first [{:.0}% CI]\n",
            "config",
            "AR",
            "VSD",
            "MSSD",
            "MSPD",
            "fail",
            CONFIDENCE * 100.0
        );
        for r in &self.rows {
            let d = r.delta_vs_first;
            let _ = writeln!(
                s,
                "{:<12} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>6}  {:+.4} [{:+.4}, {:+.4}]",
                r.label, r.recall.ar, r.recall.vsd_recall, r.recall.mssd_recall, r.recall.mspd_recall, r.failures, d.mean, d.lo, d.hi
            );
        }
        s
    }
}

/// Recall per labeled outcome list, with bootstrap intervals against the
/// first list.
pub fn compare_outcomes(
    source: &dyn SceneSource,
    labeled: &[(String, &[Outcome])],
    th: &MetricThresholds,
    seed: u64,
) -> Result<(Vec<AblationRow>, Vec<Vec<EvalRecord>>)> {
    let records = labeled
        .iter()
        .map(|(_, o)| evaluate_outcomes(source, o, th))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<Vec<f64>> = records.iter().map(|r| r.iter().map(EvalRecord::score).collect()).collect();
    let rows = labeled
        .iter()
        .zip(&records)
        .zip(&scores)
        .map(|(((label, o), rec), sc)| {
            let (mean, lo, hi) = bootstrap_difference(sc, &scores[0], RESAMPLES, CONFIDENCE, seed)?;
            Ok(AblationRow {
                label: label.clone(),
                recall: average_recall(rec)?,
                failures: o.iter().filter(|x| x.error.is_some()).count(),
                delta_vs_first: Interval { mean, lo, hi },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, records))
}

/// Runs one configuration per sweep value over the scenes and tabulates
/// recall.
pub fn run_ablation(
    axis: SweepAxis,
    values: &[String],
    base: &RunConfig,
    source: &dyn SceneSource,
    nets: &RefineNets,
) -> Result<AblationReport> {
    let variants = sweep_variants(axis, values, base)?;
    let outcomes = run_variants(source, &variants, nets, base.seed, base.worker_count())?;
    let labeled: Vec<(String, &[Outcome])> =
        variants.iter().zip(&outcomes).map(|(v, o)| (v.label.clone(), o.as_slice())).collect();
    let (rows, _) = compare_outcomes(source, &labeled, &base.thresholds, base.seed)?;
    Ok(AblationReport {
        axis: Some(axis),
        thresholds: base.thresholds.name.clone(),
        trials: source.entries().len(),
        rows,
    })
}
