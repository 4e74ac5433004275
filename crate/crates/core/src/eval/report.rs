use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::recall::{EvalRecord, MetricThresholds, RecallSummary};
use crate::error::Result;

/// One CSV row per (record, metric, threshold): `object,metric,threshold,pass`.
/// VSD thresholds are written as `tau/cutoff`.
pub fn records_csv(records: &[EvalRecord], th: &MetricThresholds) -> String {
    let mut s = String::from("object,metric,threshold,pass\n");
    for r in records {
        let mut k = 0;
        for tau in &th.vsd_taus {
            for c in &th.vsd_thresholds {
                let _ = writeln!(s, "{},vsd,{tau}/{c},{}", r.object, r.vsd_pass[k] as u8);
                k += 1;
            }
        }
        for (c, p) in th.mssd_thresholds.iter().zip(&r.mssd_pass) {
            let _ = writeln!(s, "{},mssd,{c},{}", r.object, *p as u8);
        }
        for (c, p) in th.mspd_thresholds.iter().zip(&r.mspd_pass) {
            let _ = writeln!(s, "{},mspd,{c},{}", r.object, *p as u8);
        }
    }
    s
}

/// A failed entry: which object and pose index, and the error text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub object: usize,
    pub index: usize,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub thresholds: MetricThresholds,
    pub recall: RecallSummary,
    pub records: usize,
    pub failures: Vec<Failure>,
}

pub fn write_report(dir: &Path, records: &[EvalRecord], summary: &EvalSummary) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("records.csv"), records_csv(records, &summary.thresholds))?;
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(summary)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;

    #[test]
    fn csv_has_one_row_per_threshold() {
        let th = MetricThresholds::bop();
        let r = EvalRecord {
            object: 3,
            gt: Pose::identity(),
            estimate: None,
            errors: None,
            vsd_pass: vec![false; 100],
            mssd_pass: vec![true; 10],
            mspd_pass: vec![false; 10],
        };
        let csv = records_csv(&[r], &th);
        assert_eq!(csv.lines().count(), 1 + 120);
        assert!(csv.contains("3,mssd,0.05,1"));
        assert!(csv.contains("3,vsd,0.05/0.1,0"));
    }
}
