//! Hard versus soft EM collapse comparison, derived from metrics streams.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::metrics::MetricsRecord;

/// What "collapsed" means in the report.
pub const COLLAPSE_METRIC: &str =
    "usage_perplexity below collapse_threshold; a codebook-side proxy for the translation-quality collapse it stands in for";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: u64,
    pub usage_perplexity: f64,
    pub total_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: String,
    pub final_usage_perplexity: f64,
    pub final_total_loss: f64,
    /// First logged step whose usage perplexity is below the threshold.
    pub steps_to_collapse: Option<u64>,
    pub diverged: bool,
    pub trajectory: Vec<TrajectoryPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub codebook_size: usize,
    pub collapse_threshold: f64,
    pub collapse_metric: String,
    pub modes: Vec<ModeSummary>,
}

impl StabilityReport {
    /// Builds one summary per label from the records carrying that label.
    pub fn from_records(
        records: &[MetricsRecord],
        labels: &[String],
        threshold: f64,
        k: usize,
    ) -> Result<Self> {
        let mut modes = Vec::with_capacity(labels.len());
        for label in labels {
            let recs: Vec<&MetricsRecord> = records.iter().filter(|r| &r.mode == label).collect();
            let last = recs
                .last()
                .ok_or_else(|| Error::invalid(format!("no metrics for mode {label}")))?;
            let steps_to_collapse = recs
                .iter()
                .find(|r| r.usage_perplexity.is_finite() && r.usage_perplexity < threshold)
                .map(|r| r.step);
            modes.push(ModeSummary {
                mode: label.clone(),
                final_usage_perplexity: last.usage_perplexity,
                final_total_loss: last.total_loss,
                steps_to_collapse,
                diverged: recs.iter().any(|r| r.diverged),
                trajectory: recs
                    .iter()
                    .map(|r| TrajectoryPoint {
                        step: r.step,
                        usage_perplexity: r.usage_perplexity,
                        total_loss: r.total_loss,
                    })
                    .collect(),
            });
        }
        Ok(Self {
            codebook_size: k,
            collapse_threshold: threshold,
            collapse_metric: COLLAPSE_METRIC.to_string(),
            modes,
        })
    }

    pub fn mode(&self, label: &str) -> Option<&ModeSummary> {
        self.modes.iter().find(|m| m.mode == label)
    }

    /// `step,mode,usage_perplexity,total_loss` with one row per record.
    pub fn csv(records: &[MetricsRecord]) -> String {
        let mut out = String::from("step,mode,usage_perplexity,total_loss\n");
        for r in records {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.step, r.mode, r.usage_perplexity, r.total_loss
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: u64, mode: &str, usage: f64) -> MetricsRecord {
        MetricsRecord {
            step,
            l_r: 1.0,
            commitment: 0.5,
            total_loss: 1.5,
            usage_perplexity: usage,
            dead_codes: 0,
            mode: mode.into(),
            seed: 0,
            wall_ms: None,
            diverged: false,
        }
    }

    #[test]
    fn collapse_is_first_step_below_threshold() {
        let recs = vec![
            rec(0, "a", 30.0),
            rec(10, "a", 3.0),
            rec(20, "a", 40.0),
            rec(0, "b", 30.0),
            rec(10, "b", 31.0),
        ];
        let labels = vec!["a".to_string(), "b".to_string()];
        let r = StabilityReport::from_records(&recs, &labels, 25.6, 256).unwrap();
        assert_eq!(r.mode("a").unwrap().steps_to_collapse, Some(10));
        assert_eq!(r.mode("a").unwrap().final_usage_perplexity, 40.0);
        assert_eq!(r.mode("b").unwrap().steps_to_collapse, None);
        assert_eq!(r.mode("b").unwrap().trajectory.len(), 2);
        assert!(StabilityReport::from_records(&recs, &["c".to_string()], 1.0, 4).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let csv = StabilityReport::csv(&[rec(0, "a", 2.5)]);
        assert_eq!(csv, "step,mode,usage_perplexity,total_loss\n0,a,2.5,1.5\n");
    }
}
