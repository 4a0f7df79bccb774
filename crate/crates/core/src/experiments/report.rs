use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::costing::{ConditionalMarginal, CostComparison, CostReport, SurvivalPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    AtMost,
    AtLeast,
}

/// One pass/fail line; `passed` is a pure function of `value`, `threshold`
/// and `relation` (NaN never passes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    #[serde(with = "crate::costing::extended_real")]
    pub value: f64,
    #[serde(with = "crate::costing::extended_real")]
    pub threshold: f64,
    pub relation: Relation,
    pub passed: bool,
}

impl Criterion {
    pub fn new(name: impl Into<String>, value: f64, relation: Relation, threshold: f64) -> Self {
        let mut c = Criterion {
            name: name.into(),
            value,
            threshold,
            relation,
            passed: false,
        };
        c.passed = c.evaluate();
        c
    }

    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Criterion::new(name, value, Relation::AtMost, threshold)
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Criterion::new(name, value, Relation::AtLeast, threshold)
    }

    pub fn evaluate(&self) -> bool {
        match self.relation {
            Relation::AtMost => self.value <= self.threshold,
            Relation::AtLeast => self.value >= self.threshold,
        }
    }
}

/// Law comparison at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointResult {
    pub t: f64,
    pub n_alive_open_loop: usize,
    pub n_alive_projected: usize,
    /// W1 between open-loop and projected conditional marginals.
    #[serde(with = "crate::costing::extended_real")]
    pub w1: f64,
    /// W1 between two independent open-loop ensembles.
    #[serde(with = "crate::costing::extended_real")]
    pub self_w1: f64,
    /// 95th percentile of same-law W1 over random splits of the pooled
    /// open-loop samples.
    #[serde(with = "crate::costing::extended_real")]
    pub calibration_q95: f64,
    #[serde(with = "crate::costing::extended_real")]
    pub w1_threshold: f64,
    pub survival_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub control: String,
    pub open_loop: CostReport,
    pub projected: CostReport,
    /// `J_open_loop - J_projected` with its significance.
    pub comparison: CostComparison,
    /// Projected cost below the open-loop one by at least `cost_sigma` pooled errors.
    pub strict_gap_detected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationPoint {
    pub n: f64,
    pub cost: CostReport,
    /// `|J(α^n) - J(α_ref)|`.
    #[serde(with = "crate::costing::extended_real")]
    pub gap: f64,
    pub gap_stderr: f64,
    /// `mean_i sup_k |X^n_i - X^ref_i|²` under common noise.
    pub mean_sup_sq_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalSeries {
    pub label: String,
    pub points: Vec<SurvivalPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalSet {
    pub t: f64,
    pub series: Vec<(String, ConditionalMarginal)>,
}

/// Everything an experiment measured, with provenance.
///
/// Survival curves and marginal samples are large and are written as CSV
/// by [`crate::io::emit_outputs`] rather than embedded in the JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub control: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub survival_sup_gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub survival_self_gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checkpoints: Vec<CheckpointResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub costs: Vec<CostEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation_reference: Option<CostReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub truncation: Vec<TruncationPoint>,
    pub criteria: Vec<Criterion>,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub survival: Vec<SurvivalSeries>,
    #[serde(skip)]
    pub marginals: Vec<MarginalSet>,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    pub fn failed_criteria(&self) -> impl Iterator<Item = &Criterion> {
        self.criteria.iter().filter(|c| !c.passed)
    }

    /// Re-derives every verdict from the recorded numbers.
    pub fn verdicts_consistent(&self) -> bool {
        self.criteria.iter().all(|c| c.passed == c.evaluate())
    }

    pub fn criterion(&self, name: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdicts_follow_the_numbers() {
        assert!(Criterion::at_most("a", 1.0, 1.0).passed);
        assert!(!Criterion::at_most("a", 1.0 + 1e-15, 1.0).passed);
        assert!(Criterion::at_least("a", 3.0, 3.0).passed);
        assert!(!Criterion::at_most("nan", f64::NAN, 1.0).passed);
        assert!(!Criterion::at_least("nan", f64::NAN, 1.0).passed);
        assert!(!Criterion::at_most("inf", f64::INFINITY, 1.0).passed);
    }

    #[test]
    fn empty_report_passes_vacuously_and_round_trips() {
        let r = ExperimentReport::default();
        assert!(r.passed());
        let json = serde_json::to_string(&r).unwrap();
        let back: ExperimentReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn non_finite_values_serialize() {
        let r = ExperimentReport {
            criteria: vec![Criterion::at_most("x", f64::NAN, f64::INFINITY)],
            ..Default::default()
        };
        let json = serde_json::to_string(&r).unwrap();
        let back: ExperimentReport = serde_json::from_str(&json).unwrap();
        assert!(back.criteria[0].value.is_nan());
        assert!(!back.passed());
        assert!(back.verdicts_consistent());
    }
}
