use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{MeanStd, MetricReport};
use crate::models::ModelKind;

const REFERENCE_JSON: &str = include_str!("../../resources/reference.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    /// `[mean, std]`, already scaled.
    pub train: [f64; 2],
    pub test: [f64; 2],
    pub energy: [f64; 2],
}

impl ReferenceRow {
    fn metric(&self, name: &str) -> f64 {
        match name {
            "train" => self.train[0],
            "test" => self.test[0],
            _ => self.energy[0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTable {
    pub scale_exponent: i32,
    pub rows: BTreeMap<ModelKind, ReferenceRow>,
}

/// Published reference values keyed by preset name.
pub fn reference_tables() -> BTreeMap<String, ReferenceTable> {
    serde_json::from_str(REFERENCE_JSON).expect("bundled reference values parse")
}

/// One pairwise ordering from the reference: `lower` beat `higher` on `metric`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub metric: String,
    pub lower: ModelKind,
    pub higher: ModelKind,
    pub observed_lower: f64,
    pub observed_higher: f64,
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingSummary {
    pub preset: String,
    pub checks: Vec<OrderingCheck>,
    pub agreed: usize,
    pub total: usize,
}

fn observed(report: &MetricReport, metric: &str) -> MeanStd {
    match metric {
        "train" => report.train,
        "test" => report.test,
        _ => report.energy,
    }
}

/// Compares each pairwise ordering of the reference means with the observed
/// means. Returns `None` for presets without reference values.
pub fn compare_orderings(preset: &str, reports: &[MetricReport]) -> Option<OrderingSummary> {
    let table = reference_tables().remove(preset)?;
    let find = |k: ModelKind| reports.iter().find(|r| r.model == k.name());
    let mut checks = Vec::new();
    for metric in ["train", "test", "energy"] {
        for (i, a) in ModelKind::ALL.iter().enumerate() {
            for b in &ModelKind::ALL[i + 1..] {
                let (Some(ra), Some(rb), Some(ta), Some(tb)) = (find(*a), find(*b), table.rows.get(a), table.rows.get(b))
                else {
                    continue;
                };
                let (lower, higher, rl, rh) = if ta.metric(metric) <= tb.metric(metric) {
                    (*a, *b, ra, rb)
                } else {
                    (*b, *a, rb, ra)
                };
                let (ol, oh) = (observed(rl, metric).mean, observed(rh, metric).mean);
                checks.push(OrderingCheck {
                    metric: metric.into(),
                    lower,
                    higher,
                    observed_lower: ol,
                    observed_higher: oh,
                    agrees: ol <= oh,
                });
            }
        }
    }
    Some(OrderingSummary {
        preset: preset.into(),
        agreed: checks.iter().filter(|c| c.agrees).count(),
        total: checks.len(),
        checks,
    })
}
