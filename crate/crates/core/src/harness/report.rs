use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mmapp::RunMode;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("reports come from different scenarios ({a} vs {b})")]
    ScenarioMismatch { a: String, b: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed report: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    /// Nearest-rank percentiles over the given samples.
    pub fn from_samples(mut ms: Vec<f64>) -> Self {
        if ms.is_empty() {
            return Self::default();
        }
        ms.sort_by(f64::total_cmp);
        let rank = |p: f64| ms[((p * ms.len() as f64).ceil() as usize).clamp(1, ms.len()) - 1];
        LatencyStats {
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            p50_ms: rank(0.5),
            p95_ms: rank(0.95),
            max_ms: *ms.last().unwrap(),
        }
    }
}

/// Aggregates of one run; each figure can be recomputed from the run logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub scenario_hash: String,
    pub mode: RunMode,
    pub seed: u64,
    pub horizon_ms: f64,
    pub theta: f64,
    pub sample_ms: f64,
    pub controller_messages: u64,
    pub messages_by_kind: BTreeMap<String, u64>,
    pub transactions: u64,
    pub transactions_completed: u64,
    pub transactions_by_reason: BTreeMap<String, u64>,
    pub cp_latency: LatencyStats,
    pub rules_by_kind: BTreeMap<String, u64>,
    pub flow_disruption_ms: BTreeMap<String, f64>,
    pub handovers_intra: u64,
    pub handovers_inter: u64,
    pub local_handovers: u64,
    pub handover_requests: u64,
    pub instance_time_ms: f64,
    pub instance_time_by_mn: BTreeMap<String, f64>,
    pub instances_refused: u64,
    pub residual_overload_ms: f64,
    pub fallback_selections: u64,
    pub conservation_violations: u64,
    pub final_paths: BTreeMap<String, String>,
}

impl MetricsReport {
    /// Numeric figures as flat `name -> value` pairs; map entries become
    /// `map.key`.
    pub fn numeric(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: f64| {
            m.insert(k.to_owned(), v);
        };
        put("controller_messages", self.controller_messages as f64);
        put("transactions", self.transactions as f64);
        put("transactions_completed", self.transactions_completed as f64);
        put("cp_latency.mean_ms", self.cp_latency.mean_ms);
        put("cp_latency.p50_ms", self.cp_latency.p50_ms);
        put("cp_latency.p95_ms", self.cp_latency.p95_ms);
        put("cp_latency.max_ms", self.cp_latency.max_ms);
        put("handovers_intra", self.handovers_intra as f64);
        put("handovers_inter", self.handovers_inter as f64);
        put("local_handovers", self.local_handovers as f64);
        put("handover_requests", self.handover_requests as f64);
        put("instance_time_ms", self.instance_time_ms);
        put("instances_refused", self.instances_refused as f64);
        put("residual_overload_ms", self.residual_overload_ms);
        put("fallback_selections", self.fallback_selections as f64);
        put("conservation_violations", self.conservation_violations as f64);
        for (k, v) in &self.messages_by_kind {
            m.insert(format!("messages_by_kind.{k}"), *v as f64);
        }
        for (k, v) in &self.transactions_by_reason {
            m.insert(format!("transactions_by_reason.{k}"), *v as f64);
        }
        for (k, v) in &self.rules_by_kind {
            m.insert(format!("rules_by_kind.{k}"), *v as f64);
        }
        for (k, v) in &self.flow_disruption_ms {
            m.insert(format!("flow_disruption_ms.{k}"), *v);
        }
        for (k, v) in &self.instance_time_by_mn {
            m.insert(format!("instance_time_by_mn.{k}"), *v);
        }
        m
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    /// `metric,value` rows: identity fields, numbers, then final paths.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "value"]).unwrap();
        w.write_record(["scenario", &self.scenario]).unwrap();
        w.write_record(["scenario_hash", &self.scenario_hash]).unwrap();
        w.write_record(["mode", self.mode.label()]).unwrap();
        w.write_record(["seed", &self.seed.to_string()]).unwrap();
        w.write_record(["horizon_ms", &self.horizon_ms.to_string()]).unwrap();
        for (k, v) in self.numeric() {
            w.write_record([k, v.to_string()]).unwrap();
        }
        for (k, v) in &self.final_paths {
            w.write_record([format!("final_paths.{k}"), v.clone()]).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        serde_json::from_str(text).map_err(|e| ReportError::Malformed(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

pub fn emit(report: &MetricsReport, format: Format, path: &Path) -> Result<(), ReportError> {
    let text = match format {
        Format::Csv => report.to_csv(),
        Format::Json => report.to_json(),
    };
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<MetricsReport, ReportError> {
    MetricsReport::from_json(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub a: f64,
    pub b: f64,
    /// `b - a`.
    pub delta: f64,
    /// `b / a`; absent when `a` is 0.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub scenario_hash: String,
    pub mode_a: RunMode,
    pub mode_b: RunMode,
    pub metrics: BTreeMap<String, MetricDelta>,
}

pub fn compare(a: &MetricsReport, b: &MetricsReport) -> Result<ComparisonSummary, ReportError> {
    if a.scenario_hash != b.scenario_hash {
        return Err(ReportError::ScenarioMismatch { a: a.scenario_hash.clone(), b: b.scenario_hash.clone() });
    }
    let (na, nb) = (a.numeric(), b.numeric());
    let keys: std::collections::BTreeSet<&String> = na.keys().chain(nb.keys()).collect();
    let metrics = keys
        .into_iter()
        .map(|k| {
            let x = na.get(k).copied().unwrap_or(0.0);
            let y = nb.get(k).copied().unwrap_or(0.0);
            (k.clone(), MetricDelta { a: x, b: y, delta: y - x, ratio: (x != 0.0).then(|| y / x) })
        })
        .collect();
    Ok(ComparisonSummary { scenario_hash: a.scenario_hash.clone(), mode_a: a.mode, mode_b: b.mode, metrics })
}

impl ComparisonSummary {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serialises");
        s.push('\n');
        s
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let width = self.metrics.keys().map(String::len).max().unwrap_or(6).max(6);
        let mut s = String::new();
        let (la, lb) = (self.mode_a.label(), self.mode_b.label());
        writeln!(s, "{:width$}  {la:>14}  {lb:>14}  {:>14}  {:>9}", "metric", "delta", "ratio").unwrap();
        for (k, d) in &self.metrics {
            let ratio = d.ratio.map_or_else(|| "-".to_owned(), |r| format!("{r:.4}"));
            writeln!(s, "{k:width$}  {:>14.3}  {:>14.3}  {:>14.3}  {ratio:>9}", d.a, d.b, d.delta).unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{fixtures, run};

    fn fig3(mode: RunMode) -> MetricsReport {
        run(&fixtures::fig3(), mode).unwrap().report
    }

    #[test]
    fn percentiles_use_nearest_rank() {
        let s = LatencyStats::from_samples(vec![4.0, 1.0, 3.0, 2.0]);
        assert_eq!((s.mean_ms, s.p50_ms, s.p95_ms, s.max_ms), (2.5, 2.0, 4.0, 4.0));
        assert_eq!(LatencyStats::from_samples(vec![]), LatencyStats::default());
    }

    #[test]
    fn json_emit_is_stable_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let r = fig3(RunMode::Mmaas);
        let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
        emit(&r, Format::Json, &a).unwrap();
        emit(&r, Format::Json, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(read_report(&a).unwrap(), r);
    }

    #[test]
    fn csv_header() {
        let csv = fig3(RunMode::Mmaas).to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("metric,value"));
        assert_eq!(lines.next(), Some("scenario,fig3"));
    }

    #[test]
    fn identical_reports_have_zero_deltas() {
        let r = fig3(RunMode::Mmaas);
        let c = compare(&r, &r).unwrap();
        assert!(c.metrics.values().all(|d| d.delta == 0.0));
        assert!(c.to_text().starts_with("metric"));
    }

    #[test]
    fn different_scenarios_do_not_compare() {
        let a = fig3(RunMode::Mmaas);
        let mut b = a.clone();
        b.scenario_hash = "other".into();
        assert!(matches!(compare(&a, &b), Err(ReportError::ScenarioMismatch { .. })));
    }
}
