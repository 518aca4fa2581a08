//! Evaluation reports, grouped summaries and CSV export.

use std::collections::BTreeMap;

use paircam_core::metrics::Metric;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

/// A metric the runner can aggregate: the six faithfulness metrics or
/// maximum sensitivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricKind {
    Faithfulness(Metric),
    MaxSensitivity,
}

impl MetricKind {
    pub fn parse(s: &str) -> CliResult<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ms" | "max-sens" | "sensitivity" => Ok(MetricKind::MaxSensitivity),
            _ => Ok(MetricKind::Faithfulness(Metric::parse(s)?)),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Faithfulness(m) => m.name(),
            MetricKind::MaxSensitivity => "MS",
        }
    }

    pub fn mode(&self) -> &'static str {
        match self {
            MetricKind::Faithfulness(Metric::SI) => "simultaneous_insertion",
            MetricKind::Faithfulness(Metric::SD) => "simultaneous_deletion",
            MetricKind::Faithfulness(Metric::CI) => "conditional_insertion",
            MetricKind::Faithfulness(Metric::CD) => "conditional_deletion",
            MetricKind::Faithfulness(Metric::SAD) => "simultaneous_average_drop",
            MetricKind::Faithfulness(Metric::CAD) => "conditional_average_drop",
            MetricKind::MaxSensitivity => "max_sensitivity",
        }
    }

    /// JSON key holding the aggregate value.
    pub fn value_key(&self) -> &'static str {
        match self {
            MetricKind::Faithfulness(Metric::SAD | Metric::CAD) => "drop",
            MetricKind::Faithfulness(_) => "auc",
            MetricKind::MaxSensitivity => "sensitivity",
        }
    }
}

/// Aggregate of one (model, method, metric) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub model: String,
    pub method: String,
    pub metric: String,
    pub mode: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub drop: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sensitivity: Option<f64>,
    pub n_pairs: usize,
    pub skipped: usize,
    pub per_pair: Vec<Option<f64>>,
    pub config: Value,
}

impl ReportEntry {
    pub fn new(model: &str, method: &str, kind: MetricKind, values: Vec<Option<f64>>, config: Value) -> Self {
        let kept: Vec<f64> = values.iter().flatten().copied().collect();
        let mean = (!kept.is_empty()).then(|| kept.iter().sum::<f64>() / kept.len() as f64);
        let mut e = ReportEntry {
            model: model.into(),
            method: method.into(),
            metric: kind.name().into(),
            mode: kind.mode().into(),
            auc: None,
            drop: None,
            sensitivity: None,
            n_pairs: kept.len(),
            skipped: values.len() - kept.len(),
            per_pair: values,
            config,
        };
        match kind.value_key() {
            "auc" => e.auc = mean,
            "drop" => e.drop = mean,
            _ => e.sensitivity = mean,
        }
        e
    }

    pub fn value(&self) -> Option<f64> {
        self.auc.or(self.drop).or(self.sensitivity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub run_config: Value,
    pub entries: Vec<ReportEntry>,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// One row per (method, metric).
pub fn report_csv(report: &Report) -> String {
    let mut out = String::from("model,method,metric,value,n_pairs,skipped\n");
    for e in &report.entries {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            csv_field(&e.model),
            csv_field(&e.method),
            e.metric,
            fmt_opt(e.value()),
            e.n_pairs,
            e.skipped
        ));
    }
    out
}

pub const GROUPS: [(&str, [Metric; 2], bool); 3] = [
    ("insertion", [Metric::SI, Metric::CI], false),
    ("deletion", [Metric::SD, Metric::CD], true),
    ("average_drop", [Metric::SAD, Metric::CAD], true),
];

/// Grouped scores of one (model, method); higher is better in every group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub method: String,
    pub groups: BTreeMap<String, Option<f64>>,
    pub absent: Vec<String>,
}

/// Group score: mean for insertion, one minus the mean for the others.
/// A group with a missing member is omitted.
pub fn group_scores(values: &BTreeMap<Metric, f64>) -> (BTreeMap<String, Option<f64>>, Vec<String>) {
    let mut groups = BTreeMap::new();
    let mut absent = Vec::new();
    for (name, members, inverted) in GROUPS {
        let got: Vec<f64> = members.iter().filter_map(|m| values.get(m).copied()).collect();
        for m in members {
            if !values.contains_key(&m) {
                absent.push(m.name().to_string());
            }
        }
        let score = (got.len() == members.len()).then(|| {
            let mean = got.iter().sum::<f64>() / got.len() as f64;
            if inverted {
                1.0 - mean
            } else {
                mean
            }
        });
        groups.insert(name.to_string(), score);
    }
    (groups, absent)
}

pub fn summarize(reports: &[Report]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<(String, String), BTreeMap<Metric, f64>> = BTreeMap::new();
    let mut order: Vec<(String, String)> = Vec::new();
    for r in reports {
        for e in &r.entries {
            let key = (e.model.clone(), e.method.clone());
            if !cells.contains_key(&key) {
                order.push(key.clone());
            }
            let cell = cells.entry(key).or_default();
            if let (Ok(MetricKind::Faithfulness(m)), Some(v)) = (MetricKind::parse(&e.metric), e.value()) {
                cell.insert(m, v);
            }
        }
    }
    order
        .into_iter()
        .map(|key| {
            let (groups, absent) = group_scores(&cells[&key]);
            SummaryRow {
                model: key.0,
                method: key.1,
                groups,
                absent,
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("model,method");
    for (name, _, _) in GROUPS {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",absent\n");
    for r in rows {
        out.push_str(&format!("{},{}", csv_field(&r.model), csv_field(&r.method)));
        for (name, _, _) in GROUPS {
            out.push(',');
            out.push_str(&fmt_opt(r.groups.get(name).copied().flatten()));
        }
        out.push(',');
        out.push_str(&r.absent.join(";"));
        out.push('\n');
    }
    out
}

/// Product-moment correlation of two equally long lists.
pub fn pearson(xs: &[f64], ys: &[f64]) -> CliResult<f64> {
    if xs.len() != ys.len() {
        return Err(CliError::Input(format!("lists differ in length: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(CliError::Input("need at least two points".into()));
    }
    Ok(paircam_core::metrics::pearson(xs, ys)?)
}

pub fn parse_numbers(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<f64>().map_err(|_| CliError::Input(format!("not a number: '{p}'"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vals(pairs: &[(Metric, f64)]) -> BTreeMap<Metric, f64> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn insertion_group_is_the_mean() {
        let (g, _) = group_scores(&vals(&[(Metric::SI, 0.8), (Metric::CI, 0.6)]));
        assert!((g["insertion"].unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn deletion_group_is_one_minus_mean() {
        let (g, _) = group_scores(&vals(&[(Metric::SD, 0.2), (Metric::CD, 0.4)]));
        assert!((g["deletion"].unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn half_everywhere_is_a_fixed_point() {
        let all: Vec<_> = Metric::ALL.iter().map(|&m| (m, 0.5)).collect();
        let (g, absent) = group_scores(&vals(&all));
        assert!(absent.is_empty());
        assert!(g.values().all(|v| *v == Some(0.5)));
    }

    #[test]
    fn missing_metric_omits_its_group() {
        let (g, absent) = group_scores(&vals(&[(Metric::SI, 0.8), (Metric::CI, 0.6), (Metric::SD, 0.1)]));
        assert_eq!(absent, vec!["CD", "SAD", "CAD"]);
        assert_eq!(g["deletion"], None);
        assert_eq!(g["average_drop"], None);
        assert!(g["insertion"].is_some());
    }

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 3.0, 4.5];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((pearson(&xs, &ys).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]).unwrap_err().exit_code(), 5);
        assert_eq!(pearson(&[1.0], &[1.0, 2.0]).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn entry_aggregates_skip_missing_pairs() {
        let e = ReportEntry::new(
            "m",
            "random",
            MetricKind::Faithfulness(Metric::SAD),
            vec![Some(0.2), None, Some(0.4)],
            Value::Null,
        );
        assert_eq!(e.n_pairs, 2);
        assert_eq!(e.skipped, 1);
        assert!((e.drop.unwrap() - 0.3).abs() < 1e-12);
        assert!(e.auc.is_none());
        let json = serde_json::to_value(&e).unwrap();
        assert!(json.get("drop").is_some() && json.get("auc").is_none());
    }

    #[test]
    fn metric_names() {
        assert_eq!(MetricKind::parse("si").unwrap(), MetricKind::Faithfulness(Metric::SI));
        assert_eq!(MetricKind::parse("MS").unwrap(), MetricKind::MaxSensitivity);
        assert_eq!(MetricKind::parse("XX").unwrap_err().exit_code(), 3);
    }
}
