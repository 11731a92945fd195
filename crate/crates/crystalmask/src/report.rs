//! JSON and plain-text renderings of an evaluation report.
//!
//! Every float is printed with three decimals so repeated runs are
//! byte-identical.

use std::fmt::Write as _;

use crystalmask_core::metrics::{EvalMetrics, EvalReport};
use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

pub const COLUMNS: [&str; 8] = [
    "high_corr",
    "high_chi2",
    "low_corr",
    "low_chi2",
    "map50",
    "recall50",
    "res_err",
    "tpr",
];

pub fn fixed3(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".to_owned()
    } else {
        s
    }
}

fn ser_fixed3<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    let raw = RawValue::from_string(fixed3(*v)).map_err(serde::ser::Error::custom)?;
    raw.serialize(s)
}

fn ser_opt_fixed3<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => ser_fixed3(v, s),
        None => s.serialize_none(),
    }
}

#[derive(Serialize)]
struct MetricsRecord {
    #[serde(serialize_with = "ser_fixed3")]
    high_corr: f64,
    #[serde(serialize_with = "ser_fixed3")]
    high_chi2: f64,
    #[serde(serialize_with = "ser_fixed3")]
    low_corr: f64,
    #[serde(serialize_with = "ser_fixed3")]
    low_chi2: f64,
    #[serde(serialize_with = "ser_fixed3")]
    map50: f64,
    #[serde(serialize_with = "ser_fixed3")]
    recall50: f64,
    #[serde(serialize_with = "ser_fixed3")]
    res_err: f64,
    #[serde(serialize_with = "ser_opt_fixed3")]
    tpr: Option<f64>,
}

impl From<&EvalMetrics> for MetricsRecord {
    fn from(m: &EvalMetrics) -> Self {
        Self {
            high_corr: m.high_corr,
            high_chi2: m.high_chi2,
            low_corr: m.low_corr,
            low_chi2: m.low_chi2,
            map50: m.map50,
            recall50: m.recall50,
            res_err: m.res_err,
            tpr: m.tpr,
        }
    }
}

#[derive(Serialize)]
struct ImageRecord<'a> {
    name: &'a str,
    #[serde(flatten)]
    metrics: MetricsRecord,
}

#[derive(Serialize)]
struct ReportRecord<'a> {
    pooled: MetricsRecord,
    per_image: Vec<ImageRecord<'a>>,
}

/// Pretty-printed JSON with a trailing newline.
pub fn report_to_json(report: &EvalReport) -> String {
    let record = ReportRecord {
        pooled: (&report.pooled).into(),
        per_image: report
            .per_image
            .iter()
            .map(|r| ImageRecord {
                name: &r.name,
                metrics: (&r.metrics).into(),
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&record).expect("reports always serialize");
    text.push('\n');
    text
}

fn cells(m: &EvalMetrics) -> [String; 8] {
    [
        fixed3(m.high_corr),
        fixed3(m.high_chi2),
        fixed3(m.low_corr),
        fixed3(m.low_chi2),
        fixed3(m.map50),
        fixed3(m.recall50),
        fixed3(m.res_err),
        m.tpr.map_or_else(|| "-".to_owned(), fixed3),
    ]
}

/// Aligned table, one row per image followed by the pooled row.
pub fn report_to_text(report: &EvalReport) -> String {
    let mut rows: Vec<(String, [String; 8])> = report
        .per_image
        .iter()
        .map(|r| (r.name.clone(), cells(&r.metrics)))
        .collect();
    rows.push(("pooled".to_owned(), cells(&report.pooled)));

    let name_w = rows.iter().map(|r| r.0.len()).chain([5]).max().unwrap_or(5);
    let widths: Vec<usize> = (0..COLUMNS.len())
        .map(|c| rows.iter().map(|r| r.1[c].len()).chain([COLUMNS[c].len()]).max().unwrap_or(0))
        .collect();

    let mut out = String::new();
    let _ = write!(out, "{:<name_w$}", "image");
    for (c, head) in COLUMNS.iter().enumerate() {
        let _ = write!(out, "  {:>w$}", head, w = widths[c]);
    }
    out.push('\n');
    for (name, vals) in &rows {
        let _ = write!(out, "{name:<name_w$}");
        for (c, v) in vals.iter().enumerate() {
            let _ = write!(out, "  {:>w$}", v, w = widths[c]);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crystalmask_core::metrics::ImageReport;

    fn sample_row() -> EvalMetrics {
        EvalMetrics {
            high_corr: 97.118,
            high_chi2: 8.139,
            low_corr: 90.0,
            low_chi2: 20.5,
            map50: 73.056,
            recall50: 67.453,
            res_err: 7.262,
            tpr: None,
        }
    }

    #[test]
    fn fixed_three_decimals() {
        assert_eq!(fixed3(97.118), "97.118");
        assert_eq!(fixed3(100.0), "100.000");
        assert_eq!(fixed3(-0.0001), "0.000");
        assert_eq!(fixed3(0.0005), "0.001");
    }

    #[test]
    fn json_layout() {
        let report = EvalReport {
            pooled: sample_row(),
            per_image: vec![ImageReport {
                name: "a".into(),
                metrics: EvalMetrics {
                    tpr: Some(50.0),
                    ..sample_row()
                },
            }],
        };
        let json = report_to_json(&report);
        assert!(json.contains("\"high_corr\": 97.118"), "{json}");
        assert!(json.contains("\"tpr\": null"));
        assert!(json.contains("\"tpr\": 50.000"));
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["per_image"][0]["name"], "a");
        assert_eq!(v["pooled"]["res_err"].as_f64(), Some(7.262));
    }

    #[test]
    fn text_table() {
        let report = EvalReport {
            pooled: sample_row(),
            per_image: vec![],
        };
        let text = report_to_text(&report);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "image   high_corr  high_chi2  low_corr  low_chi2   map50  recall50  res_err  tpr"
        );
        assert_eq!(
            lines[1],
            "pooled     97.118      8.139    90.000    20.500  73.056    67.453    7.262    -"
        );
    }
}
