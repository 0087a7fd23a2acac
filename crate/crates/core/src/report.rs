//! Cohort aggregation, paired significance tests and CSV/JSON reports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::metrics::{CaseMetrics, ClassMetrics};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Metric names in report order.
pub const METRIC_NAMES: [&str; 5] = ["dsc", "hd95", "avd", "lesion_recall", "lesion_f1"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub dof: usize,
    /// Differences had zero variance; `t` is reported as 0 and `p` as 1.
    pub degenerate: bool,
}

/// Two-tailed paired t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::config(format!(
            "paired t-test needs two equal samples of size >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let dof = n - 1;
    if var <= 0.0 || !var.is_finite() {
        return Ok(TTest { t: 0.0, p: 1.0, dof, degenerate: true });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, dof as f64).map_err(|e| Error::config(e.to_string()))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(TTest { t, p, dof, degenerate: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Unbiased (n - 1) standard deviation; 0 when `n == 1`.
    pub sd: f64,
    pub n: usize,
    /// False when `n < 2` and the SD is undefined.
    pub sd_defined: bool,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let (sd, sd_defined) = if n > 1 {
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var.sqrt(), true)
    } else {
        (0.0, false)
    };
    Some(Summary { mean, sd, n, sd_defined })
}

fn metric(m: &ClassMetrics, name: &str) -> Option<f64> {
    match name {
        "dsc" => Some(m.dsc),
        "hd95" => (!m.hd95_sentinel).then_some(m.hd95),
        "avd" => (!m.avd_sentinel).then_some(m.avd),
        "lesion_recall" => Some(m.lesion_recall),
        "lesion_f1" => Some(m.lesion_f1),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: String,
    pub metrics: BTreeMap<String, Summary>,
    /// Cases whose HD95 was a sentinel and excluded from its mean.
    pub hd95_sentinel_cases: Vec<String>,
    pub avd_sentinel_cases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub class: String,
    pub metric: String,
    pub n: usize,
    pub mean_difference: f64,
    pub test: TTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub schema_version: u32,
    pub num_cases: usize,
    pub classes: Vec<ClassSummary>,
    /// Sorted by subject id.
    pub cases: Vec<CaseMetrics>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub comparisons: Vec<Comparison>,
}

fn class_names(cases: &[CaseMetrics]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for c in cases {
        for m in &c.classes {
            if !names.contains(&m.class) {
                names.push(m.class.clone());
            }
        }
    }
    names
}

/// Means and SDs per class and metric over cases sorted by subject id.
pub fn aggregate(cases: &[CaseMetrics]) -> Result<CohortReport> {
    if cases.is_empty() {
        return Err(Error::config("cannot aggregate an empty cohort"));
    }
    let mut cases = cases.to_vec();
    cases.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let mut classes = Vec::new();
    for name in class_names(&cases) {
        let rows: Vec<(&str, &ClassMetrics)> = cases
            .iter()
            .flat_map(|c| c.classes.iter().filter(|m| m.class == name).map(move |m| (c.subject_id.as_str(), m)))
            .collect();
        let mut metrics = BTreeMap::new();
        for m in METRIC_NAMES {
            let vals: Vec<f64> = rows.iter().filter_map(|(_, r)| metric(r, m)).collect();
            if let Some(s) = summarize(&vals) {
                metrics.insert(m.to_string(), s);
            }
        }
        classes.push(ClassSummary {
            hd95_sentinel_cases: rows.iter().filter(|(_, r)| r.hd95_sentinel).map(|(s, _)| s.to_string()).collect(),
            avd_sentinel_cases: rows.iter().filter(|(_, r)| r.avd_sentinel).map(|(s, _)| s.to_string()).collect(),
            class: name,
            metrics,
        });
    }
    Ok(CohortReport {
        schema_version: REPORT_SCHEMA_VERSION,
        num_cases: cases.len(),
        classes,
        cases,
        comparisons: Vec::new(),
    })
}

/// Paired t-tests of every metric against a baseline run, matched by subject and class.
/// Pairs where either side is a sentinel are dropped; metrics with fewer than two pairs are
/// skipped.
pub fn compare(report: &CohortReport, baseline: &CohortReport) -> Result<Vec<Comparison>> {
    let index = |r: &CohortReport| -> BTreeMap<(String, String), ClassMetrics> {
        r.cases
            .iter()
            .flat_map(|c| c.classes.iter().map(move |m| ((c.subject_id.clone(), m.class.clone()), m.clone())))
            .collect()
    };
    let ours = index(report);
    let theirs = index(baseline);
    let mut out = Vec::new();
    for class in class_names(&report.cases) {
        for m in METRIC_NAMES {
            let mut a = Vec::new();
            let mut b = Vec::new();
            for ((subject, cls), mine) in &ours {
                if *cls != class {
                    continue;
                }
                if let Some(other) = theirs.get(&(subject.clone(), cls.clone())) {
                    if let (Some(x), Some(y)) = (metric(mine, m), metric(other, m)) {
                        a.push(x);
                        b.push(y);
                    }
                }
            }
            if a.len() < 2 {
                continue;
            }
            let test = paired_t_test(&a, &b)?;
            let n = a.len();
            out.push(Comparison {
                class: class.clone(),
                metric: m.to_string(),
                n,
                mean_difference: a.iter().zip(&b).map(|(x, y)| x - y).sum::<f64>() / n as f64,
                test,
            });
        }
    }
    Ok(out)
}

impl CohortReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }

    /// One row per case and class.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "subject_id",
            "class",
            "dsc",
            "hd95_mm",
            "hd95_sentinel",
            "avd_percent",
            "avd_sentinel",
            "lesion_tp",
            "lesion_fp",
            "lesion_fn",
            "lesion_recall",
            "lesion_f1",
        ])?;
        for c in &self.cases {
            for m in &c.classes {
                w.write_record([
                    c.subject_id.clone(),
                    m.class.clone(),
                    m.dsc.to_string(),
                    m.hd95.to_string(),
                    m.hd95_sentinel.to_string(),
                    m.avd.to_string(),
                    m.avd_sentinel.to_string(),
                    m.lesions.tp.to_string(),
                    m.lesions.fp.to_string(),
                    m.lesions.fn_.to_string(),
                    m.lesion_recall.to_string(),
                    m.lesion_f1.to_string(),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::config(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::config(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::LesionCounts;

    fn case(id: &str, dsc: f64) -> CaseMetrics {
        CaseMetrics {
            subject_id: id.into(),
            classes: vec![ClassMetrics {
                class: "lesion".into(),
                dsc,
                hd95: 2.0,
                hd95_sentinel: id == "c",
                avd: 10.0,
                avd_sentinel: false,
                lesions: LesionCounts::default(),
                lesion_recall: 1.0,
                lesion_f1: 1.0,
            }],
        }
    }

    #[test]
    fn t_test_reference_value() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [0.0; 5];
        let r = paired_t_test(&a, &b).unwrap();
        assert!((r.t - 4.2426).abs() < 1e-4);
        assert!((r.p - 0.0132).abs() < 1e-3);
        let s = paired_t_test(&b, &a).unwrap();
        assert_eq!(s.t, -r.t);
        assert_eq!(s.p, r.p);
        let d = paired_t_test(&a, &a).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.p, 1.0);
    }

    #[test]
    fn two_case_summary() {
        let r = aggregate(&[case("a", 0.8), case("b", 0.9)]).unwrap();
        let s = r.classes[0].metrics["dsc"];
        assert!((s.mean - 0.85).abs() < 1e-12);
        assert!((s.sd - 0.0707106781).abs() < 1e-9);
        let one = aggregate(&[case("a", 0.8)]).unwrap();
        assert!(!one.classes[0].metrics["dsc"].sd_defined);
    }

    #[test]
    fn sentinels_are_excluded_and_order_is_irrelevant() {
        let r1 = aggregate(&[case("a", 0.8), case("b", 0.9), case("c", 0.7)]).unwrap();
        let r2 = aggregate(&[case("c", 0.7), case("a", 0.8), case("b", 0.9)]).unwrap();
        assert_eq!(r1.to_json().unwrap(), r2.to_json().unwrap());
        assert_eq!(r1.classes[0].metrics["hd95"].n, 2);
        assert_eq!(r1.classes[0].hd95_sentinel_cases, vec!["c".to_string()]);
    }
}
