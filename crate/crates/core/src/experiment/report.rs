use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{EditGraph, ExperimentError};
use crate::hypothesis::{CriterionKind, TestResult};

/// Effect of an edit on one hypothesis test. Ordered from best to worst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Classification {
    Hold,
    Gained,
    Degraded,
    Lost,
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Classification::Hold => "Hold",
            Classification::Gained => "Gained",
            Classification::Degraded => "Degraded",
            Classification::Lost => "Lost",
        })
    }
}

/// When a still-satisfied test counts as degraded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationThresholds {
    /// Monotonic: post p above this multiple of pre p.
    pub mono_p_factor: f64,
    /// Uniform: post p below this fraction of pre p.
    pub uniform_p_ratio: f64,
}

impl Default for DegradationThresholds {
    fn default() -> Self {
        Self {
            mono_p_factor: 10.0,
            uniform_p_ratio: 0.5,
        }
    }
}

pub fn classify(pre: &TestResult, post: &TestResult) -> Result<Classification, ExperimentError> {
    classify_with(pre, post, &DegradationThresholds::default())
}

pub fn classify_with(pre: &TestResult, post: &TestResult, t: &DegradationThresholds) -> Result<Classification, ExperimentError> {
    if pre.criterion != post.criterion {
        return Err(ExperimentError::CriterionMismatch {
            pre: pre.criterion,
            post: post.criterion,
        });
    }
    Ok(match (pre.satisfied, post.satisfied) {
        (true, false) => Classification::Lost,
        (false, true) => Classification::Gained,
        (false, false) => Classification::Hold,
        (true, true) => {
            let degraded = match pre.criterion {
                CriterionKind::Monotonic => post.p_value > t.mono_p_factor * pre.p_value,
                CriterionKind::Uniform => post.p_value < t.uniform_p_ratio * pre.p_value,
            };
            if degraded {
                Classification::Degraded
            } else {
                Classification::Hold
            }
        }
    })
}

/// Test results for the source and target models of one edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeResults {
    pub edge: String,
    pub pre: Vec<TestResult>,
    pub post: Vec<TestResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub edge: String,
    pub operation: String,
    pub pre_hypothesis: String,
    pub post_hypothesis: String,
    pub test: CriterionKind,
    pub labeling: String,
    pub pre_statistic: f64,
    pub pre_p: f64,
    pub pre_satisfied: bool,
    pub post_statistic: f64,
    pub post_p: f64,
    pub post_satisfied: bool,
    pub classification: Classification,
    /// Levels excluded for excess drops on either side.
    pub flagged_levels: Vec<u8>,
}

impl ReportRow {
    pub fn hypothesis_label(&self) -> String {
        if self.pre_hypothesis == self.post_hypothesis {
            self.pre_hypothesis.clone()
        } else {
            format!("{} -> {}", self.pre_hypothesis, self.post_hypothesis)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeVerdict {
    pub edge: String,
    pub operation: String,
    pub from: String,
    pub to: String,
    /// Worst row classification; `Hold` for an edge with no tracked pairs.
    pub verdict: Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub rows: Vec<ReportRow>,
    pub verdicts: Vec<EdgeVerdict>,
}

const CSV_HEADER: [&str; 14] = [
    "edge",
    "operation",
    "pre_hypothesis",
    "post_hypothesis",
    "test",
    "labeling",
    "pre_statistic",
    "pre_p",
    "pre_satisfied",
    "post_statistic",
    "post_p",
    "post_satisfied",
    "classification",
    "flagged_levels",
];

fn fmt_p(p: f64) -> String {
    if p != 0.0 && p < 1e-3 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

fn fmt_stat(kind: CriterionKind, s: f64) -> String {
    match kind {
        CriterionKind::Monotonic => format!("rho={s:.3}"),
        CriterionKind::Uniform => format!("chi2={s:.2}"),
    }
}

impl CalibrationReport {
    /// One row per (edge, tracked pair, labeling), in edge order.
    pub fn build(graph: &EditGraph, results: &[EdgeResults], thresholds: &DegradationThresholds) -> Result<Self, ExperimentError> {
        let by_edge: BTreeMap<&str, &EdgeResults> = results.iter().map(|r| (r.edge.as_str(), r)).collect();
        let mut missing = Vec::new();
        let mut rows = Vec::new();
        let mut verdicts = Vec::new();
        for edge in &graph.edges {
            let Some(res) = by_edge.get(edge.id.as_str()) else {
                missing.push(format!("edge {}", edge.id));
                continue;
            };
            let mut verdict = Classification::Hold;
            for pair in &edge.track {
                let pres: Vec<&TestResult> = res.pre.iter().filter(|r| r.hypothesis == pair.pre).collect();
                if pres.is_empty() {
                    missing.push(format!("{}: pre {}", edge.id, pair.pre));
                }
                for pre in pres {
                    let post = res
                        .post
                        .iter()
                        .find(|r| r.hypothesis == pair.post && r.labeling == pre.labeling);
                    let Some(post) = post else {
                        missing.push(format!("{}: post {} under {}", edge.id, pair.post, pre.labeling));
                        continue;
                    };
                    let classification = classify_with(pre, post, thresholds)?;
                    verdict = verdict.max(classification);
                    let mut flagged = pre.flagged_levels.clone();
                    flagged.extend(&post.flagged_levels);
                    flagged.sort_unstable();
                    flagged.dedup();
                    rows.push(ReportRow {
                        edge: edge.id.clone(),
                        operation: edge.label.clone(),
                        pre_hypothesis: pair.pre.clone(),
                        post_hypothesis: pair.post.clone(),
                        test: pre.criterion,
                        labeling: pre.labeling.clone(),
                        pre_statistic: pre.statistic,
                        pre_p: pre.p_value,
                        pre_satisfied: pre.satisfied,
                        post_statistic: post.statistic,
                        post_p: post.p_value,
                        post_satisfied: post.satisfied,
                        classification,
                        flagged_levels: flagged,
                    });
                }
            }
            verdicts.push(EdgeVerdict {
                edge: edge.id.clone(),
                operation: edge.label.clone(),
                from: edge.from.clone(),
                to: edge.to.clone(),
                verdict,
            });
        }
        if !missing.is_empty() {
            return Err(ExperimentError::IncompleteResults(missing));
        }
        Ok(Self { rows, verdicts })
    }

    pub fn any_lost(&self) -> bool {
        self.verdicts.iter().any(|v| v.verdict == Classification::Lost)
    }

    /// CSV with full-precision numbers; header only when there are no rows.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            let flagged: Vec<String> = r.flagged_levels.iter().map(u8::to_string).collect();
            w.write_record([
                r.edge.clone(),
                r.operation.clone(),
                r.pre_hypothesis.clone(),
                r.post_hypothesis.clone(),
                r.test.test_name().to_string(),
                r.labeling.clone(),
                r.pre_statistic.to_string(),
                r.pre_p.to_string(),
                r.pre_satisfied.to_string(),
                r.post_statistic.to_string(),
                r.post_p.to_string(),
                r.post_satisfied.to_string(),
                r.classification.to_string(),
                flagged.join(" "),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    /// Aligned plain-text table followed by per-edge verdicts.
    pub fn to_text(&self) -> String {
        let header = [
            "Operation",
            "Hypothesis",
            "Test",
            "Labeling",
            "Pre stat",
            "Pre p",
            "Post stat",
            "Post p",
            "Classification",
        ];
        let mut table: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            let mut class = r.classification.to_string();
            if !r.flagged_levels.is_empty() {
                class.push_str(" (flagged)");
            }
            table.push(vec![
                r.operation.clone(),
                r.hypothesis_label(),
                r.test.test_name().to_string(),
                r.labeling.clone(),
                fmt_stat(r.test, r.pre_statistic),
                fmt_p(r.pre_p),
                fmt_stat(r.test, r.post_statistic),
                fmt_p(r.post_p),
                class,
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| table.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in table.iter().enumerate() {
            let cells: Vec<String> = row.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
            out.push_str(cells.join(" | ").trim_end());
            out.push('\n');
            if i == 0 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                out.push_str(&rule.join("-+-"));
                out.push('\n');
            }
        }
        if !self.verdicts.is_empty() {
            out.push('\n');
            for v in &self.verdicts {
                out.push_str(&format!("{} ({}: {} -> {}): {}\n", v.edge, v.operation, v.from, v.to, v.verdict));
            }
        }
        out
    }
}
