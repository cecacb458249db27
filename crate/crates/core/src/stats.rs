//! McNemar's test with continuity correction for paired classifiers.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{check_len, Result};
use crate::train::{evaluate, Checkpoint, Evaluation};

/// Agreement counts of two classifiers over the same instances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    /// Both correct.
    pub n11: u64,
    /// Only the first model correct.
    pub b: u64,
    /// Only the second model correct.
    pub c: u64,
    /// Both wrong.
    pub n00: u64,
}

impl ContingencyTable {
    pub fn total(&self) -> u64 {
        self.n11 + self.b + self.c + self.n00
    }
}

pub fn build_table(correct1: &[bool], correct2: &[bool]) -> Result<ContingencyTable> {
    check_len("paired correctness vectors", correct1.len(), correct2.len())?;
    let mut t = ContingencyTable::default();
    for (&x, &y) in correct1.iter().zip(correct2) {
        match (x, y) {
            (true, true) => t.n11 += 1,
            (true, false) => t.b += 1,
            (false, true) => t.c += 1,
            (false, false) => t.n00 += 1,
        }
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    pub chi2: f64,
    pub p: f64,
}

/// `chi2 = max(|b - c| - 1, 0)^2 / (b + c)` and its upper tail under one
/// degree of freedom, `erfc(sqrt(chi2 / 2))`. No discordant pairs gives
/// `(0, 1)`.
pub fn mcnemar(table: &ContingencyTable) -> McNemar {
    let n = table.b + table.c;
    if n == 0 {
        return McNemar { chi2: 0.0, p: 1.0 };
    }
    let diff = table.b.abs_diff(table.c).saturating_sub(1) as f64;
    let chi2 = diff * diff / n as f64;
    McNemar {
        chi2,
        p: chi2_sf_1dof(chi2),
    }
}

/// Survival function of the chi-squared distribution with one degree of
/// freedom.
pub fn chi2_sf_1dof(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    libm::erfc((x / 2.0).sqrt()).clamp(0.0, 1.0)
}

pub const DEFAULT_ALPHA_LEVEL: f64 = 0.05;

/// One row of a model comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub model_1: String,
    pub model_2: String,
    pub instances: usize,
    pub accuracy_1: f64,
    pub accuracy_2: f64,
    pub table: ContingencyTable,
    pub chi2: f64,
    pub p_value: f64,
    pub alpha_level: f64,
    /// Whether the null hypothesis of equal performance is rejected.
    pub reject: bool,
}

pub fn compare_evaluations(
    model_1: impl Into<String>,
    eval_1: &Evaluation,
    model_2: impl Into<String>,
    eval_2: &Evaluation,
    alpha_level: f64,
) -> Result<ComparisonReport> {
    let table = build_table(&eval_1.correct, &eval_2.correct)?;
    let test = mcnemar(&table);
    Ok(ComparisonReport {
        model_1: model_1.into(),
        model_2: model_2.into(),
        instances: eval_1.correct.len(),
        accuracy_1: eval_1.accuracy,
        accuracy_2: eval_2.accuracy,
        table,
        chi2: test.chi2,
        p_value: test.p,
        alpha_level,
        reject: test.p < alpha_level,
    })
}

/// Evaluates both checkpoints on `data` and tests whether they differ.
pub fn compare_models(
    model_1: (&str, &Checkpoint),
    model_2: (&str, &Checkpoint),
    data: &[Sample],
    alpha_level: f64,
) -> Result<ComparisonReport> {
    let e1 = evaluate(model_1.1, data)?;
    let e2 = evaluate(model_2.1, data)?;
    compare_evaluations(model_1.0, &e1, model_2.0, &e2, alpha_level)
}

fn format_p(p: f64) -> String {
    if p < 0.001 {
        "p<0.001".into()
    } else {
        format!("p={p:.3}")
    }
}

/// Aligned plain-text table with one row per comparison.
pub fn text_table(reports: &[ComparisonReport]) -> String {
    let header = [
        "Model 1", "Model 2", "Acc 1", "Acc 2", "b", "c", "chi2", "p-value", "Decision",
    ];
    let rows: Vec<[String; 9]> = reports
        .iter()
        .map(|r| {
            [
                r.model_1.clone(),
                r.model_2.clone(),
                format!("{:.4}", r.accuracy_1),
                format!("{:.4}", r.accuracy_2),
                r.table.b.to_string(),
                r.table.c.to_string(),
                format!("{:.3}", r.chi2),
                format_p(r.p_value),
                if r.reject { "reject" } else { "fail to reject" }.to_string(),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[&str]| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        writeln!(out, "{}", parts.join("  ").trim_end()).unwrap();
    };
    line(&header);
    for row in &rows {
        line(&row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}
