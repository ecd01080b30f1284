//! Evaluation metrics: accuracy, fairness via adjusted statistical parity,
//! robustness to poor lighting, and the validation/test gap.
//!
//! Fairness is `(β − SPD)/β` with β = 0.2 by default. SPD aggregates the
//! absolute deviation of every group's accuracy from the minority group's
//! accuracy; `sum` mode adds the ten terms verbatim, `mean` mode divides by
//! the group count. The two disagree by a factor of 10, so every report pins
//! and prints the mode it used. A fairness score can be negative (SPD > β);
//! it is reported as-is because clamping would hide the ordering between
//! very unfair models during search.

use serde::{Deserialize, Serialize};

use crate::data::{poorly_lit_subset, Dataset, Split, N_GROUPS};
use crate::error::{MetricsError, Result};
use crate::model::MoEModel;

pub const DEFAULT_BETA: f64 = 0.2;
pub const DEFAULT_LIGHT_THRESHOLD: f64 = 0.5;

/// How the ten per-group deviations are aggregated into SPD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpdMode {
    /// Plain sum of |acc_g − acc_minority| over the ten groups.
    Sum,
    /// The sum divided by the number of groups.
    Mean,
}

impl SpdMode {
    pub fn name(self) -> &'static str {
        match self {
            SpdMode::Sum => "sum",
            SpdMode::Mean => "mean",
        }
    }
}

impl std::str::FromStr for SpdMode {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(SpdMode::Sum),
            "mean" => Ok(SpdMode::Mean),
            other => Err(crate::error::Error::Config(format!("spd-mode {other:?} is not sum|mean"))),
        }
    }
}

/// Per-group accuracies over the ten groups, plus the minority group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracies {
    /// Indexed by group − 1.
    pub acc: Vec<f64>,
    pub counts: Vec<usize>,
    /// 1-based; argmin of counts, ties resolved to the higher group index.
    pub minority_index: u8,
}

/// Fraction of argmax-correct predictions.
pub fn accuracy(preds: &[usize], labels: &[u8]) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(MetricsError::EmptySplit { split: "predictions".into() }.into());
    }
    let correct = preds.iter().zip(labels).filter(|(p, l)| **p == **l as usize).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Partition accuracy by group label.
pub fn group_accuracies(preds: &[usize], labels: &[u8], groups: &[u8]) -> Result<GroupAccuracies> {
    if preds.is_empty() {
        return Err(MetricsError::EmptySplit { split: "test".into() }.into());
    }
    let mut correct = [0usize; N_GROUPS];
    let mut counts = vec![0usize; N_GROUPS];
    for ((&p, &l), &g) in preds.iter().zip(labels).zip(groups) {
        let gi = g as usize - 1;
        counts[gi] += 1;
        if p == l as usize {
            correct[gi] += 1;
        }
    }
    if let Some(g) = counts.iter().position(|&c| c == 0) {
        return Err(MetricsError::EmptyGroup { group: (g + 1) as u8 }.into());
    }
    let acc: Vec<f64> = correct.iter().zip(&counts).map(|(&c, &n)| c as f64 / n as f64).collect();
    let mut minority = 0usize;
    for (i, &c) in counts.iter().enumerate() {
        if c <= counts[minority] {
            minority = i;
        }
    }
    Ok(GroupAccuracies { acc, counts, minority_index: (minority + 1) as u8 })
}

/// Statistical parity difference against the minority group's accuracy.
pub fn spd(groups: &GroupAccuracies, mode: SpdMode) -> f64 {
    let mino = groups.acc[groups.minority_index as usize - 1];
    let total: f64 = groups.acc.iter().map(|&a| (a - mino).abs()).sum();
    match mode {
        SpdMode::Sum => total,
        SpdMode::Mean => total / groups.acc.len() as f64,
    }
}

/// Adjusted-parity fairness score: `(β − SPD)/β`; 1.0 is perfect parity.
pub fn fairness(spd_value: f64, beta: f64) -> f64 {
    debug_assert!(beta > 0.0);
    (beta - spd_value) / beta
}

/// Validation-minus-test accuracy; positive means the model overfits the
/// training distribution.
pub fn overfitting(val_acc: f64, test_acc: f64) -> f64 {
    val_acc - test_acc
}

/// The full metric set for one model, plus the knobs used to compute it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub fairness_score: f64,
    pub spd: f64,
    pub spd_mode: SpdMode,
    pub beta: f64,
    pub robustness: f64,
    pub overfitting: f64,
    pub light_threshold: f64,
    pub group_accuracies: GroupAccuracies,
}

/// Metric computation knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub beta: f64,
    pub spd_mode: SpdMode,
    pub light_threshold: f64,
    pub batch_size: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            beta: DEFAULT_BETA,
            spd_mode: SpdMode::Sum,
            light_threshold: DEFAULT_LIGHT_THRESHOLD,
            batch_size: 256,
        }
    }
}

/// Run the model over both evaluation splits and assemble the report.
pub fn compute_report(model: &MoEModel, dataset: &Dataset, cfg: &MetricConfig) -> Result<MetricReport> {
    if cfg.beta <= 0.0 {
        return Err(crate::error::Error::Config(format!("beta {} must be positive", cfg.beta)));
    }
    let val_preds = predictions(model, &dataset.val, cfg.batch_size)?;
    let test_preds = predictions(model, &dataset.test, cfg.batch_size)?;
    report_from_predictions(&val_preds, &test_preds, dataset, cfg)
}

/// Assemble the report from precomputed predictions.
pub fn report_from_predictions(
    val_preds: &[usize],
    test_preds: &[usize],
    dataset: &Dataset,
    cfg: &MetricConfig,
) -> Result<MetricReport> {
    let val_accuracy = accuracy(val_preds, &dataset.val.labels)?;
    let test_accuracy = accuracy(test_preds, &dataset.test.labels)?;
    let groups = group_accuracies(test_preds, &dataset.test.labels, &dataset.test.groups)?;
    let spd_value = spd(&groups, cfg.spd_mode);

    let lit = poorly_lit_subset(&dataset.test, cfg.light_threshold).map_err(|e| match e {
        crate::error::Error::Data(crate::error::DataError::EmptySubset { .. }) => {
            crate::error::Error::Metrics(MetricsError::EmptyLitSubset)
        }
        other => other,
    })?;
    let lit_correct =
        lit.iter().filter(|&&i| test_preds[i] == dataset.test.labels[i] as usize).count();
    let robustness = lit_correct as f64 / lit.len() as f64;

    Ok(MetricReport {
        val_accuracy,
        test_accuracy,
        fairness_score: fairness(spd_value, cfg.beta),
        spd: spd_value,
        spd_mode: cfg.spd_mode,
        beta: cfg.beta,
        robustness,
        overfitting: overfitting(val_accuracy, test_accuracy),
        light_threshold: cfg.light_threshold,
        group_accuracies: groups,
    })
}

/// Argmax predictions of a model over a split.
pub fn predictions(model: &MoEModel, split: &Split, batch_size: usize) -> Result<Vec<usize>> {
    if split.is_empty() {
        return Err(MetricsError::EmptySplit { split: "empty".into() }.into());
    }
    model.predict(&split.images, split.len(), batch_size)
}

/// Header of the one-row-per-model CSV schema used across the crate.
pub const REPORT_CSV_HEADER: &str =
    "model_id,encoding,val_acc,test_acc,fairness,spd,spd_mode,beta,robustness,overfitting,param_count";

/// One CSV row matching [`REPORT_CSV_HEADER`].
pub fn report_csv_row(report: &MetricReport, model_id: &str, encoding: &str, param_count: u64) -> String {
    format!(
        "{model_id},\"{encoding}\",{:.6},{:.6},{:.6},{:.6},{},{:.6},{:.6},{:.6},{param_count}",
        report.val_accuracy,
        report.test_accuracy,
        report.fairness_score,
        report.spd,
        report.spd_mode.name(),
        report.beta,
        report.robustness,
        report.overfitting,
    )
}
