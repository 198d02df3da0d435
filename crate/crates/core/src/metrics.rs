//! Accuracy, AUC, improvement and correlation analytics, and the
//! fresh-discriminator divergence diagnostic.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::LinearSoftmaxModel;
use crate::numerics::{Class, DenseMatrix, ProbPair, RngSeed};
use crate::trainers::Validation;

fn check_lengths(n_pred: usize, n_labels: usize) -> Result<()> {
    if n_pred != n_labels {
        return Err(Error::InvalidInput(format!(
            "{n_pred} predictions for {n_labels} labels"
        )));
    }
    if n_pred == 0 {
        return Err(Error::InvalidInput("no predictions".into()));
    }
    Ok(())
}

/// Predicted class under the fixed 0.5 threshold; a tie predicts negative.
pub fn predicted_class(p: &ProbPair) -> Class {
    if p.p1 > 0.5 {
        Class::Positive
    } else {
        Class::Negative
    }
}

pub fn accuracy(predictions: &[ProbPair], labels: &[Class]) -> Result<f64> {
    check_lengths(predictions.len(), labels.len())?;
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| predicted_class(p) == **l)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

pub fn error_rate(predictions: &[ProbPair], labels: &[Class]) -> Result<f64> {
    check_lengths(predictions.len(), labels.len())?;
    let wrong = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| predicted_class(p) != **l)
        .count();
    Ok(wrong as f64 / labels.len() as f64)
}

/// Area under the ROC curve as the Mann-Whitney statistic
/// `P(score_pos > score_neg) + P(tie) / 2`, using average ranks for ties.
pub fn auc(scores: &[f64], labels: &[Class]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|l| **l == Class::Positive).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidInput("auc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; a tie group shares the average rank
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == Class::Positive {
                rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    let n_pos = n_pos as f64;
    Ok((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg as f64))
}

/// `(P_DIST, P_PADA_S)` with `P_x = (acc_x - acc_com) / (1 - acc_com)`.
pub fn improvement_metrics(acc_com: f64, acc_dist: f64, acc_pada_s: f64) -> Result<(f64, f64)> {
    for (name, v) in [("acc_com", acc_com), ("acc_dist", acc_dist), ("acc_pada_s", acc_pada_s)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidInput(format!("{name} = {v} is not a fraction")));
        }
    }
    if acc_com >= 1.0 {
        return Err(Error::UndefinedMetric(
            "improvement ratio is undefined when the common-feature accuracy is 1".into(),
        ));
    }
    let room = 1.0 - acc_com;
    Ok(((acc_dist - acc_com) / room, (acc_pada_s - acc_com) / room))
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n == 0 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Improvement ratios and block-average absolute correlations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureAnalytics {
    pub p_dist: Option<f64>,
    pub p_pada_s: Option<f64>,
    /// Mean |corr(target-specific feature, label)|.
    pub corr_tar_lab: f64,
    /// Mean |corr(common feature, label)|.
    pub corr_com_lab: f64,
    pub r_tar_com: f64,
    /// Mean |corr| over target-specific x source-specific feature pairs on the same rows.
    pub corr_tar_sou: Option<f64>,
    /// Features skipped for zero variance.
    pub excluded: Vec<String>,
}

fn label_values(labels: &[Class]) -> Vec<f64> {
    labels
        .iter()
        .map(|l| if *l == Class::Positive { 1.0 } else { -1.0 })
        .collect()
}

fn mean_abs_label_corr(x: &DenseMatrix, y: &[f64], names: &[String], excluded: &mut Vec<String>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for j in 0..x.cols() {
        match pearson(&x.column(j), y) {
            Some(r) => {
                sum += r.abs();
                n += 1;
            }
            None => excluded.push(names.get(j).cloned().unwrap_or_else(|| format!("#{j}"))),
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Mean absolute Pearson correlation over all column pairs `(a_j, b_k)`.
/// Pairs with a zero-variance side are skipped. `None` when no pair is defined.
pub fn mean_abs_cross_correlation(a: &DenseMatrix, b: &DenseMatrix) -> Result<Option<f64>> {
    if a.rows() != b.rows() {
        return Err(Error::InvalidInput("cross correlation needs matching rows".into()));
    }
    let b_cols: Vec<Vec<f64>> = (0..b.cols()).map(|k| b.column(k)).collect();
    let mut sum = 0.0;
    let mut n = 0;
    for j in 0..a.cols() {
        let col = a.column(j);
        for other in &b_cols {
            if let Some(r) = pearson(&col, other) {
                sum += r.abs();
                n += 1;
            }
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

/// Inputs to [`correlation_analytics`].
#[derive(Clone, Copy, Debug)]
pub struct AnalyticsInput<'a> {
    pub target_common: &'a DenseMatrix,
    pub target_specific: &'a DenseMatrix,
    pub labels: &'a [Class],
    /// Source-specific features observed on the same rows as the target, when available.
    pub source_specific_view: Option<&'a DenseMatrix>,
    pub common_names: &'a [String],
    pub target_names: &'a [String],
    /// `(acc_com, acc_dist, acc_pada_s)` when those results exist.
    pub accuracies: Option<(f64, f64, f64)>,
}

pub fn correlation_analytics(input: AnalyticsInput<'_>) -> Result<FeatureAnalytics> {
    let n = input.labels.len();
    if n == 0 || input.target_common.rows() != n || input.target_specific.rows() != n {
        return Err(Error::InvalidInput("analytics needs one label per target row".into()));
    }
    let y = label_values(input.labels);
    let mut excluded = Vec::new();
    let corr_com_lab = mean_abs_label_corr(input.target_common, &y, input.common_names, &mut excluded);
    let corr_tar_lab = mean_abs_label_corr(input.target_specific, &y, input.target_names, &mut excluded);
    if !excluded.is_empty() {
        log::warn!("zero-variance features excluded from correlations: {excluded:?}");
    }
    let r_tar_com = if corr_com_lab > 0.0 {
        corr_tar_lab / corr_com_lab
    } else {
        f64::INFINITY
    };
    let corr_tar_sou = match input.source_specific_view {
        Some(view) => mean_abs_cross_correlation(input.target_specific, view)?,
        None => None,
    };
    let (p_dist, p_pada_s) = match input.accuracies {
        Some((com, dist, pada_s)) => {
            let (a, b) = improvement_metrics(com, dist, pada_s)?;
            (Some(a), Some(b))
        }
        None => (None, None),
    };
    Ok(FeatureAnalytics {
        p_dist,
        p_pada_s,
        corr_tar_lab,
        corr_com_lab,
        r_tar_com,
        corr_tar_sou,
        excluded,
    })
}

/// Budget and split for the fresh discriminator `D'`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminationConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for DiscriminationConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            steps: 2000,
            batch_size: 128,
            train_fraction: 0.5,
            seed: 0,
        }
    }
}

/// Test accuracy of a fresh linear discriminator separating `a` (label
/// positive) from `b`. Both sets are subsampled to equal size, so chance is 0.5.
pub fn two_sample_accuracy(a: &DenseMatrix, b: &DenseMatrix, config: &DiscriminationConfig) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("discrimination needs both sets non-empty".into()));
    }
    if a.cols() != b.cols() {
        return Err(Error::InvalidInput("discrimination sets differ in width".into()));
    }
    let mut rng = RngSeed(config.seed).rng();
    let n = a.rows().min(b.rows());
    let pick = |rng: &mut crate::numerics::SeededRng, x: &DenseMatrix| {
        let mut idx: Vec<usize> = (0..x.rows()).collect();
        rng.shuffle(&mut idx);
        idx.truncate(n);
        x.select_rows(&idx)
    };
    let a = pick(&mut rng, a);
    let b = pick(&mut rng, b);
    let n_train = ((config.train_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let train_x = a.select_rows(&(0..n_train).collect::<Vec<_>>())
        .vstack(&b.select_rows(&(0..n_train).collect::<Vec<_>>()))?;
    let test_idx: Vec<usize> = (n_train..n).collect();
    let (test_x, n_test) = if test_idx.is_empty() {
        (train_x.clone(), n_train)
    } else {
        (a.select_rows(&test_idx).vstack(&b.select_rows(&test_idx))?, test_idx.len())
    };
    let train_y: Vec<Class> = (0..2 * n_train)
        .map(|i| if i < n_train { Class::Positive } else { Class::Negative })
        .collect();
    let test_y: Vec<Class> = (0..2 * n_test)
        .map(|i| if i < n_test { Class::Positive } else { Class::Negative })
        .collect();

    let mut model = LinearSoftmaxModel::init(a.cols(), &mut rng);
    train_logistic(&mut model, &train_x, &train_y, config, &mut rng)?;
    accuracy(&model.classify_batch(&test_x)?, &test_y)
}

/// Cross-entropy SGD; the gradient of `-log p_y` w.r.t. the logits is `p - onehot(y)`.
fn train_logistic(
    model: &mut LinearSoftmaxModel,
    x: &DenseMatrix,
    y: &[Class],
    config: &DiscriminationConfig,
    rng: &mut crate::numerics::SeededRng,
) -> Result<()> {
    let d = x.cols();
    for _ in 0..config.steps {
        let idx = rng.sample_with_replacement(x.rows(), config.batch_size);
        let mut grad = crate::models::ModelGrad {
            weights: vec![0.0; 2 * d],
            bias: [0.0; 2],
        };
        for &i in &idx {
            let row = x.row(i);
            let p = model.classify(row)?;
            let g = [
                p.p0 - f64::from(y[i] == Class::Negative),
                p.p1 - f64::from(y[i] == Class::Positive),
            ];
            for (k, &xk) in row.iter().enumerate() {
                grad.weights[2 * k] += xk * g[0];
                grad.weights[2 * k + 1] += xk * g[1];
            }
            grad.bias[0] += g[0];
            grad.bias[1] += g[1];
        }
        model.step(&grad, -config.learning_rate / idx.len() as f64)?;
    }
    Ok(())
}

/// `(Acc_d^pp, Acc_d^pn)`: fresh-discriminator test accuracy of source rows
/// against positive-target rows and against negative-target rows, all in one
/// aligned feature space.
pub fn discrimination_accuracy(
    source: &DenseMatrix,
    target: &DenseMatrix,
    target_labels: &[Class],
    config: &DiscriminationConfig,
) -> Result<(f64, f64)> {
    if target.rows() != target_labels.len() {
        return Err(Error::InvalidInput("one label per target row required".into()));
    }
    let rows_of = |c: Class| -> Vec<usize> {
        (0..target_labels.len()).filter(|&i| target_labels[i] == c).collect()
    };
    let pos = rows_of(Class::Positive);
    let neg = rows_of(Class::Negative);
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidInput("both target classes are required".into()));
    }
    let pp = two_sample_accuracy(source, &target.select_rows(&pos), config)?;
    let pn = two_sample_accuracy(source, &target.select_rows(&neg), config)?;
    Ok((pp, pn))
}

/// Accuracy and AUC of one method across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub accuracy: Vec<f64>,
    pub auc: Vec<Option<f64>>,
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

impl EvalReport {
    pub fn new(method: impl Into<String>) -> Self {
        Self {
            method: method.into(),
            accuracy: Vec::new(),
            auc: Vec::new(),
        }
    }

    pub fn push(&mut self, predictions: &[ProbPair], labels: &[Class]) -> Result<()> {
        self.accuracy.push(accuracy(predictions, labels)?);
        let scores: Vec<f64> = predictions.iter().map(|p| p.p1).collect();
        self.auc.push(auc(&scores, labels).ok());
        Ok(())
    }

    pub fn mean_accuracy(&self) -> f64 {
        mean(&self.accuracy)
    }

    /// Mean over seeds where AUC was defined.
    pub fn mean_auc(&self) -> Option<f64> {
        let v: Vec<f64> = self.auc.iter().flatten().copied().collect();
        (!v.is_empty()).then(|| mean(&v))
    }
}

/// Comma-separated per-seed rows followed by a `mean` row per method.
pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("method,seed,accuracy,auc\n");
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in reports {
        for (i, (a, u)) in r.accuracy.iter().zip(&r.auc).enumerate() {
            let _ = writeln!(out, "{},{i},{a},{}", r.method, fmt_opt(*u));
        }
        let _ = writeln!(out, "{},mean,{},{}", r.method, r.mean_accuracy(), fmt_opt(r.mean_auc()));
    }
    out
}

/// Right-aligned text table; the first column is left-aligned.
pub fn aligned_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{cell:<w$}");
            } else {
                let _ = write!(s, "  {cell:>w$}");
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out += &line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect());
    for row in rows {
        out += &line(row.iter().map(String::as_str).collect());
    }
    out
}

/// Accuracy (percent) and AUC (percent) per method, mean over seeds.
pub fn reports_table(reports: &[EvalReport]) -> String {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.method.clone(),
                format!("{:.2}", 100.0 * r.mean_accuracy()),
                r.mean_auc().map(|a| format!("{:.2}", 100.0 * a)).unwrap_or_else(|| "-".into()),
                r.accuracy.len().to_string(),
            ]
        })
        .collect();
    aligned_table(&["method", "accuracy(%)", "auc(%)", "seeds"], &rows)
}

/// Validation accuracy of arbitrary predictions; convenience for model selection.
pub fn validation_accuracy(predict: impl Fn(&DenseMatrix) -> Result<Vec<ProbPair>>, v: Validation<'_>) -> Result<f64> {
    accuracy(&predict(v.features)?, v.labels)
}
