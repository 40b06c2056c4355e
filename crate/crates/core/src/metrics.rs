//! Classification metrics over scored predictions.
//!
//! Ratios with a zero denominator are `None`, never zero. Count-based
//! metrics are computed from integer counts with a single final division.

use std::cmp::Ordering;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPredictions {
    /// `n × d_c` class scores.
    pub scores: Tensor,
    pub truths: Vec<usize>,
    /// Rows taking part in every metric.
    pub included: Vec<bool>,
}

impl ScoredPredictions {
    pub fn new(scores: Tensor, truths: Vec<usize>) -> Result<Self> {
        let included = vec![true; truths.len()];
        Self::with_mask(scores, truths, included)
    }

    pub fn with_mask(scores: Tensor, truths: Vec<usize>, included: Vec<bool>) -> Result<Self> {
        if scores.rank() != 2 || scores.rows() != truths.len() || included.len() != truths.len() {
            return Err(Error::Invalid(format!(
                "scores {:?} for {} truths and {} inclusion flags",
                scores.shape(),
                truths.len(),
                included.len()
            )));
        }
        if let Some(&bad) = truths.iter().find(|&&t| t >= scores.cols()) {
            return Err(Error::Invalid(format!("class {bad} outside 0..{}", scores.cols())));
        }
        if !scores.all_finite() {
            return Err(Error::Invalid("scores contain non-finite values".into()));
        }
        Ok(ScoredPredictions {
            scores,
            truths,
            included,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.scores.cols()
    }

    /// `(score for class c, is positive)` over included rows.
    fn binary(&self, class: usize) -> Vec<(f64, bool)> {
        (0..self.truths.len())
            .filter(|&r| self.included[r])
            .map(|r| (self.scores.at(r, class), self.truths[r] == class))
            .collect()
    }

    pub fn included_rows(&self) -> usize {
        self.included.iter().filter(|&&b| b).count()
    }
}

/// Average precision: `Σ Δrecall · precision` over descending score cutoffs,
/// tied scores entering together. `None` when there is no positive.
pub fn average_precision(pairs: &[(f64, bool)]) -> Option<f64> {
    let positives = pairs.iter().filter(|p| p.1).count();
    if positives == 0 {
        return None;
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut ap = 0.0;
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let mut group_tp = 0;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            group_tp += sorted[j].1 as usize;
            j += 1;
        }
        tp += group_tp;
        seen += j - i;
        if group_tp > 0 {
            ap += (group_tp as f64 / positives as f64) * (tp as f64 / seen as f64);
        }
        i = j;
    }
    Some(ap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuprcReport {
    /// Unweighted mean over classes with at least one positive.
    pub macro_average: Option<f64>,
    pub per_class: Vec<Option<f64>>,
}

impl AuprcReport {
    pub fn undefined_classes(&self) -> Vec<usize> {
        (0..self.per_class.len()).filter(|&c| self.per_class[c].is_none()).collect()
    }
}

/// Macro one-vs-rest AUPRC.
pub fn auprc_macro_ovr(preds: &ScoredPredictions) -> AuprcReport {
    let per_class: Vec<Option<f64>> = (0..preds.num_classes())
        .map(|c| average_precision(&preds.binary(c)))
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let macro_average = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    AuprcReport {
        macro_average,
        per_class,
    }
}

/// Mann–Whitney AUROC: probability a positive outscores a negative, ties ½.
pub fn auroc_binary(pairs: &[(f64, bool)]) -> Result<f64> {
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let positives = sorted.iter().filter(|p| p.1).count() as u128;
    let negatives = sorted.len() as u128 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Invalid("AUROC needs at least one positive and one negative".into()));
    }
    // twice the Mann–Whitney U statistic, kept in integers
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u128, 0u128);
        while j < sorted.len() && sorted[j].0.total_cmp(&sorted[i].0) == Ordering::Equal {
            if sorted[j].1 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        twice_u += pos * (2 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    Ok(twice_u as f64 / (2 * positives * negatives) as f64)
}

pub fn auroc(preds: &ScoredPredictions, positive_class: usize) -> Result<f64> {
    if positive_class >= preds.num_classes() {
        return Err(Error::Invalid(format!("class {positive_class} outside 0..{}", preds.num_classes())));
    }
    auroc_binary(&preds.binary(positive_class))
}

/// Unweighted mean of one-vs-rest AUROC over classes where it is defined.
pub fn auroc_macro_ovr(preds: &ScoredPredictions) -> Option<f64> {
    let defined: Vec<f64> = (0..preds.num_classes())
        .filter_map(|c| auroc(preds, c).ok())
        .collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdMetrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    /// `2TP / (2TP + FP + FN)`
    pub f1: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ThresholdMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        ThresholdMetrics {
            tp,
            fp,
            fn_,
            tn,
            recall: ratio(tp, tp + fn_),
            specificity: ratio(tn, tn + fp),
            precision: ratio(tp, tp + fp),
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
        }
    }
}

/// A row is predicted positive when its score for `positive_class` is `>= threshold`.
pub fn threshold_metrics(preds: &ScoredPredictions, positive_class: usize, threshold: f64) -> ThresholdMetrics {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (score, positive) in preds.binary(positive_class) {
        match (score >= threshold, positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    ThresholdMetrics::from_counts(tp, fp, fn_, tn)
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `counts[true][predicted]` over included rows, predicted = argmax.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn to_tensor(&self) -> Tensor {
        let n = self.counts.len();
        Tensor::matrix(n, n, self.counts.iter().flatten().map(|&c| c as f64).collect()).expect("square")
    }
}

pub fn confusion_matrix(preds: &ScoredPredictions) -> ConfusionMatrix {
    let d = preds.num_classes();
    let mut counts = vec![vec![0; d]; d];
    for r in 0..preds.truths.len() {
        if preds.included[r] {
            counts[preds.truths[r]][argmax(preds.scores.row(r))] += 1;
        }
    }
    ConfusionMatrix { counts }
}

/// Every summary metric used in result tables.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub auprc: AuprcReport,
    /// Binary tasks: AUROC of class 1; otherwise the macro one-vs-rest mean.
    pub auroc: Option<f64>,
    /// Binary tasks at score threshold 0.5 on class 1; argmax-free.
    pub threshold: Option<ThresholdMetrics>,
    pub confusion: ConfusionMatrix,
    pub rows: usize,
}

impl MetricSummary {
    /// Named scalar values, `None` where undefined.
    pub fn named(&self) -> Vec<(String, Option<f64>)> {
        let mut out = vec![
            ("auprc".to_string(), self.auprc.macro_average),
            ("auroc".to_string(), self.auroc),
        ];
        if let Some(t) = &self.threshold {
            out.push(("recall".into(), t.recall));
            out.push(("specificity".into(), t.specificity));
            out.push(("f1".into(), t.f1));
        }
        for (c, v) in self.auprc.per_class.iter().enumerate() {
            out.push((format!("auprc_class{c}"), *v));
        }
        out
    }
}

pub fn summarize(preds: &ScoredPredictions) -> MetricSummary {
    let binary = preds.num_classes() == 2;
    MetricSummary {
        auprc: auprc_macro_ovr(preds),
        auroc: if binary { auroc(preds, 1).ok() } else { auroc_macro_ovr(preds) },
        threshold: binary.then(|| threshold_metrics(preds, 1, 0.5)),
        confusion: confusion_matrix(preds),
        rows: preds.included_rows(),
    }
}
