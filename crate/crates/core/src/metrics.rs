//! MSE, binary accuracy/F1 and quadratic weighted kappa over normalized scores.

use crate::data::{ExamItem, GradedResult};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

/// Number of ordinal levels: 0, 0.25, 0.5, 0.75, 1.
pub const LEVELS: usize = 5;
pub const PASS_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("score {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("{0} predictions for {1} labels")]
    Shape(usize, usize),
    #[error("results do not align with items: {0}")]
    Alignment(String),
}

fn check_pair<T: Scalar>(preds: &[T], labels: &[T]) -> Result<(), MetricsError> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(MetricsError::Shape(preds.len(), labels.len()));
    }
    Ok(())
}

/// Index of the nearest level; exact midpoints go to the higher level.
pub fn discretize<T: Scalar>(score: T) -> Result<usize, MetricsError> {
    let s = score.as_f64();
    if !(0.0..=1.0).contains(&s) {
        return Err(MetricsError::OutOfRange(s));
    }
    Ok(((s * (LEVELS - 1) as f64 + 0.5).floor() as usize).min(LEVELS - 1))
}

pub fn mse_metric<T: Scalar>(preds: &[T], labels: &[T]) -> Result<f64, MetricsError> {
    check_pair(preds, labels)?;
    let sum: f64 = preds.iter().zip(labels).map(|(p, y)| (p.as_f64() - y.as_f64()).powi(2)).sum();
    Ok(sum / preds.len() as f64)
}

fn binarize<T: Scalar>(x: T) -> bool {
    x.as_f64() >= PASS_THRESHOLD
}

/// Fraction of items whose prediction and label fall on the same side of 0.5.
pub fn accuracy<T: Scalar>(preds: &[T], labels: &[T]) -> Result<f64, MetricsError> {
    check_pair(preds, labels)?;
    let hits = preds.iter().zip(labels).filter(|(p, y)| binarize(**p) == binarize(**y)).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Binary F1 with positive class `score ≥ 0.5`.
pub fn f1<T: Scalar>(preds: &[T], labels: &[T]) -> Result<f64, MetricsError> {
    check_pair(preds, labels)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (p, y) in preds.iter().zip(labels) {
        match (binarize(*p), binarize(*y)) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp + fp + fn_ == 0 {
        return Ok(1.0);
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Observed and chance-expected level matrices, rows = label level, cols = prediction level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelHistograms {
    pub observed: [[f64; LEVELS]; LEVELS],
    pub expected: [[f64; LEVELS]; LEVELS],
}

pub fn level_histograms<T: Scalar>(preds: &[T], labels: &[T]) -> Result<LevelHistograms, MetricsError> {
    check_pair(preds, labels)?;
    let mut observed = [[0.0; LEVELS]; LEVELS];
    for (p, y) in preds.iter().zip(labels) {
        observed[discretize(*y)?][discretize(*p)?] += 1.0;
    }
    let n = preds.len() as f64;
    let rows: Vec<f64> = observed.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..LEVELS).map(|j| observed.iter().map(|r| r[j]).sum()).collect();
    let mut expected = [[0.0; LEVELS]; LEVELS];
    for i in 0..LEVELS {
        for j in 0..LEVELS {
            expected[i][j] = rows[i] * cols[j] / n;
        }
    }
    Ok(LevelHistograms { observed, expected })
}

fn weight(i: usize, j: usize) -> f64 {
    let diff = i as f64 - j as f64;
    diff * diff / ((LEVELS - 1) * (LEVELS - 1)) as f64
}

fn kappa_from(h: &LevelHistograms) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..LEVELS {
        for j in 0..LEVELS {
            num += weight(i, j) * h.observed[i][j];
            den += weight(i, j) * h.expected[i][j];
        }
    }
    if den == 0.0 {
        return if num == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - num / den
}

/// Quadratic weighted kappa over the five discretized levels.
pub fn qwk<T: Scalar>(preds: &[T], labels: &[T]) -> Result<f64, MetricsError> {
    Ok(kappa_from(&level_histograms(preds, labels)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse: f64,
    pub acc: f64,
    pub f1: f64,
    pub qwk: f64,
    pub n: usize,
    pub level_histograms: LevelHistograms,
}

/// All four metrics over aligned `(prediction, label)` pairs.
pub fn report<T: Scalar>(preds: &[T], labels: &[T]) -> Result<MetricsReport, MetricsError> {
    let hist = level_histograms(preds, labels)?;
    Ok(MetricsReport {
        mse: mse_metric(preds, labels)?,
        acc: accuracy(preds, labels)?,
        f1: f1(preds, labels)?,
        qwk: kappa_from(&hist),
        n: preds.len(),
        level_histograms: hist,
    })
}

/// Joins results to items by id and scores them. Every item must be graded
/// and have exactly one result.
pub fn evaluate(results: &[GradedResult], items: &[ExamItem]) -> Result<MetricsReport, MetricsError> {
    if results.len() != items.len() {
        return Err(MetricsError::Alignment(format!("{} results for {} items", results.len(), items.len())));
    }
    let by_id: HashMap<&str, f64> = results.iter().map(|r| (r.id.as_str(), r.predicted_score)).collect();
    if by_id.len() != results.len() {
        return Err(MetricsError::Alignment("duplicate result id".into()));
    }
    let mut preds = Vec::with_capacity(items.len());
    let mut labels = Vec::with_capacity(items.len());
    for item in items {
        let p = by_id.get(item.id.as_str()).ok_or_else(|| MetricsError::Alignment(format!("no result for {:?}", item.id)))?;
        let y = item.score().ok_or_else(|| MetricsError::Alignment(format!("item {:?} has no label", item.id)))?;
        preds.push(*p);
        labels.push(y);
    }
    report(&preds, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discretize_examples() {
        assert_eq!(discretize(0.6).unwrap(), 2);
        assert_eq!(discretize(0.875).unwrap(), 4);
        assert_eq!(discretize(0.125).unwrap(), 1);
        assert_eq!(discretize(0.374).unwrap(), 1);
        assert_eq!(discretize(1.0).unwrap(), 4);
        assert_eq!(discretize(0.0).unwrap(), 0);
        assert!(discretize(1.01).is_err());
        assert!(discretize(f64::NAN).is_err());
    }

    #[test]
    fn mse_accuracy_f1_examples() {
        assert_eq!(mse_metric(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(mse_metric(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
        assert!(mse_metric(&[1.0], &[0.0, 0.0]).is_err());

        assert_eq!(accuracy(&[0.99, 0.52, 0.01], &[1.0, 0.5, 0.0]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0.4], &[0.6]).unwrap(), 0.0);

        assert_eq!(f1(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(f1(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(f1(&[1.0, 1.0, 0.0, 0.0], &[1.0, 0.0, 1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(f1(&[0.0, 0.1], &[0.2, 0.3]).unwrap(), 1.0);
    }

    #[test]
    fn qwk_examples() {
        let x = [0.0, 0.25, 0.5, 0.75, 1.0, 0.5];
        assert_eq!(qwk(&x, &x).unwrap(), 1.0);
        assert_eq!(qwk(&[0.5], &[0.5]).unwrap(), 1.0);
        assert_eq!(qwk(&[0.5, 0.5], &[0.5, 0.0]).unwrap(), 0.0);
        let labels = [0.0, 0.25, 0.5, 0.75, 1.0];
        let rev = [1.0, 0.75, 0.5, 0.25, 0.0];
        assert!(qwk(&rev, &labels).unwrap() < 0.0);
    }
}
