//! Scoring metrics for the evaluation harness.
//!
//! Everything here is a pure function of predictions and references, so any
//! reported number can be recomputed from the persisted per-item files.

use std::collections::{BTreeSet, HashMap};

/// Mean of per-item credits (each in [0, 1]). Empty input scores 0.
pub fn accuracy(credits: &[f64]) -> f64 {
    if credits.is_empty() {
        0.0
    } else {
        credits.iter().sum::<f64>() / credits.len() as f64
    }
}

/// ROUGE-1 F-measure: clipped unigram overlap on lowercased,
/// whitespace-tokenized, unstemmed text. Both sides empty scores 1,
/// exactly one side empty scores 0; identical texts score exactly 1.
pub fn rouge1_f(prediction: &str, reference: &str) -> f64 {
    let pred: Vec<String> = prediction.split_whitespace().map(str::to_lowercase).collect();
    let refr: Vec<String> = reference.split_whitespace().map(str::to_lowercase).collect();
    if pred.is_empty() && refr.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let mut available: HashMap<&str, usize> = HashMap::new();
    for token in &refr {
        *available.entry(token.as_str()).or_insert(0) += 1;
    }
    let mut matched = 0usize;
    for token in &pred {
        if let Some(n) = available.get_mut(token.as_str()) {
            if *n > 0 {
                *n -= 1;
                matched += 1;
            }
        }
    }
    let precision = matched as f64 / pred.len() as f64;
    let recall = matched as f64 / refr.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Matthews correlation coefficient, generalized to any number of classes
/// (the R_k correlation over the confusion matrix). Predictions and
/// references are arbitrary label strings; unseen prediction labels (e.g. a
/// no-answer sentinel) simply form their own class. Returns 0 when a
/// marginal is degenerate (all-one-class), where the coefficient is
/// undefined.
///
/// For two classes this reduces to the familiar
/// (TP·TN − FP·FN) / √((TP+FP)(TP+FN)(TN+FP)(TN+FN)).
pub fn mcc(predictions: &[String], references: &[String]) -> f64 {
    assert_eq!(
        predictions.len(),
        references.len(),
        "mcc needs one prediction per reference"
    );
    if predictions.is_empty() {
        return 0.0;
    }
    // Stable class order for a deterministic confusion matrix.
    let classes: BTreeSet<&str> = predictions
        .iter()
        .chain(references.iter())
        .map(String::as_str)
        .collect();
    let index: HashMap<&str, usize> =
        classes.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let k = classes.len();
    let mut confusion = vec![0f64; k * k];
    for (p, t) in predictions.iter().zip(references) {
        confusion[index[t.as_str()] * k + index[p.as_str()]] += 1.0;
    }
    let s = predictions.len() as f64;
    let mut correct = 0.0;
    let mut true_marginal = vec![0f64; k];
    let mut pred_marginal = vec![0f64; k];
    for t in 0..k {
        correct += confusion[t * k + t];
        for p in 0..k {
            true_marginal[t] += confusion[t * k + p];
            pred_marginal[p] += confusion[t * k + p];
        }
    }
    let cross: f64 = true_marginal
        .iter()
        .zip(&pred_marginal)
        .map(|(t, p)| t * p)
        .sum();
    let t_sq: f64 = true_marginal.iter().map(|t| t * t).sum();
    let p_sq: f64 = pred_marginal.iter().map(|p| p * p).sum();
    let denominator = (s * s - p_sq).sqrt() * (s * s - t_sq).sqrt();
    if denominator == 0.0 {
        0.0
    } else {
        (correct * s - cross) / denominator
    }
}

/// Micro-averaged F1 over exact (entity, type) matches, set semantics per
/// item. When neither side has any entities at all, scores 1 (nothing to
/// find, nothing invented).
pub fn entity_f1(items: &[(Vec<(String, String)>, Vec<(String, String)>)]) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (predicted, gold) in items {
        let pred_set: BTreeSet<&(String, String)> = predicted.iter().collect();
        let gold_set: BTreeSet<&(String, String)> = gold.iter().collect();
        let inter = pred_set.intersection(&gold_set).count();
        tp += inter;
        fp += pred_set.len() - inter;
        fn_ += gold_set.len() - inter;
    }
    let denominator = 2 * tp + fp + fn_;
    if denominator == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denominator as f64
    }
}
