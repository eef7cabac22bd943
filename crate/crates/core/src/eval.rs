//! Span-level micro-F1 over records.
//!
//! A record counts as a predicted entity when its predicted class is not the
//! non-entity class, and as a gold entity when its gold class is not. A true
//! positive is an exact class match on an entity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// F1 per class; the non-entity entry is always 0.
    pub per_class_f1: Vec<f64>,
    /// Gold count per class.
    pub support: Vec<usize>,
}

fn f1_of(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn span_f1(
    predicted: &[usize],
    gold: &[usize],
    n_classes: usize,
    o_index: usize,
) -> Result<EvalReport> {
    if predicted.len() != gold.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: gold.len(),
        });
    }
    let mut tp = vec![0usize; n_classes];
    let mut pred_n = vec![0usize; n_classes];
    let mut support = vec![0usize; n_classes];
    for (&p, &g) in predicted.iter().zip(gold) {
        pred_n[p] += 1;
        support[g] += 1;
        if p == g {
            tp[p] += 1;
        }
    }
    let entity = |v: &[usize]| -> usize {
        v.iter()
            .enumerate()
            .filter(|(c, _)| *c != o_index)
            .map(|(_, n)| n)
            .sum()
    };
    let precision = ratio(entity(&tp), entity(&pred_n));
    let recall = ratio(entity(&tp), entity(&support));
    let per_class_f1 = (0..n_classes)
        .map(|c| {
            if c == o_index {
                0.0
            } else {
                f1_of(ratio(tp[c], pred_n[c]), ratio(tp[c], support[c]))
            }
        })
        .collect();
    Ok(EvalReport {
        precision,
        recall,
        f1: f1_of(precision, recall),
        per_class_f1,
        support,
    })
}
