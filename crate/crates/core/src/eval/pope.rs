use serde::{Deserialize, Serialize};

use crate::decoding::SegmentMarkers;
use crate::error::{Error, Result};

use super::corpus::{AnnotatedSample, PopeLabel, YesNo};

/// Reads a yes/no answer off the response: the first token of the answer
/// span displayed as "yes" or "no" decides, and anything else counts as no.
/// Without a usable answer span the whole response is scanned.
pub fn answer_prediction(sample: &AnnotatedSample, markers: &SegmentMarkers) -> YesNo {
    let range = match sample.split(markers) {
        Ok(s) if !s.answer.is_empty() => s.answer,
        _ => 0..sample.tokens.len(),
    };
    sample.tokens[range]
        .iter()
        .filter_map(|t| sample.display.get(t))
        .map(|w| w.trim().to_lowercase())
        .find(|w| w == "yes" || w == "no")
        .map_or(YesNo::No, |w| YesNo::from_answer(&w))
}

/// Yes/no probing scores with "yes" as the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopeReport {
    pub n_items: usize,
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when there are no positive predictions and no positive labels;
    /// F1 is then reported as 1.
    pub degenerate: bool,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn pope_metrics(items: &[PopeLabel]) -> Result<PopeReport> {
    if items.is_empty() {
        return Err(Error::Report("POPE needs at least one item".into()));
    }
    let (mut tp, mut fp, mut tn, mut fneg) = (0, 0, 0, 0);
    for (i, item) in items.iter().enumerate() {
        let predicted = item
            .predicted
            .ok_or_else(|| Error::Report(format!("POPE item {i} has no prediction")))?;
        match (item.expected, predicted) {
            (YesNo::Yes, YesNo::Yes) => tp += 1,
            (YesNo::No, YesNo::Yes) => fp += 1,
            (YesNo::No, YesNo::No) => tn += 1,
            (YesNo::Yes, YesNo::No) => fneg += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let degenerate = tp + fp == 0 && tp + fneg == 0;
    let f1 = if degenerate {
        1.0
    } else if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(PopeReport {
        n_items: items.len(),
        true_positive: tp,
        false_positive: fp,
        true_negative: tn,
        false_negative: fneg,
        accuracy: ratio(tp + tn, items.len()),
        precision,
        recall,
        f1,
        degenerate,
    })
}
