use serde::{Deserialize, Serialize};

use crate::decoding::StepTrace;
use crate::error::{Error, Result};

use super::corpus::{AnnotatedSample, ThinkingMode};

/// Bound on the fitted slope; reached only on separable data.
pub const SLOPE_CAP: f64 = 50.0;
pub const MAX_ITERATIONS: usize = 500;
pub const LL_TOLERANCE: f64 = 1e-10;
pub const CLASSIFICATION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticReport {
    pub intercept: f64,
    pub slope: f64,
    pub log_likelihood: f64,
    pub null_log_likelihood: f64,
    pub mcfadden_r2: f64,
    pub threshold: f64,
    pub accuracy: f64,
    pub n_points: usize,
    pub iterations: usize,
    pub converged: bool,
    /// The classes are perfectly separated by entropy; the slope is capped.
    pub separated: bool,
}

impl LogisticReport {
    pub fn probability(&self, x: f64) -> f64 {
        sigmoid(self.intercept + self.slope * x)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln σ(z), stable for large |z|.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn log_likelihood(points: &[(f64, bool)], b0: f64, b1: f64) -> f64 {
    points
        .iter()
        .map(|&(x, y)| {
            let z = b0 + b1 * x;
            if y {
                log_sigmoid(z)
            } else {
                log_sigmoid(-z)
            }
        })
        .sum()
}

fn is_separable(points: &[(f64, bool)]) -> bool {
    let bounds = |class: bool| {
        points
            .iter()
            .filter(|p| p.1 == class)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)))
    };
    let (pos_lo, pos_hi) = bounds(true);
    let (neg_lo, neg_hi) = bounds(false);
    pos_lo > neg_hi || neg_lo > pos_hi
}

/// Maximum-likelihood fit of P(divergent | entropy) = σ(b0 + b1·x) by damped
/// Newton iteration.
pub fn logistic_fit(points: &[(f64, bool)]) -> Result<LogisticReport> {
    if points.len() < 2 {
        return Err(Error::Report(format!(
            "logistic fit needs at least 2 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !p.0.is_finite()) {
        return Err(Error::Numeric("non-finite entropy in logistic fit input".into()));
    }
    let n = points.len() as f64;
    let positives = points.iter().filter(|p| p.1).count();
    if positives == 0 || positives == points.len() {
        return Err(Error::Report("logistic fit needs both classes".into()));
    }
    let base = positives as f64 / n;
    let null_ll = n * (base * base.ln() + (1.0 - base) * (1.0 - base).ln());

    let (mut b0, mut b1) = ((base / (1.0 - base)).ln(), 0.0);
    let mut ll = log_likelihood(points, b0, b1);
    let mut capped = false;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(x, y) in points {
            let p = sigmoid(b0 + b1 * x);
            let r = if y { 1.0 - p } else { -p };
            let w = p * (1.0 - p);
            g0 += r;
            g1 += r * x;
            h00 += w;
            h01 += w * x;
            h11 += w * x * x;
        }
        let (d0, d1) = if capped {
            (if h00 > 0.0 { g0 / h00 } else { 0.0 }, 0.0)
        } else {
            let det = h00 * h11 - h01 * h01;
            if det.abs() <= f64::EPSILON * h00 * h11 {
                // Curvature vanished; fall back to a gradient step.
                (g0 / n, g1 / n)
            } else {
                ((h11 * g0 - h01 * g1) / det, (h00 * g1 - h01 * g0) / det)
            }
        };
        let mut step = 1.0;
        let mut next = (b0, b1, ll);
        for _ in 0..60 {
            let c0 = b0 + step * d0;
            let mut c1 = b1 + step * d1;
            let mut hit_cap = false;
            if c1.abs() > SLOPE_CAP {
                c1 = SLOPE_CAP.copysign(c1);
                hit_cap = true;
            }
            let cll = log_likelihood(points, c0, c1);
            if cll >= ll {
                next = (c0, c1, cll);
                capped |= hit_cap;
                break;
            }
            step *= 0.5;
        }
        let gain = next.2 - ll;
        (b0, b1, ll) = next;
        if gain < LL_TOLERANCE {
            converged = true;
            break;
        }
    }

    let correct = points
        .iter()
        .filter(|&&(x, y)| (sigmoid(b0 + b1 * x) >= CLASSIFICATION_THRESHOLD) == y)
        .count();
    let r2 = (1.0 - ll / null_ll).clamp(0.0, 1.0);
    Ok(LogisticReport {
        intercept: b0,
        slope: b1,
        log_likelihood: ll,
        null_log_likelihood: null_ll,
        mcfadden_r2: if r2 >= 1.0 { 1.0 - f64::EPSILON } else { r2 },
        threshold: CLASSIFICATION_THRESHOLD,
        accuracy: correct as f64 / n,
        n_points: points.len(),
        iterations,
        converged,
        separated: capped || is_separable(points),
    })
}

/// (entropy of the emitted token, step lies in a divergent segment) for every
/// step whose position falls inside an annotated segment.
pub fn segment_entropy_points(sample: &AnnotatedSample, traces: &[StepTrace]) -> Vec<(f64, bool)> {
    traces
        .iter()
        .filter_map(|t| {
            sample
                .segments
                .iter()
                .find(|s| s.range().contains(&t.step_index))
                .map(|s| (t.selected_entropy, s.mode == ThinkingMode::Divergent))
        })
        .collect()
}
