use serde::{Deserialize, Serialize};

use crate::decoding::SegmentMarkers;
use crate::error::{Error, Result};

use super::chair::{mentions_in, Lexicon};
use super::corpus::AnnotatedSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pearson_rho: f64,
    /// Coefficient of determination of the least-squares line.
    pub r_squared: f64,
    pub n_pairs: usize,
    pub slope: f64,
    pub intercept: f64,
}

/// Pearson correlation and least-squares fit of `ys` on `xs`.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<CorrelationReport> {
    if xs.len() != ys.len() {
        return Err(Error::Config(format!(
            "paired series have lengths {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::Report(format!("correlation needs at least 2 pairs, got {n}")));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    // Sums of squares at rounding-noise level mean a constant coordinate.
    let flat = |v: &[f64], ss: f64| {
        let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        ss <= n as f64 * (4.0 * f64::EPSILON * scale).powi(2)
    };
    for (name, v, ss) in [("first", xs, sxx), ("second", ys, syy)] {
        if flat(v, ss) {
            return Err(Error::DegenerateCorrelation(format!(
                "zero variance in {name} coordinate"
            )));
        }
    }
    let rho = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let slope = sxy / sxx;
    Ok(CorrelationReport {
        pearson_rho: rho,
        r_squared: rho * rho,
        n_pairs: n,
        slope,
        intercept: my - slope * mx,
    })
}

/// Per-sample (thinking rate, answering rate) pairs. Samples where either
/// span has no object mention, or whose markers cannot be split, are skipped.
pub fn rate_pairs(
    corpus: &[AnnotatedSample],
    lexicon: &Lexicon,
    markers: &SegmentMarkers,
) -> Result<Vec<(f64, f64)>> {
    let mut pairs = Vec::new();
    for sample in corpus {
        let Ok(split) = sample.split(markers) else {
            continue;
        };
        let think = mentions_in(sample, lexicon, split.think).rate();
        let answer = mentions_in(sample, lexicon, split.answer).rate();
        if let (Some(t), Some(a)) = (think, answer) {
            pairs.push((t, a));
        }
    }
    Ok(pairs)
}

pub fn hallucination_correlation(
    corpus: &[AnnotatedSample],
    lexicon: &Lexicon,
    markers: &SegmentMarkers,
) -> Result<CorrelationReport> {
    let pairs = rate_pairs(corpus, lexicon, markers)?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    pearson(&xs, &ys)
}
