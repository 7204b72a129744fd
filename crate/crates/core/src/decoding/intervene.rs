//! The entropy penalty and the per-step gate that decides when to apply it.

use crate::entropy::VisualEntropyVector;
use crate::error::{Error, Result};

use super::config::DecoderConfig;
use super::dist::VocabDistribution;
use super::segment::Segment;
use super::TokenId;

/// Reweights `dist` by `exp(-alpha * entropy)` and renormalizes.
///
/// `alpha == 0` returns an exact copy of the input.
pub fn intervene(
    dist: &VocabDistribution,
    entropy: &VisualEntropyVector,
    alpha: f64,
) -> Result<VocabDistribution> {
    if dist.len() != entropy.len() {
        return Err(Error::Config(format!(
            "distribution has {} entries but entropy vector has {}",
            dist.len(),
            entropy.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    if alpha == 0.0 {
        return Ok(dist.clone());
    }
    let weights: Vec<f64> = dist
        .probs()
        .iter()
        .zip(entropy.values())
        .map(|(p, e)| p * (-alpha * e).exp())
        .collect();
    VocabDistribution::from_weights(weights)
        .map_err(|e| Error::Numeric(format!("intervention mass underflow: {e}")))
}

/// Result of gating one decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct GateOutcome {
    /// Top-1 token of the unmodified distribution.
    pub candidate: TokenId,
    pub candidate_entropy: f64,
    pub degenerate_row: bool,
    pub divergent: bool,
    pub intervened: bool,
    /// Distribution the token is selected from.
    pub effective: VocabDistribution,
}

/// Classifies the step from its top-1 candidate and applies the penalty when
/// the configured scope allows it.
///
/// The gate is a strict `entropy > gamma`.
pub fn gate_step(
    dist: &VocabDistribution,
    entropy: &VisualEntropyVector,
    config: &DecoderConfig,
    segment: Segment,
) -> Result<GateOutcome> {
    if dist.len() != entropy.len() {
        return Err(Error::Config(format!(
            "distribution has {} entries but entropy vector has {}",
            dist.len(),
            entropy.len()
        )));
    }
    let candidate = dist.argmax();
    let candidate_entropy = entropy.values()[candidate];
    let divergent = candidate_entropy > config.gamma;
    let intervened = config.scope.permits(divergent, segment);
    let effective = if intervened {
        intervene(dist, entropy, config.alpha)?
    } else {
        dist.clone()
    };
    Ok(GateOutcome {
        candidate,
        candidate_entropy,
        degenerate_row: entropy.is_degenerate(candidate),
        divergent,
        intervened,
        effective,
    })
}
