//! Model backends: a scripted oracle for exact tests and a tiny seeded
//! transformer for end-to-end runs.

mod scripted;
mod tiny;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use scripted::{entropy_profile_matrix, PrefixEntry, ScriptedBackend};
pub use tiny::{tiny_forward, TinyConfig, TinyForward, TinyLayer, TinySession, TinyTransformer};

/// Tolerance on the total attention mass of one target token.
pub const ATTENTION_SUM_TOLERANCE: f64 = 1e-6;

/// Attention mass of one target token split over source spans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSummary {
    pub image: f64,
    pub think: f64,
    pub other: f64,
    /// Mass on positions not covered by any declared span.
    #[serde(default)]
    pub residual: f64,
}

impl AttentionSummary {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.image, self.think, self.other, self.residual];
        if parts.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!("negative attention mass in {self:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > ATTENTION_SUM_TOLERANCE {
            return Err(Error::Config(format!("attention masses sum to {sum}")));
        }
        Ok(())
    }
}
