use serde::{Deserialize, Serialize};

use crate::entropy::EntropyMode;
use crate::error::{Error, Result};

use super::segment::Segment;
use super::TokenId;

/// Default divergence threshold.
pub const DEFAULT_GAMMA: f64 = 0.5;
/// Default intervention degree.
pub const DEFAULT_ALPHA: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Greedy,
    Nucleus { top_p: f64 },
    Beam { width: usize },
}

/// Which steps the entropy penalty may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionScope {
    /// Thinking steps whose candidate is divergent.
    #[default]
    DivergentOnly,
    /// Every thinking step.
    AllThinking,
    /// Thinking steps whose candidate is not divergent.
    NormalOnly,
    None,
}

impl InterventionScope {
    pub const ALL: [InterventionScope; 4] = [
        InterventionScope::DivergentOnly,
        InterventionScope::AllThinking,
        InterventionScope::NormalOnly,
        InterventionScope::None,
    ];

    pub fn permits(self, divergent: bool, segment: Segment) -> bool {
        let thinking = segment == Segment::Think;
        match self {
            InterventionScope::DivergentOnly => thinking && divergent,
            InterventionScope::AllThinking => thinking,
            InterventionScope::NormalOnly => thinking && !divergent,
            InterventionScope::None => false,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InterventionScope::DivergentOnly => "divergent_only",
            InterventionScope::AllThinking => "all_thinking",
            InterventionScope::NormalOnly => "normal_only",
            InterventionScope::None => "none",
        }
    }
}

impl std::fmt::Display for InterventionScope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for InterventionScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "divergent_only" => Ok(Self::DivergentOnly),
            "all_thinking" => Ok(Self::AllThinking),
            "normal_only" => Ok(Self::NormalOnly),
            "none" => Ok(Self::None),
            _ => Err(Error::Config(format!("unknown intervention scope '{s}'"))),
        }
    }
}

/// Token ids of the reasoning/answer markers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMarkers {
    pub think_open: TokenId,
    pub think_close: TokenId,
    pub answer_open: TokenId,
}

impl Default for SegmentMarkers {
    fn default() -> Self {
        Self {
            think_open: 1,
            think_close: 2,
            answer_open: 3,
        }
    }
}

impl SegmentMarkers {
    pub fn is_marker(&self, token: TokenId) -> bool {
        token == self.think_open || token == self.think_close || token == self.answer_open
    }

    pub fn max_id(&self) -> TokenId {
        self.think_open.max(self.think_close).max(self.answer_open)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub entropy_mode: EntropyMode,
    pub strategy: Strategy,
    pub scope: InterventionScope,
    pub seed: u64,
    pub max_tokens: usize,
    pub markers: SegmentMarkers,
    /// Ask the backend for an attention summary at every step.
    pub record_attention: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            alpha: DEFAULT_ALPHA,
            entropy_mode: EntropyMode::Normalized,
            strategy: Strategy::Greedy,
            scope: InterventionScope::DivergentOnly,
            seed: 0,
            max_tokens: 64,
            markers: SegmentMarkers::default(),
            record_attention: false,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        match self.strategy {
            Strategy::Nucleus { top_p } if !(top_p > 0.0 && top_p <= 1.0) => {
                return Err(Error::Config(format!("top_p {top_p} outside (0, 1]")));
            }
            Strategy::Beam { width: 0 } => {
                return Err(Error::Config("beam width must be at least 1".into()));
            }
            _ => {}
        }
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }
}
