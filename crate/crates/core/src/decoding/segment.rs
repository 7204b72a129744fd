use serde::{Deserialize, Serialize};

use super::config::SegmentMarkers;
use super::TokenId;

/// Region of the response a token is generated in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Think,
    Answer,
    Other,
}

/// Three-state marker machine: `other -> think` on the think-open marker,
/// `think -> other` on think-close, and `* -> answer` on answer-open.
///
/// Malformed marker sequences are reported, never fatal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentTracker {
    markers: SegmentMarkers,
    state: Segment,
    think_opened: bool,
    answer_opened: bool,
}

impl SegmentTracker {
    pub fn new(markers: SegmentMarkers) -> Self {
        Self {
            markers,
            state: Segment::Other,
            think_opened: false,
            answer_opened: false,
        }
    }

    /// Tracker after consuming `tokens`. Violations in the prompt are ignored.
    pub fn after(markers: SegmentMarkers, tokens: &[TokenId]) -> Self {
        let mut t = Self::new(markers);
        for &tok in tokens {
            t.advance(tok);
        }
        t
    }

    pub fn current(&self) -> Segment {
        self.state
    }

    /// Consumes one token; returns true if it broke marker nesting.
    pub fn advance(&mut self, token: TokenId) -> bool {
        let m = self.markers;
        if token == m.think_open {
            let violation = self.think_opened || self.answer_opened;
            self.think_opened = true;
            self.state = Segment::Think;
            violation
        } else if token == m.think_close {
            let violation = self.state != Segment::Think;
            if self.state == Segment::Think {
                self.state = Segment::Other;
            }
            violation
        } else if token == m.answer_open {
            let violation = !self.think_opened || self.answer_opened;
            self.answer_opened = true;
            self.state = Segment::Answer;
            violation
        } else {
            false
        }
    }
}

/// Segment label of every token in `tokens`. Marker tokens are `Other`.
pub fn label_tokens(markers: SegmentMarkers, tokens: &[TokenId]) -> Vec<Segment> {
    let mut tracker = SegmentTracker::new(markers);
    tokens
        .iter()
        .map(|&t| {
            let label = if markers.is_marker(t) {
                Segment::Other
            } else {
                tracker.current()
            };
            tracker.advance(t);
            label
        })
        .collect()
}
