use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::decoding::{SegmentMarkers, TokenId};
use crate::error::{Error, Result};

/// Think and answer ranges of a response. Marker tokens belong to neither.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSplit {
    pub think: Range<usize>,
    pub answer: Range<usize>,
    /// Set when a think-open or answer-open marker is missing.
    pub warning: bool,
}

fn positions(tokens: &[TokenId], marker: TokenId) -> Vec<usize> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == marker)
        .map(|(i, _)| i)
        .collect()
}

/// Splits a response at its markers.
///
/// The think span runs from after the think-open marker to the first
/// think-close or answer-open marker; the answer span runs from after the
/// answer-open marker to the end. Without an answer marker and without a
/// think marker the whole sequence is the answer.
pub fn split_segments(tokens: &[TokenId], markers: &SegmentMarkers) -> Result<SegmentSplit> {
    let think_open = positions(tokens, markers.think_open);
    let think_close = positions(tokens, markers.think_close);
    let answer_open = positions(tokens, markers.answer_open);
    for (name, found) in [
        ("think-open", &think_open),
        ("think-close", &think_close),
        ("answer-open", &answer_open),
    ] {
        if found.len() > 1 {
            return Err(Error::Structural(format!(
                "duplicated {name} marker at positions {found:?}"
            )));
        }
    }
    let n = tokens.len();
    let answer_at = answer_open.first().copied();
    let think_at = think_open.first().copied();
    if let (Some(t), Some(a)) = (think_at, answer_at) {
        if a < t {
            return Err(Error::Structural(format!(
                "answer marker at {a} precedes think marker at {t}"
            )));
        }
    }
    let answer = match answer_at {
        Some(a) => a + 1..n,
        None if think_at.is_none() => 0..n,
        None => n..n,
    };
    let think = match think_at {
        Some(t) => {
            let end = think_close
                .iter()
                .copied()
                .filter(|&c| c > t)
                .chain(answer_at)
                .min()
                .unwrap_or(n);
            t + 1..end
        }
        None => 0..0,
    };
    Ok(SegmentSplit {
        think,
        answer,
        warning: think_at.is_none() || answer_at.is_none(),
    })
}
