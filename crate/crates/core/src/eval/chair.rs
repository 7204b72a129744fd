use std::collections::BTreeSet;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decoding::SegmentMarkers;
use crate::error::{Error, Result};

use super::corpus::{AnnotatedSample, ThinkingMode};

/// Canonical object names that count as object mentions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon(BTreeSet<String>);

impl Lexicon {
    pub fn new<I, S>(objects: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = objects
            .into_iter()
            .map(|o| o.as_ref().trim().to_lowercase())
            .filter(|o| !o.is_empty())
            .collect();
        if set.is_empty() {
            return Err(Error::Config("object lexicon is empty".into()));
        }
        Ok(Self(set))
    }

    /// Every truth object and synonym target found in the corpus.
    pub fn from_corpus(corpus: &[AnnotatedSample]) -> Result<Self> {
        Self::new(corpus.iter().flat_map(|s| {
            s.truth_objects
                .iter()
                .map(|o| s.canonical(o))
                .chain(s.synonyms.values().map(|v| v.to_lowercase()))
                .collect::<Vec<_>>()
        }))
    }

    pub fn contains(&self, canonical: &str) -> bool {
        self.0.contains(canonical)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Which part of each response the metrics look at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSpan {
    #[default]
    Full,
    Think,
    Answer,
}

impl FromStr for EvalSpan {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(EvalSpan::Full),
            "think" => Ok(EvalSpan::Think),
            "answer" => Ok(EvalSpan::Answer),
            other => Err(Error::Config(format!(
                "unknown span '{other}' (expected full, think or answer)"
            ))),
        }
    }
}

/// Distinct canonical objects mentioned in a token range, split into
/// grounded and hallucinated.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Mentions {
    pub grounded: BTreeSet<String>,
    pub hallucinated: BTreeSet<String>,
}

impl Mentions {
    pub fn total(&self) -> usize {
        self.grounded.len() + self.hallucinated.len()
    }

    /// Hallucinated share, or `None` when nothing was mentioned.
    pub fn rate(&self) -> Option<f64> {
        match self.total() {
            0 => None,
            n => Some(self.hallucinated.len() as f64 / n as f64),
        }
    }
}

/// Object mentions in `range` of the sample's tokens. A mention is a token
/// whose display text, lowercased and synonym-resolved, is in the lexicon.
pub fn mentions_in(sample: &AnnotatedSample, lexicon: &Lexicon, range: Range<usize>) -> Mentions {
    let truth = sample.truth_set();
    let end = range.end.min(sample.tokens.len());
    let start = range.start.min(end);
    let mut out = Mentions::default();
    for token in &sample.tokens[start..end] {
        let Some(text) = sample.display.get(token) else {
            continue;
        };
        let canonical = sample.canonical(text.trim());
        if !lexicon.contains(&canonical) {
            continue;
        }
        if truth.contains(&canonical) {
            out.grounded.insert(canonical);
        } else {
            out.hallucinated.insert(canonical);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRates {
    pub id: String,
    pub mentions: usize,
    pub hallucinated: usize,
    pub thinking_rate: Option<f64>,
    pub answering_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_error: Option<String>,
}

/// Mean per-segment hallucination rate by thinking mode. Segments without
/// object mentions are left out; a mode with no scored segment is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRates {
    pub normal: Option<f64>,
    pub divergent: Option<f64>,
    pub normal_segments: usize,
    pub divergent_segments: usize,
    /// divergent / normal when both exist and normal is positive.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HallucinationReport {
    pub span: EvalSpan,
    pub n_samples: usize,
    pub n_mentions: usize,
    pub n_hallucinated_mentions: usize,
    pub n_hallucinated_samples: usize,
    pub chair_s: f64,
    pub chair_i: f64,
    pub samples: Vec<SampleRates>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_rates: Option<ModeRates>,
}


/// CHAIR_I is hallucinated mentions over all mentions; CHAIR_S is the share
/// of responses with at least one hallucinated mention. Mentions are counted
/// once per distinct object per response.
///
/// With the full span, a response whose markers cannot be split still counts;
/// only its thinking and answering rates are left empty. Think and answer
/// spans require a valid split.
pub fn chair_metrics(
    corpus: &[AnnotatedSample],
    lexicon: &Lexicon,
    span: EvalSpan,
    markers: &SegmentMarkers,
) -> Result<HallucinationReport> {
    if corpus.is_empty() {
        return Err(Error::Report("CHAIR needs at least one sample".into()));
    }
    if lexicon.is_empty() {
        return Err(Error::Config("object lexicon is empty".into()));
    }
    let mut samples = Vec::with_capacity(corpus.len());
    let (mut n_mentions, mut n_hall, mut n_hall_samples) = (0, 0, 0);
    for sample in corpus {
        let split = sample.split(markers);
        let range = match (span, &split) {
            (EvalSpan::Full, _) => 0..sample.tokens.len(),
            (_, Err(_)) => return Err(split.unwrap_err()),
            (EvalSpan::Think, Ok(s)) => s.think.clone(),
            (EvalSpan::Answer, Ok(s)) => s.answer.clone(),
        };
        let m = mentions_in(sample, lexicon, range);
        let (thinking_rate, answering_rate) = match &split {
            Ok(s) => (
                mentions_in(sample, lexicon, s.think.clone()).rate(),
                mentions_in(sample, lexicon, s.answer.clone()).rate(),
            ),
            Err(_) => (None, None),
        };
        n_mentions += m.total();
        n_hall += m.hallucinated.len();
        if !m.hallucinated.is_empty() {
            n_hall_samples += 1;
        }
        samples.push(SampleRates {
            id: sample.id.clone(),
            mentions: m.total(),
            hallucinated: m.hallucinated.len(),
            thinking_rate,
            answering_rate,
            split_error: split.err().map(|e| e.to_string()),
        });
    }
    let mode_rates = if corpus.iter().any(|s| !s.segments.is_empty()) {
        Some(mode_hallucination_rates(corpus, lexicon)?)
    } else {
        None
    };
    Ok(HallucinationReport {
        span,
        n_samples: corpus.len(),
        n_mentions,
        n_hallucinated_mentions: n_hall,
        n_hallucinated_samples: n_hall_samples,
        chair_s: n_hall_samples as f64 / corpus.len() as f64,
        chair_i: if n_mentions == 0 {
            0.0
        } else {
            n_hall as f64 / n_mentions as f64
        },
        samples,
        mode_rates,
    })
}

pub fn mode_hallucination_rates(corpus: &[AnnotatedSample], lexicon: &Lexicon) -> Result<ModeRates> {
    if corpus.iter().all(|s| s.segments.is_empty()) {
        return Err(Error::Report("no segment annotations in corpus".into()));
    }
    let (mut normal, mut divergent) = (Vec::new(), Vec::new());
    for sample in corpus {
        for seg in &sample.segments {
            if let Some(rate) = mentions_in(sample, lexicon, seg.range()).rate() {
                match seg.mode {
                    ThinkingMode::Normal => normal.push(rate),
                    ThinkingMode::Divergent => divergent.push(rate),
                }
            }
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let (n, d) = (mean(&normal), mean(&divergent));
    Ok(ModeRates {
        normal: n,
        divergent: d,
        normal_segments: normal.len(),
        divergent_segments: divergent.len(),
        ratio: match (n, d) {
            (Some(n), Some(d)) if n > 0.0 => Some(d / n),
            _ => None,
        },
    })
}
