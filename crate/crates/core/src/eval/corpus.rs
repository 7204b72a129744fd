use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::decoding::{SegmentMarkers, TokenId};
use crate::error::{Error, Result};

use super::segments::{split_segments, SegmentSplit};

/// Label of an annotated thinking segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThinkingMode {
    Normal,
    Divergent,
}

/// Half-open token range `[start, end)` of the response with its label.
/// Serialized as `[start, end, "normal" | "divergent"]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(usize, usize, ThinkingMode)", into = "(usize, usize, ThinkingMode)")]
pub struct SegmentAnnotation {
    pub start: usize,
    pub end: usize,
    pub mode: ThinkingMode,
}

impl From<(usize, usize, ThinkingMode)> for SegmentAnnotation {
    fn from((start, end, mode): (usize, usize, ThinkingMode)) -> Self {
        Self { start, end, mode }
    }
}

impl From<SegmentAnnotation> for (usize, usize, ThinkingMode) {
    fn from(s: SegmentAnnotation) -> Self {
        (s.start, s.end, s.mode)
    }
}

impl SegmentAnnotation {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YesNo {
    Yes,
    No,
}

impl YesNo {
    /// "yes" (any case) is yes; everything else counts as no.
    pub fn from_answer(word: &str) -> Self {
        if word.trim().eq_ignore_ascii_case("yes") {
            YesNo::Yes
        } else {
            YesNo::No
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopeLabel {
    pub expected: YesNo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<YesNo>,
}

/// One response with its ground truth, as stored in a corpus JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedSample {
    pub id: String,
    /// Response tokens, markers included.
    #[serde(default)]
    pub tokens: Vec<TokenId>,
    /// Generation input; not part of the response.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prompt: Vec<TokenId>,
    #[serde(default)]
    pub display: BTreeMap<TokenId, String>,
    #[serde(default)]
    pub truth_objects: Vec<String>,
    #[serde(default)]
    pub synonyms: BTreeMap<String, String>,
    #[serde(default)]
    pub segments: Vec<SegmentAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pope: Option<PopeLabel>,
    /// Visual embedding rows for backends that take them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual: Option<Vec<Vec<f64>>>,
}

impl AnnotatedSample {
    pub fn validate(&self) -> Result<()> {
        let mut last_end = 0;
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.start > seg.end {
                return Err(Error::Structural(format!(
                    "sample {}: segment {i} has start {} after end {}",
                    self.id, seg.start, seg.end
                )));
            }
            if seg.start < last_end {
                return Err(Error::Structural(format!(
                    "sample {}: segment {i} overlaps or precedes the previous one",
                    self.id
                )));
            }
            last_end = seg.end;
        }
        for (surface, canonical) in &self.synonyms {
            if let Some(next) = self.synonyms.get(canonical) {
                if next != canonical {
                    return Err(Error::Config(format!(
                        "sample {}: synonym '{surface}' -> '{canonical}' -> '{next}' is ambiguous",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Think and answer spans of the response, as indices into `tokens`.
    ///
    /// Markers in the prompt count, so a prompt ending in a think-open marker
    /// puts the start of the response in the think span.
    pub fn split(&self, markers: &SegmentMarkers) -> Result<SegmentSplit> {
        let offset = self.prompt.len();
        let full: Vec<TokenId> = self.prompt.iter().chain(&self.tokens).copied().collect();
        let split = split_segments(&full, markers)
            .map_err(|e| match e {
                Error::Structural(msg) => Error::Structural(format!("sample {}: {msg}", self.id)),
                other => other,
            })?;
        let shift = |r: Range<usize>| r.start.max(offset) - offset..r.end.max(offset) - offset;
        Ok(SegmentSplit {
            think: shift(split.think),
            answer: shift(split.answer),
            warning: split.warning,
        })
    }

    /// Canonical object name a surface form resolves to.
    pub fn canonical(&self, surface: &str) -> String {
        let lower = surface.to_lowercase();
        match self.synonyms.get(&lower).or_else(|| self.synonyms.get(surface)) {
            Some(c) => c.to_lowercase(),
            None => lower,
        }
    }

    pub fn truth_set(&self) -> BTreeSet<String> {
        self.truth_objects.iter().map(|o| self.canonical(o)).collect()
    }

    /// Display text of a token range, space separated.
    pub fn render(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .map(|t| self.display.get(t).cloned().unwrap_or_else(|| format!("<{t}>")))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn read_corpus_jsonl<R: BufRead>(input: R) -> Result<Vec<AnnotatedSample>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: AnnotatedSample = serde_json::from_str(&line)
            .map_err(|e| Error::Config(format!("corpus line {}: {e}", lineno + 1)))?;
        sample.validate()?;
        if !seen.insert(sample.id.clone()) {
            return Err(Error::Config(format!(
                "corpus line {}: duplicate sample id '{}'",
                lineno + 1,
                sample.id
            )));
        }
        out.push(sample);
    }
    Ok(out)
}

pub fn write_corpus_jsonl<W: Write>(mut out: W, corpus: &[AnnotatedSample]) -> Result<()> {
    for s in corpus {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_line() {
        let line = r#"{"id":"a","tokens":[1,5,3,6],"display":{"5":"dog","6":"Yes"},
            "truth_objects":["dog"],"synonyms":{"puppy":"dog"},
            "segments":[[1,2,"divergent"]],"pope":{"expected":"yes"}}"#
            .replace('\n', "");
        let corpus = read_corpus_jsonl(line.as_bytes()).unwrap();
        let s = &corpus[0];
        assert_eq!(s.display[&5], "dog");
        assert_eq!(s.segments[0].mode, ThinkingMode::Divergent);
        assert_eq!(s.pope.unwrap().expected, YesNo::Yes);
        assert_eq!(s.canonical("Puppy"), "dog");
        let mut buf = Vec::new();
        write_corpus_jsonl(&mut buf, &corpus).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("[1,2,\"divergent\"]"));
    }

    #[test]
    fn overlapping_segments_rejected() {
        let s = AnnotatedSample {
            id: "x".into(),
            tokens: vec![],
            prompt: vec![],
            display: BTreeMap::new(),
            truth_objects: vec![],
            synonyms: BTreeMap::new(),
            segments: vec![
                SegmentAnnotation { start: 0, end: 3, mode: ThinkingMode::Normal },
                SegmentAnnotation { start: 2, end: 4, mode: ThinkingMode::Normal },
            ],
            pope: None,
            visual: None,
        };
        assert!(matches!(s.validate(), Err(Error::Structural(_))));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "{\"id\":\"a\"}\n{\"id\":\"a\"}\n";
        assert!(read_corpus_jsonl(text.as_bytes()).is_err());
    }

    #[test]
    fn prompt_markers_shift_into_the_response() {
        let mut s: AnnotatedSample = serde_json::from_str(r#"{"id":"p","prompt":[9,1],"tokens":[5,6,3,7]}"#).unwrap();
        let split = s.split(&SegmentMarkers::default()).unwrap();
        assert_eq!(split.think, 0..2);
        assert_eq!(split.answer, 3..4);
        s.prompt.clear();
        let split = s.split(&SegmentMarkers::default()).unwrap();
        assert!(split.think.is_empty());
        assert_eq!(split.answer, 3..4);
    }

    #[test]
    fn yes_no_parsing() {
        assert_eq!(YesNo::from_answer(" YES "), YesNo::Yes);
        assert_eq!(YesNo::from_answer("maybe"), YesNo::No);
    }
}
