use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::backends::AttentionSummary;
use crate::error::{Error, Result};

use super::segment::Segment;
use super::TokenId;

/// Everything decided at one decoding step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step_index: usize,
    /// Top-1 token of the unmodified distribution; the gate looks at this.
    pub candidate_token: TokenId,
    pub candidate_entropy: f64,
    pub divergent: bool,
    pub intervened: bool,
    pub selected_token: TokenId,
    pub selected_entropy: f64,
    pub segment: Segment,
    pub degenerate_row: bool,
    #[serde(default)]
    pub marker_violation: bool,
    /// Digest of the entropy vector in force for the step.
    pub entropy_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<AttentionSummary>,
}

/// One line of a trace JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub sample_id: String,
    #[serde(flatten)]
    pub trace: StepTrace,
}

pub fn write_trace_jsonl<W: Write>(mut out: W, sample_id: &str, traces: &[StepTrace]) -> Result<()> {
    for trace in traces {
        let record = TraceRecord {
            sample_id: sample_id.to_string(),
            trace: trace.clone(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace_jsonl<R: BufRead>(input: R) -> Result<Vec<TraceRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| {
            Error::Config(format!("trace line {}: {e}", lineno + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}
