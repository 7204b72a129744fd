//! Entropy-gated autoregressive decoding.

mod backend;
mod config;
mod decoder;
mod dist;
mod intervene;
mod segment;
mod select;
mod trace;

/// Vocabulary index.
pub type TokenId = usize;

pub use backend::{ModelBackend, VisualPrefill};
pub use config::{
    DecoderConfig, InterventionScope, SegmentMarkers, Strategy, DEFAULT_ALPHA, DEFAULT_GAMMA,
};
pub use decoder::{beam_search, decode, DecodeOutput, Decoder, DistributionHook, StopReason};
pub use dist::{VocabDistribution, DIST_SUM_TOLERANCE};
pub use intervene::{gate_step, intervene, GateOutcome};
pub use segment::{label_tokens, Segment, SegmentTracker};
pub use select::{nucleus, select_greedy, select_nucleus};
pub use trace::{read_trace_jsonl, write_trace_jsonl, StepTrace, TraceRecord};
