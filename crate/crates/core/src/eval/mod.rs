//! Hallucination metrics and the statistical analyses run over decoded
//! corpora.

mod attention;
mod chair;
mod correlation;
mod corpus;
mod logistic;
mod pope;
mod segments;

pub use attention::{attention_ratio, AttentionRatio};
pub use chair::{
    chair_metrics, mentions_in, mode_hallucination_rates, EvalSpan, HallucinationReport, Lexicon,
    Mentions, ModeRates, SampleRates,
};
pub use correlation::{hallucination_correlation, pearson, rate_pairs, CorrelationReport};
pub use corpus::{
    read_corpus_jsonl, write_corpus_jsonl, AnnotatedSample, PopeLabel, SegmentAnnotation,
    ThinkingMode, YesNo,
};
pub use logistic::{
    logistic_fit, segment_entropy_points, LogisticReport, CLASSIFICATION_THRESHOLD, LL_TOLERANCE,
    MAX_ITERATIONS, SLOPE_CAP,
};
pub use pope::{answer_prediction, pope_metrics, PopeReport};
pub use segments::{split_segments, SegmentSplit};
