//! The gated decode loop.
//!
//! Per sequence: the visual entropy vector is computed once at prefill. Per
//! step: fetch the next-token distribution, gate it on the visual entropy of
//! its top-1 candidate, apply the penalty if the scope allows, select a token
//! with the configured strategy, and record a [`StepTrace`].

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::AttentionSummary;
use crate::entropy::{visual_entropy_vector, VisualEntropyVector};
use crate::error::{Error, Result};

use super::backend::ModelBackend;
use super::config::{DecoderConfig, Strategy};
use super::dist::VocabDistribution;
use super::intervene::{gate_step, GateOutcome};
use super::segment::{Segment, SegmentTracker};
use super::select::{select_greedy, select_nucleus};
use super::trace::StepTrace;
use super::TokenId;

/// Adjusts the raw next-token distribution before the gate sees it. This is
/// where another mitigation method would plug in.
pub trait DistributionHook: Sync {
    fn adjust(&self, step: usize, dist: VocabDistribution) -> Result<VocabDistribution>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxTokens,
    EndOfSequence,
    /// The backend had nothing more to say; treated as end of sequence.
    ScriptExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    /// Generated tokens, prompt excluded.
    pub tokens: Vec<TokenId>,
    pub traces: Vec<StepTrace>,
    pub stop: StopReason,
    /// The prefill entropy vector used at every step.
    pub entropy: VisualEntropyVector,
    /// Effective distribution of every step, when requested.
    pub distributions: Vec<VocabDistribution>,
    /// Sum of log effective probabilities of the selected tokens.
    pub log_prob: f64,
}

/// Gated decode with the configured strategy.
pub fn decode<B: ModelBackend + ?Sized>(
    backend: &B,
    prompt: &[TokenId],
    config: &DecoderConfig,
) -> Result<DecodeOutput> {
    Decoder::new(config.clone()).decode(backend, prompt)
}

/// Beam search regardless of `config.strategy`; the width is taken from the
/// strategy when it is a beam, otherwise 1.
pub fn beam_search<B: ModelBackend + ?Sized>(
    backend: &B,
    prompt: &[TokenId],
    config: &DecoderConfig,
) -> Result<DecodeOutput> {
    let width = match config.strategy {
        Strategy::Beam { width } => width,
        _ => 1,
    };
    let decoder = Decoder::new(config.clone());
    decoder.validate(backend, prompt)?;
    let entropy = decoder.prefill(backend)?;
    decoder.run_beam(backend, prompt, entropy, width)
}

pub struct Decoder<'h> {
    config: DecoderConfig,
    hook: Option<&'h dyn DistributionHook>,
    stream: u64,
    record_distributions: bool,
}

struct Proposal {
    gate: GateOutcome,
    segment: Segment,
    attention: Option<AttentionSummary>,
}

#[derive(Clone)]
struct Hypothesis {
    tokens: Vec<TokenId>,
    traces: Vec<StepTrace>,
    distributions: Vec<VocabDistribution>,
    tracker: SegmentTracker,
    score: f64,
    stop: Option<StopReason>,
}

impl<'h> Decoder<'h> {
    pub fn new(config: DecoderConfig) -> Self {
        Self {
            config,
            hook: None,
            stream: 0,
            record_distributions: false,
        }
    }

    pub fn with_hook(mut self, hook: &'h dyn DistributionHook) -> Self {
        self.hook = Some(hook);
        self
    }

    /// Selects an independent random stream under the same seed, so that
    /// samples of a corpus do not share nucleus draws.
    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn record_distributions(mut self, on: bool) -> Self {
        self.record_distributions = on;
        self
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn decode<B: ModelBackend + ?Sized>(
        &self,
        backend: &B,
        prompt: &[TokenId],
    ) -> Result<DecodeOutput> {
        self.validate(backend, prompt)?;
        let entropy = self.prefill(backend)?;
        match self.config.strategy {
            Strategy::Beam { width } => self.run_beam(backend, prompt, entropy, width),
            Strategy::Greedy | Strategy::Nucleus { .. } => self.run_single(backend, prompt, entropy),
        }
    }

    fn validate<B: ModelBackend + ?Sized>(&self, backend: &B, prompt: &[TokenId]) -> Result<()> {
        self.config.validate()?;
        if prompt.is_empty() {
            return Err(Error::Config("prompt is empty".into()));
        }
        let vocab = backend.vocab_size();
        let markers = self.config.markers;
        if markers.max_id() >= vocab {
            return Err(Error::Config(format!(
                "segment marker id {} outside backend vocabulary of {vocab}",
                markers.max_id()
            )));
        }
        if let Some(&bad) = prompt.iter().find(|&&t| t >= vocab) {
            return Err(Error::Index {
                index: bad,
                len: vocab,
            });
        }
        Ok(())
    }

    fn prefill<B: ModelBackend + ?Sized>(&self, backend: &B) -> Result<VisualEntropyVector> {
        let activations = backend
            .prefill()
            .and_then(|p| p.into_activations())
            .map_err(|e| backend_error(0, e))?;
        if activations.vocab_size() != backend.vocab_size() {
            return Err(Error::Config(format!(
                "activation matrix covers {} tokens, backend vocabulary is {}",
                activations.vocab_size(),
                backend.vocab_size()
            )));
        }
        visual_entropy_vector(&activations, self.config.entropy_mode)
    }

    /// Fetches and gates the distribution for the next step, or `None` when
    /// the backend's script has run out.
    fn propose<B: ModelBackend + ?Sized>(
        &self,
        backend: &B,
        prompt: &[TokenId],
        generated: &[TokenId],
        tracker: &SegmentTracker,
        entropy: &VisualEntropyVector,
    ) -> Result<Option<Proposal>> {
        let step = generated.len();
        let dist = match backend.next_distribution(prompt, generated) {
            Ok(d) => d,
            Err(Error::ScriptExhausted { .. }) => return Ok(None),
            Err(e) => return Err(backend_error(step, e)),
        };
        let dist = match self.hook {
            Some(hook) => hook.adjust(step, dist)?,
            None => dist,
        };
        let segment = tracker.current();
        let gate = gate_step(&dist, entropy, &self.config, segment).map_err(|e| match e {
            Error::Numeric(msg) => Error::Numeric(format!("step {step}: {msg}")),
            other => backend_error(step, other),
        })?;
        let attention = if self.config.record_attention {
            backend
                .attention_summary(prompt, generated)
                .map_err(|e| backend_error(step, e))?
        } else {
            None
        };
        Ok(Some(Proposal {
            gate,
            segment,
            attention,
        }))
    }

    fn trace(
        step: usize,
        proposal: &Proposal,
        selected: TokenId,
        violation: bool,
        entropy: &VisualEntropyVector,
        fingerprint: &str,
    ) -> StepTrace {
        StepTrace {
            step_index: step,
            candidate_token: proposal.gate.candidate,
            candidate_entropy: proposal.gate.candidate_entropy,
            divergent: proposal.gate.divergent,
            intervened: proposal.gate.intervened,
            selected_token: selected,
            selected_entropy: entropy.values()[selected],
            segment: proposal.segment,
            degenerate_row: proposal.gate.degenerate_row,
            marker_violation: violation,
            entropy_fingerprint: fingerprint.to_string(),
            attention: proposal.attention.clone(),
        }
    }

    fn run_single<B: ModelBackend + ?Sized>(
        &self,
        backend: &B,
        prompt: &[TokenId],
        entropy: VisualEntropyVector,
    ) -> Result<DecodeOutput> {
        let fingerprint = entropy.fingerprint();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.stream);
        let eos = backend.eos_token();

        let mut tracker = SegmentTracker::after(self.config.markers, prompt);
        let mut tokens = Vec::new();
        let mut traces = Vec::new();
        let mut distributions = Vec::new();
        let mut log_prob = 0.0;
        let mut stop = StopReason::MaxTokens;

        for step in 0..self.config.max_tokens {
            let Some(proposal) = self.propose(backend, prompt, &tokens, &tracker, &entropy)? else {
                stop = StopReason::ScriptExhausted;
                break;
            };
            let selected = match self.config.strategy {
                Strategy::Nucleus { top_p } => select_nucleus(&proposal.gate.effective, top_p, &mut rng),
                _ => select_greedy(&proposal.gate.effective),
            };
            log_prob += proposal.gate.effective.prob(selected).ln();
            let violation = tracker.advance(selected);
            traces.push(Self::trace(step, &proposal, selected, violation, &entropy, &fingerprint));
            if self.record_distributions {
                distributions.push(proposal.gate.effective);
            }
            tokens.push(selected);
            if Some(selected) == eos {
                stop = StopReason::EndOfSequence;
                break;
            }
        }

        Ok(DecodeOutput {
            tokens,
            traces,
            stop,
            entropy,
            distributions,
            log_prob,
        })
    }

    /// Beam search scored by the summed log effective probability. Each
    /// hypothesis carries its own segment state and is gated independently.
    fn run_beam<B: ModelBackend + ?Sized>(
        &self,
        backend: &B,
        prompt: &[TokenId],
        entropy: VisualEntropyVector,
        width: usize,
    ) -> Result<DecodeOutput> {
        let fingerprint = entropy.fingerprint();
        let eos = backend.eos_token();

        let mut alive = vec![Hypothesis {
            tokens: Vec::new(),
            traces: Vec::new(),
            distributions: Vec::new(),
            tracker: SegmentTracker::after(self.config.markers, prompt),
            score: 0.0,
            stop: None,
        }];
        let mut finished: Vec<Hypothesis> = Vec::new();

        for step in 0..self.config.max_tokens {
            // (score, hypothesis, prob, token)
            let mut candidates: Vec<(f64, usize, f64, TokenId)> = Vec::new();
            let mut proposals: Vec<Option<Proposal>> = Vec::with_capacity(alive.len());
            for (h, hyp) in alive.iter_mut().enumerate() {
                let proposal = self.propose(backend, prompt, &hyp.tokens, &hyp.tracker, &entropy)?;
                match &proposal {
                    None => hyp.stop = Some(StopReason::ScriptExhausted),
                    Some(p) => {
                        for (tok, &prob) in p.gate.effective.probs().iter().enumerate() {
                            if prob > 0.0 {
                                candidates.push((hyp.score + prob.ln(), h, prob, tok));
                            }
                        }
                    }
                }
                proposals.push(proposal);
            }
            finished.extend(alive.iter().filter(|h| h.stop.is_some()).cloned());

            candidates.sort_by(|a, b| {
                b.0.total_cmp(&a.0)
                    .then(a.1.cmp(&b.1))
                    .then(b.2.total_cmp(&a.2))
                    .then(a.3.cmp(&b.3))
            });
            candidates.truncate(width);

            let mut next = Vec::with_capacity(candidates.len());
            for &(score, h, _, tok) in &candidates {
                let parent = &alive[h];
                let proposal = proposals[h].as_ref().expect("candidates come from live proposals");
                let mut child = parent.clone();
                let violation = child.tracker.advance(tok);
                child
                    .traces
                    .push(Self::trace(step, proposal, tok, violation, &entropy, &fingerprint));
                if self.record_distributions {
                    child.distributions.push(proposal.gate.effective.clone());
                }
                child.tokens.push(tok);
                child.score = score;
                if Some(tok) == eos {
                    child.stop = Some(StopReason::EndOfSequence);
                    finished.push(child);
                } else {
                    next.push(child);
                }
            }
            alive = next;

            if alive.is_empty() {
                break;
            }
            // log probabilities only decrease, so once enough hypotheses are
            // done and the best of them beats every live one, nothing can
            // overtake it.
            let best_finished = finished.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
            let best_alive = alive.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
            if finished.len() >= width && best_finished >= best_alive {
                break;
            }
        }
        for mut hyp in alive {
            hyp.stop.get_or_insert(StopReason::MaxTokens);
            finished.push(hyp);
        }

        let best = finished
            .into_iter()
            .min_by(|a, b| match b.score.total_cmp(&a.score) {
                Ordering::Equal => a.tokens.cmp(&b.tokens),
                other => other,
            })
            .expect("beam search keeps at least one hypothesis");

        Ok(DecodeOutput {
            tokens: best.tokens,
            traces: best.traces,
            stop: best.stop.unwrap_or(StopReason::MaxTokens),
            entropy,
            distributions: best.distributions,
            log_prob: best.score,
        })
    }
}

fn backend_error(step: usize, e: Error) -> Error {
    match e {
        e @ Error::Backend { .. } => e,
        other => Error::Backend {
            step,
            source: Box::new(other),
        },
    }
}
