use std::sync::atomic::{AtomicUsize, Ordering};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use visent::backends::{entropy_profile_matrix, AttentionSummary, ScriptedBackend};
use visent::decoding::{
    beam_search, decode, DecoderConfig, Decoder, DistributionHook, InterventionScope,
    ModelBackend, Segment, StopReason, Strategy, TokenId, VisualPrefill, VocabDistribution,
};
use visent::entropy::{visual_entropy_vector, EntropyMode, VisualActivationMatrix};
use visent::{Error, Result};

// Token layout shared by the hand-built scripts.
const THINK: TokenId = 1;
const ANSWER: TokenId = 3;
const HIGH: TokenId = 4; // entropy 0.9
const LOW: TokenId = 5; // entropy 0.1
const FILL: TokenId = 6; // entropy 0.2
const WORD: TokenId = 7; // entropy 0.3

fn profile() -> VisualActivationMatrix {
    entropy_profile_matrix(&[0.0, 0.2, 0.2, 0.2, 0.9, 0.1, 0.2, 0.3], 0).unwrap()
}

fn peaked(top: TokenId) -> VocabDistribution {
    let mut w = vec![0.01; 8];
    w[top] = 0.93;
    VocabDistribution::from_weights(w).unwrap()
}

/// Step 3 offers HIGH at 0.5 against LOW at 0.45.
fn flip_script() -> ScriptedBackend {
    let mut close = vec![0.05 / 6.0; 8];
    close[HIGH] = 0.5;
    close[LOW] = 0.45;
    ScriptedBackend::new(profile())
        .with_steps(vec![
            peaked(FILL),
            peaked(WORD),
            peaked(FILL),
            VocabDistribution::new(close).unwrap(),
            peaked(ANSWER),
            peaked(WORD),
        ])
        .unwrap()
}

#[test]
fn argmax_flips_at_the_divergent_step() {
    let cfg = DecoderConfig { gamma: 0.5, alpha: 0.75, max_tokens: 10, ..Default::default() };
    let out = decode(&flip_script(), &[THINK], &cfg).unwrap();
    assert_eq!(out.tokens, vec![FILL, WORD, FILL, LOW, ANSWER, WORD]);
    assert_eq!(out.stop, StopReason::ScriptExhausted);

    let t = &out.traces;
    assert_eq!(t.len(), 6);
    let flags: Vec<(bool, bool)> = t.iter().map(|s| (s.divergent, s.intervened)).collect();
    assert_eq!(
        flags,
        vec![(false, false), (false, false), (false, false), (true, true), (false, false), (false, false)]
    );
    assert_eq!(t[3].candidate_token, HIGH);
    assert_eq!(t[3].selected_token, LOW);
    assert!((t[3].candidate_entropy - 0.9).abs() < 1e-12);
    assert!((t[3].selected_entropy - 0.1).abs() < 1e-12);
    let segments: Vec<Segment> = t.iter().map(|s| s.segment).collect();
    assert_eq!(segments[..5], [Segment::Think; 5]);
    assert_eq!(segments[5], Segment::Answer);
}

#[test]
fn without_intervention_the_baseline_chain_is_kept() {
    let cfg = DecoderConfig { scope: InterventionScope::None, max_tokens: 10, ..Default::default() };
    let out = decode(&flip_script(), &[THINK], &cfg).unwrap();
    assert_eq!(out.tokens, vec![FILL, WORD, FILL, HIGH, ANSWER, WORD]);
    assert!(out.traces[3].divergent);
    assert!(out.traces.iter().all(|t| !t.intervened));
}

#[test]
fn gate_is_strict_at_gamma() {
    let backend = flip_script();
    let e = visual_entropy_vector(backend.activations(), EntropyMode::Normalized).unwrap();
    let at = e.values()[HIGH];
    let cfg = DecoderConfig { gamma: at, max_tokens: 10, ..Default::default() };
    let out = decode(&backend, &[THINK], &cfg).unwrap();
    assert!(!out.traces[3].divergent);
    assert_eq!(out.tokens[3], HIGH);

    let below = f64::from_bits(at.to_bits() - 1);
    let cfg = DecoderConfig { gamma: below, ..cfg };
    let out = decode(&backend, &[THINK], &cfg).unwrap();
    assert!(out.traces[3].divergent);
    assert_eq!(out.tokens[3], LOW);
}

#[test]
fn answer_segment_is_never_touched() {
    // Same close call, but after the answer marker.
    let mut close = vec![0.05 / 6.0; 8];
    close[HIGH] = 0.5;
    close[LOW] = 0.45;
    let backend = ScriptedBackend::new(profile())
        .with_steps(vec![peaked(ANSWER), VocabDistribution::new(close).unwrap()])
        .unwrap();
    for scope in InterventionScope::ALL {
        let cfg = DecoderConfig { scope, ..Default::default() };
        let out = decode(&backend, &[THINK], &cfg).unwrap();
        assert_eq!(out.tokens, vec![ANSWER, HIGH], "{scope}");
        assert!(!out.traces[1].intervened);
    }
}

#[test]
fn uniform_rows_make_every_step_divergent() {
    let col = vec![1.0 / 8.0; 8];
    let mat = VisualActivationMatrix::from_columns(&[col.clone(), col]).unwrap();
    let backend = ScriptedBackend::new(mat)
        .with_steps(vec![peaked(FILL), peaked(WORD), peaked(FILL)])
        .unwrap();
    let cfg = DecoderConfig { gamma: 0.99, ..Default::default() };
    let out = decode(&backend, &[THINK], &cfg).unwrap();
    assert!(out.traces.iter().all(|t| t.divergent && t.candidate_entropy == 1.0));
    let cfg = DecoderConfig { gamma: 1.0, ..cfg };
    let out = decode(&backend, &[THINK], &cfg).unwrap();
    assert!(out.traces.iter().all(|t| !t.divergent));
}

#[test]
fn one_hot_step_fixes_first_token() {
    let backend = ScriptedBackend::new(profile())
        .with_steps(vec![VocabDistribution::one_hot(8, WORD).unwrap()])
        .unwrap();
    for strategy in [Strategy::Greedy, Strategy::Nucleus { top_p: 0.9 }, Strategy::Beam { width: 3 }] {
        let cfg = DecoderConfig { strategy, ..Default::default() };
        assert_eq!(decode(&backend, &[THINK], &cfg).unwrap().tokens, vec![WORD]);
    }
}

#[test]
fn max_tokens_and_eos_stop_decoding() {
    let backend = flip_script();
    let cfg = DecoderConfig { max_tokens: 2, ..Default::default() };
    let out = decode(&backend, &[THINK], &cfg).unwrap();
    assert_eq!(out.tokens.len(), 2);
    assert_eq!(out.stop, StopReason::MaxTokens);

    let backend = flip_script().with_eos(ANSWER).unwrap();
    let out = decode(&backend, &[THINK], &DecoderConfig::default()).unwrap();
    assert_eq!(out.tokens.last(), Some(&ANSWER));
    assert_eq!(out.stop, StopReason::EndOfSequence);
}

#[test]
fn marker_violation_is_recorded_not_fatal() {
    let backend = ScriptedBackend::new(profile())
        .with_steps(vec![peaked(ANSWER), peaked(THINK), peaked(WORD)])
        .unwrap();
    let out = decode(&backend, &[THINK], &DecoderConfig::default()).unwrap();
    let v: Vec<bool> = out.traces.iter().map(|t| t.marker_violation).collect();
    assert_eq!(v, vec![false, true, false]);
    assert_eq!(out.tokens.len(), 3);
}

#[test]
fn invalid_inputs_are_rejected() {
    let backend = flip_script();
    assert!(matches!(decode(&backend, &[], &DecoderConfig::default()), Err(Error::Config(_))));
    assert!(matches!(decode(&backend, &[99], &DecoderConfig::default()), Err(Error::Index { .. })));
    let mut cfg = DecoderConfig::default();
    cfg.markers.answer_open = 8;
    assert!(matches!(decode(&backend, &[THINK], &cfg), Err(Error::Config(_))));
    let cfg = DecoderConfig { alpha: 1.5, ..Default::default() };
    assert!(matches!(decode(&backend, &[THINK], &cfg), Err(Error::Config(_))));
}

/// Counts prefills and fails at a chosen step.
struct Probe {
    inner: ScriptedBackend,
    prefills: AtomicUsize,
    fail_at: Option<usize>,
}

impl ModelBackend for Probe {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }
    fn prefill(&self) -> Result<VisualPrefill> {
        self.prefills.fetch_add(1, Ordering::SeqCst);
        self.inner.prefill()
    }
    fn next_distribution(&self, prompt: &[TokenId], generated: &[TokenId]) -> Result<VocabDistribution> {
        if Some(generated.len()) == self.fail_at {
            return Err(Error::Numeric("probe failure".into()));
        }
        self.inner.next_distribution(prompt, generated)
    }
}

#[test]
fn prefill_happens_once_per_sequence() {
    for strategy in [Strategy::Greedy, Strategy::Nucleus { top_p: 0.8 }, Strategy::Beam { width: 3 }] {
        let probe = Probe { inner: flip_script(), prefills: AtomicUsize::new(0), fail_at: None };
        let cfg = DecoderConfig { strategy, ..Default::default() };
        let out = decode(&probe, &[THINK], &cfg).unwrap();
        assert_eq!(probe.prefills.load(Ordering::SeqCst), 1);
        let fp = out.entropy.fingerprint();
        assert!(out.traces.iter().all(|t| t.entropy_fingerprint == fp));
    }
}

#[test]
fn backend_failure_carries_the_step() {
    let probe = Probe { inner: flip_script(), prefills: AtomicUsize::new(0), fail_at: Some(2) };
    match decode(&probe, &[THINK], &DecoderConfig::default()) {
        Err(Error::Backend { step: 2, .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

struct Suppress(TokenId);

impl DistributionHook for Suppress {
    fn adjust(&self, _step: usize, dist: VocabDistribution) -> Result<VocabDistribution> {
        let mut w = dist.into_inner();
        w[self.0] = 0.0;
        VocabDistribution::from_weights(w)
    }
}

#[test]
fn hook_runs_before_the_gate() {
    let hook = Suppress(FILL);
    let cfg = DecoderConfig { max_tokens: 1, ..Default::default() };
    let out = Decoder::new(cfg).with_hook(&hook).decode(&flip_script(), &[THINK]).unwrap();
    assert_ne!(out.tokens[0], FILL);
    assert_ne!(out.traces[0].candidate_token, FILL);
}

#[test]
fn prefix_entries_take_precedence_and_carry_attention() {
    let att = AttentionSummary { image: 0.25, think: 0.5, other: 0.25, residual: 0.0 };
    let backend = ScriptedBackend::new(profile())
        .with_steps(vec![peaked(FILL), peaked(FILL)])
        .unwrap()
        .with_prefix_entry(visent::backends::PrefixEntry {
            prefix: vec![THINK, FILL],
            dist: peaked(WORD),
            attention: Some(att.clone()),
        })
        .unwrap();
    let cfg = DecoderConfig { record_attention: true, ..Default::default() };
    let out = decode(&backend, &[THINK], &cfg).unwrap();
    assert_eq!(out.tokens, vec![FILL, WORD]);
    assert_eq!(out.traces[1].attention, Some(att));
    assert_eq!(out.traces[0].attention, None);
}

#[test]
fn nucleus_frequencies_match_the_distribution() {
    let dist = VocabDistribution::new(vec![0.1, 0.2, 0.3, 0.15, 0.25]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 100_000;
    let mut counts = [0usize; 5];
    for _ in 0..n {
        counts[visent::decoding::select_nucleus(&dist, 1.0, &mut rng)] += 1;
    }
    for (tok, &c) in counts.iter().enumerate() {
        let p = dist.prob(tok);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let freq = c as f64 / n as f64;
        assert!((freq - p).abs() < 3.0 * se, "token {tok}: {freq} vs {p}");
    }
}

#[test]
fn nucleus_is_reproducible_per_seed_and_stream() {
    let backend = flip_script();
    let cfg = DecoderConfig { strategy: Strategy::Nucleus { top_p: 1.0 }, seed: 5, ..Default::default() };
    let a = Decoder::new(cfg.clone()).with_stream(3).decode(&backend, &[THINK]).unwrap();
    let b = Decoder::new(cfg).with_stream(3).decode(&backend, &[THINK]).unwrap();
    assert_eq!(a.tokens, b.tokens);
    assert_eq!(a.traces, b.traces);
}

fn random_backend(seed: u64) -> (ScriptedBackend, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = rng.random_range(5..10);
    let targets: Vec<f64> = (0..vocab).map(|_| rng.random::<f64>()).collect();
    let mat = entropy_profile_matrix(&targets, 0).unwrap();
    let steps = rng.random_range(1..8);
    let dists = (0..steps)
        .map(|_| {
            let mut w: Vec<f64> = (0..vocab)
                .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random::<f64>() + 1e-3 })
                .collect();
            w[rng.random_range(0..vocab)] += 0.5;
            VocabDistribution::from_weights(w).unwrap()
        })
        .collect();
    (ScriptedBackend::new(mat).with_steps(dists).unwrap(), vocab)
}

fn scope_strategy() -> impl proptest::strategy::Strategy<Value = InterventionScope> {
    prop::sample::select(InterventionScope::ALL.to_vec())
}

proptest! {
    #[test]
    fn width_one_beam_equals_greedy(seed in any::<u64>(), gamma in 0.0f64..=1.0, alpha in 0.0f64..=1.0,
                                    scope in scope_strategy(), max_tokens in 1usize..10) {
        let (backend, _) = random_backend(seed);
        let base = DecoderConfig { gamma, alpha, scope, max_tokens, ..Default::default() };
        let greedy = Decoder::new(base.clone()).record_distributions(true).decode(&backend, &[THINK]).unwrap();
        let beam_cfg = DecoderConfig { strategy: Strategy::Beam { width: 1 }, ..base };
        let beam = Decoder::new(beam_cfg.clone()).record_distributions(true).decode(&backend, &[THINK]).unwrap();
        prop_assert_eq!(&greedy.tokens, &beam.tokens);
        prop_assert_eq!(&greedy.traces, &beam.traces);
        prop_assert_eq!(&greedy.distributions, &beam.distributions);
        prop_assert_eq!(greedy.log_prob.to_bits(), beam.log_prob.to_bits());
        let direct = beam_search(&backend, &[THINK], &beam_cfg).unwrap();
        prop_assert_eq!(&direct.tokens, &beam.tokens);
    }

    #[test]
    fn no_scope_is_baseline(seed in any::<u64>(), gamma in 0.0f64..=1.0, alpha in 0.0f64..=1.0) {
        let (backend, _) = random_backend(seed);
        let cfg = DecoderConfig { gamma, alpha, scope: InterventionScope::None, ..Default::default() };
        let zero = DecoderConfig { alpha: 0.0, scope: InterventionScope::AllThinking, ..cfg.clone() };
        let a = Decoder::new(cfg).record_distributions(true).decode(&backend, &[THINK]).unwrap();
        let b = Decoder::new(zero).record_distributions(true).decode(&backend, &[THINK]).unwrap();
        prop_assert_eq!(&a.tokens, &b.tokens);
        prop_assert_eq!(&a.distributions, &b.distributions);
        for (t, d) in a.traces.iter().zip(&a.distributions) {
            prop_assert_eq!(d, &backend.scripted_next(&[THINK], &a.tokens[..t.step_index]).unwrap());
        }
    }

    #[test]
    fn traces_respect_invariants_for_every_strategy(seed in any::<u64>(), gamma in 0.0f64..=1.0,
                                                    alpha in 0.0f64..=1.0, scope in scope_strategy(),
                                                    which in 0usize..3) {
        let (backend, _) = random_backend(seed);
        let strategy = [Strategy::Greedy, Strategy::Nucleus { top_p: 0.7 }, Strategy::Beam { width: 3 }][which];
        let cfg = DecoderConfig { gamma, alpha, scope, strategy, seed, ..Default::default() };
        let out = Decoder::new(cfg).record_distributions(true).decode(&backend, &[THINK]).unwrap();
        prop_assert_eq!(out.traces.len(), out.tokens.len());
        for (t, d) in out.traces.iter().zip(&out.distributions) {
            prop_assert_eq!(t.divergent, t.candidate_entropy > gamma);
            prop_assert!(!t.intervened || scope.permits(t.divergent, t.segment));
            let s: f64 = d.probs().iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-9);
            prop_assert!(d.prob(t.selected_token) > 0.0);
        }
    }
}
