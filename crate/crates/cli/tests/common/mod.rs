//! Fixture builders shared by the CLI test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use visent::backends::{entropy_profile_matrix, PrefixEntry, ScriptedBackend};
use visent::decoding::{TokenId, VocabDistribution};
use visent::eval::{write_corpus_jsonl, AnnotatedSample, PopeLabel, SegmentAnnotation};

pub const THINK: TokenId = 1;
pub const ANSWER: TokenId = 3;

pub fn visent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_visent"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub fn sample(id: &str, prompt: Vec<TokenId>, tokens: Vec<TokenId>, display: &[(TokenId, &str)], truth: &[&str]) -> AnnotatedSample {
    AnnotatedSample {
        id: id.into(),
        tokens,
        prompt,
        display: display.iter().map(|(t, s)| (*t, s.to_string())).collect(),
        truth_objects: truth.iter().map(|s| s.to_string()).collect(),
        synonyms: BTreeMap::new(),
        segments: vec![],
        pope: None,
        visual: None,
    }
}

pub fn write_corpus(dir: &Path, corpus: &[AnnotatedSample]) -> PathBuf {
    let path = dir.join("corpus.jsonl");
    write_corpus_jsonl(std::fs::File::create(&path).unwrap(), corpus).unwrap();
    path
}

pub fn write_backend(dir: &Path, backend: &ScriptedBackend) -> PathBuf {
    let path = dir.join("script.json");
    std::fs::write(&path, serde_json::to_string(backend).unwrap()).unwrap();
    path
}

pub fn write_lexicon(dir: &Path, words: &[&str]) -> PathBuf {
    let path = dir.join("lexicon.json");
    std::fs::write(&path, serde_json::to_string(words).unwrap()).unwrap();
    path
}

fn peaked(vocab: usize, top: TokenId) -> VocabDistribution {
    let mut w = vec![0.01; vocab];
    w[top] = 1.0;
    VocabDistribution::from_weights(w).unwrap()
}

/// Scripted backend that replays each corpus response after its prompt.
pub fn replay_backend(vocab: usize, corpus: &[AnnotatedSample], entropy: f64) -> ScriptedBackend {
    let mut b = ScriptedBackend::new(entropy_profile_matrix(&vec![entropy; vocab], 0).unwrap());
    for s in corpus {
        for i in 0..s.tokens.len() {
            let prefix: Vec<TokenId> = s.prompt.iter().chain(&s.tokens[..i]).copied().collect();
            b = b.with_prefix(prefix, peaked(vocab, s.tokens[i])).unwrap();
        }
    }
    b
}

/// Two responses with four object mentions between them, one hallucinated:
/// CHAIR_I = 1/3, CHAIR_S = 1/2.
pub fn chair_corpus() -> Vec<AnnotatedSample> {
    let display = [(4, "dog"), (5, "cat"), (6, "car"), (7, "a"), (THINK, "<think>"), (ANSWER, "<answer>")];
    vec![
        sample("a", vec![THINK, 20], vec![7, 4, 7, 5, ANSWER, 4], &display, &["dog"]),
        sample("b", vec![THINK, 21], vec![7, 6, ANSWER, 6], &display, &["car"]),
    ]
}

pub const CHAIR_LEXICON: [&str; 3] = ["dog", "cat", "car"];

pub fn chair_fixture(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let corpus = chair_corpus();
    let backend = replay_backend(24, &corpus, 0.2);
    (
        write_backend(dir, &backend),
        write_corpus(dir, &corpus),
        write_lexicon(dir, &CHAIR_LEXICON),
    )
}

// Tokens of the scope-ablation corpus.
const DOG: TokenId = 4; // grounded object, entropy 0.3
const FILLER: TokenId = 5; // "a", entropy 0.0
const CAT: TokenId = 6; // hallucinated object, entropy 0.9
const DOG2: TokenId = 7; // grounded object, entropy 0.1
const BIRD: TokenId = 8; // hallucinated object, entropy 0.2
pub const SCOPE_PROMPT_BASE: TokenId = 10;

fn close_call(vocab: usize, first: TokenId, second: TokenId) -> VocabDistribution {
    let mut w = vec![0.05 / (vocab - 2) as f64; vocab];
    w[first] = 0.5;
    w[second] = 0.45;
    VocabDistribution::new(w).unwrap()
}

/// Corpus in which the penalty only helps at high-entropy steps.
///
/// Kind A opens with a divergent close call between CAT and DOG2; the
/// penalty picks DOG2. Kind B opens with a normal close call between DOG and
/// the filler word; the penalty picks the filler, after which the script
/// forces BIRD, while the DOG branch reaches the same divergent close call
/// as kind A. Every response hallucinates without intervention.
pub fn scope_fixture(dir: &Path, kind_a: usize, kind_b: usize) -> (PathBuf, PathBuf, PathBuf) {
    let n = kind_a + kind_b;
    let vocab = SCOPE_PROMPT_BASE + n;
    let mut targets = vec![0.5; vocab];
    targets[..9].copy_from_slice(&[0.0, 0.2, 0.2, 0.2, 0.3, 0.0, 0.9, 0.1, 0.2]);
    let mut b = ScriptedBackend::new(entropy_profile_matrix(&targets, 0).unwrap());
    let display = [
        (DOG, "dog"), (FILLER, "a"), (CAT, "cat"), (DOG2, "dog"), (BIRD, "bird"),
        (THINK, "<think>"), (ANSWER, "<answer>"),
    ];
    let mut corpus = Vec::new();
    let mut add = |b: ScriptedBackend, prefix: Vec<TokenId>, d: VocabDistribution| {
        b.with_prefix_entry(PrefixEntry { prefix, dist: d, attention: None }).unwrap()
    };
    let tail = |b: ScriptedBackend, prefix: Vec<TokenId>, add: &mut dyn FnMut(ScriptedBackend, Vec<TokenId>, VocabDistribution) -> ScriptedBackend| {
        let b = add(b, prefix.clone(), peaked(vocab, ANSWER));
        let mut after = prefix;
        after.push(ANSWER);
        add(b, after, peaked(vocab, DOG))
    };
    for k in 0..n {
        let prompt = vec![THINK, SCOPE_PROMPT_BASE + k];
        let with = |extra: &[TokenId]| -> Vec<TokenId> { prompt.iter().chain(extra).copied().collect() };
        if k < kind_a {
            b = add(b, prompt.clone(), close_call(vocab, CAT, DOG2));
            b = tail(b, with(&[CAT]), &mut add);
            b = tail(b, with(&[DOG2]), &mut add);
        } else {
            b = add(b, prompt.clone(), close_call(vocab, DOG, FILLER));
            b = add(b, with(&[DOG]), close_call(vocab, CAT, DOG2));
            b = tail(b, with(&[DOG, CAT]), &mut add);
            b = tail(b, with(&[DOG, DOG2]), &mut add);
            b = add(b, with(&[FILLER]), peaked(vocab, BIRD));
            b = tail(b, with(&[FILLER, BIRD]), &mut add);
        }
        corpus.push(sample(&format!("s{k:03}"), prompt, vec![], &display, &["dog"]));
    }
    (
        write_backend(dir, &b),
        write_corpus(dir, &corpus),
        write_lexicon(dir, &["dog", "cat", "bird"]),
    )
}

/// Corpus with only yes/no probes: two "yes" items answered yes and one
/// "no" item answered yes.
pub fn pope_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    use visent::eval::YesNo;
    let display = [(4, "yes"), (5, "no"), (THINK, "<think>"), (ANSWER, "<answer>")];
    let mut corpus = vec![
        sample("q1", vec![THINK, 10], vec![ANSWER, 4], &display, &[]),
        sample("q2", vec![THINK, 11], vec![ANSWER, 4], &display, &[]),
        sample("q3", vec![THINK, 12], vec![ANSWER, 4], &display, &[]),
    ];
    for (s, e) in corpus.iter_mut().zip([YesNo::Yes, YesNo::Yes, YesNo::No]) {
        s.pope = Some(PopeLabel { expected: e, predicted: None });
    }
    let backend = replay_backend(16, &corpus, 0.2);
    (write_backend(dir, &backend), write_corpus(dir, &corpus))
}

/// Segment labels covering the whole thinking span of a response.
pub fn annotate(sample: &mut AnnotatedSample, spans: &[(usize, usize, visent::eval::ThinkingMode)]) {
    sample.segments = spans
        .iter()
        .map(|&(start, end, mode)| SegmentAnnotation { start, end, mode })
        .collect();
}

/// Responses whose thinking and answer rates coincide, with hallucinated
/// objects confined to divergent-labelled segments.
pub fn analysis_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let display = [(4, "dog"), (5, "cat"), (7, "a"), (THINK, "<think>"), (ANSWER, "<answer>")];
    let mut corpus = Vec::new();
    for k in 0..8 {
        let id = format!("r{k}");
        let prompt = vec![THINK, 10 + k];
        let mut s = if k % 2 == 0 {
            let mut s = sample(&id, prompt, vec![7, 4, 7, 4, 7, 4, ANSWER, 4], &display, &["dog"]);
            annotate(&mut s, &[(0, 6, visent::eval::ThinkingMode::Normal)]);
            s
        } else {
            let mut s = sample(&id, prompt, vec![7, 4, 7, 5, 5, 5, ANSWER, 4, 5], &display, &["dog"]);
            annotate(&mut s, &[(0, 3, visent::eval::ThinkingMode::Normal), (3, 6, visent::eval::ThinkingMode::Divergent)]);
            s
        };
        s.truth_objects = vec!["dog".into()];
        corpus.push(s);
    }
    let mut targets = vec![0.5; 20];
    targets[4] = 0.1;
    targets[5] = 0.9;
    targets[7] = 0.2;
    let mut b = visent::backends::ScriptedBackend::new(
        visent::backends::entropy_profile_matrix(&targets, 0).unwrap(),
    );
    for s in &corpus {
        for i in 0..s.tokens.len() {
            let prefix: Vec<_> = s.prompt.iter().chain(&s.tokens[..i]).copied().collect();
            let d = visent::decoding::VocabDistribution::one_hot(20, s.tokens[i]).unwrap();
            b = b.with_prefix(prefix, d).unwrap();
        }
    }
    (write_backend(dir, &b), write_corpus(dir, &corpus))
}
