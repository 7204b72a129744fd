use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use visent::decoding::{write_trace_jsonl, DecoderConfig, StepTrace, StopReason, TokenId};
use visent::eval::{read_corpus_jsonl, AnnotatedSample};

use crate::backend::{prompt_for, LoadedBackend};
use crate::config::RunSettings;
use crate::failure::{CliResult, Failure, PathContext};

/// One line of `generations.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub id: String,
    pub prompt: Vec<TokenId>,
    pub tokens: Vec<TokenId>,
    pub text: String,
    pub stop: StopReason,
    pub steps: usize,
    pub divergent_steps: usize,
    pub intervened_steps: usize,
    pub log_prob: f64,
}

pub struct SampleRun {
    pub generation: Generation,
    pub traces: Vec<StepTrace>,
}

pub fn load_corpus(path: &Path) -> CliResult<Vec<AnnotatedSample>> {
    let file = File::open(path).at("--corpus", path)?;
    let corpus = read_corpus_jsonl(BufReader::new(file)).at("--corpus", path)?;
    if corpus.is_empty() {
        return Err(Failure::Input(format!("--corpus '{}': no samples", path.display())));
    }
    Ok(corpus)
}

pub fn pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))
}

/// Decodes every sample. Results come back in corpus order whatever the
/// thread count; the first failing sample in that order is reported.
pub fn run_corpus(
    backend: &LoadedBackend,
    corpus: &[AnnotatedSample],
    config: &DecoderConfig,
    eos: Option<TokenId>,
) -> CliResult<Vec<SampleRun>> {
    let results: Vec<CliResult<SampleRun>> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, sample)| {
            let out = backend
                .decode(sample, i, config, eos)
                .map_err(|e| Failure::from(e).context(format_args!("sample '{}'", sample.id)))?;
            let count = |f: fn(&StepTrace) -> bool| out.traces.iter().filter(|t| f(t)).count();
            let generation = Generation {
                id: sample.id.clone(),
                prompt: prompt_for(sample, config),
                text: sample.render(&out.tokens),
                stop: out.stop,
                steps: out.traces.len(),
                divergent_steps: count(|t| t.divergent),
                intervened_steps: count(|t| t.intervened),
                log_prob: out.log_prob,
                tokens: out.tokens,
            };
            Ok(SampleRun { generation, traces: out.traces })
        })
        .collect();
    results.into_iter().collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut out = BufWriter::new(File::create(path).at("output", path)?);
    for row in rows {
        serde_json::to_writer(&mut out, row).map_err(|e| Failure::Runtime(e.to_string()))?;
        out.write_all(b"\n").at("output", path)?;
    }
    out.flush().at("output", path)
}

pub fn write_runs(out_dir: &Path, runs: &[SampleRun]) -> CliResult<()> {
    let trace_path = out_dir.join("traces.jsonl");
    let mut traces = BufWriter::new(File::create(&trace_path).at("output", &trace_path)?);
    for run in runs {
        write_trace_jsonl(&mut traces, &run.generation.id, &run.traces).at("output", &trace_path)?;
    }
    traces.flush().at("output", &trace_path)?;
    let gens: Vec<&Generation> = runs.iter().map(|r| &r.generation).collect();
    write_jsonl(&out_dir.join("generations.jsonl"), &gens)
}

pub fn create_out_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).at("--out", dir)
}

pub fn cmd_generate(settings: &RunSettings) -> CliResult<()> {
    let corpus = load_corpus(&settings.corpus)?;
    let backend = LoadedBackend::load(&settings.backend)?;
    create_out_dir(&settings.out)?;
    let runs = pool(settings.jobs)?
        .install(|| run_corpus(&backend, &corpus, &settings.decoder, settings.eos_token))?;
    write_runs(&settings.out, &runs)?;
    let tokens: usize = runs.iter().map(|r| r.generation.steps).sum();
    eprintln!(
        "generated {} samples, {tokens} tokens -> {}",
        runs.len(),
        settings.out.display()
    );
    Ok(())
}

pub fn read_generations(path: &Path) -> CliResult<Vec<Generation>> {
    let text = fs::read_to_string(path).at("--generations", path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                Failure::Input(format!("--generations '{}' line {}: {e}", path.display(), i + 1))
            })
        })
        .collect()
}
