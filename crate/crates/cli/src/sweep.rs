//! `sweep`: the full (scope, gamma, alpha) grid over one corpus.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use visent::decoding::{DecoderConfig, InterventionScope};
use visent::eval::{chair_metrics, AnnotatedSample, EvalSpan, Lexicon};

use crate::backend::LoadedBackend;
use crate::config::{parse_grid, parse_scope, parse_span, CommonArgs, DecodeArgs, FileConfig, RunSettings};
use crate::failure::{CliResult, Failure, PathContext};
use crate::generate::{create_out_dir, load_corpus, pool, run_corpus};
use crate::report::load_lexicon;

#[derive(Debug, Args, Default)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Comma-separated ascending gamma values in [0, 1].
    #[arg(long)]
    pub gamma_grid: Option<String>,
    /// Comma-separated ascending alpha values in [0, 1].
    #[arg(long)]
    pub alpha_grid: Option<String>,
    /// Comma-separated scopes; all four by default.
    #[arg(long)]
    pub scopes: Option<String>,
    /// full | think | answer
    #[arg(long)]
    pub span: Option<String>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub gamma: f64,
    pub alpha: f64,
    pub scope: String,
    pub chair_s: f64,
    pub chair_i: f64,
    pub divergent_fraction: f64,
    /// Wall-clock throughput; the only column that differs between reruns.
    pub tokens_per_second: f64,
}

fn run_cell(
    backend: &LoadedBackend,
    corpus: &[AnnotatedSample],
    lexicon: &Lexicon,
    span: EvalSpan,
    config: &DecoderConfig,
    eos: Option<usize>,
) -> CliResult<SweepCell> {
    let start = Instant::now();
    let runs = run_corpus(backend, corpus, config, eos)?;
    let elapsed = start.elapsed().as_secs_f64();
    let samples: Vec<AnnotatedSample> = corpus
        .iter()
        .zip(&runs)
        .map(|(s, r)| AnnotatedSample {
            prompt: r.generation.prompt.clone(),
            tokens: r.generation.tokens.clone(),
            ..s.clone()
        })
        .collect();
    let chair = chair_metrics(&samples, lexicon, span, &config.markers)?;
    let steps: usize = runs.iter().map(|r| r.generation.steps).sum();
    let divergent: usize = runs.iter().map(|r| r.generation.divergent_steps).sum();
    Ok(SweepCell {
        gamma: config.gamma,
        alpha: config.alpha,
        scope: config.scope.as_str().to_string(),
        chair_s: chair.chair_s,
        chair_i: chair.chair_i,
        divergent_fraction: if steps == 0 { 0.0 } else { divergent as f64 / steps as f64 },
        tokens_per_second: if elapsed > 0.0 { steps as f64 / elapsed } else { 0.0 },
    })
}

pub fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let settings = RunSettings::resolve(&args.common, &args.decode, &file)?;
    let gammas = parse_grid("--gamma-grid", args.gamma_grid.as_deref(), file.gamma_grid.as_ref(), settings.decoder.gamma)?;
    let alphas = parse_grid("--alpha-grid", args.alpha_grid.as_deref(), file.alpha_grid.as_ref(), settings.decoder.alpha)?;
    let mut scopes: Vec<InterventionScope> = match (&args.scopes, &file.scopes) {
        (Some(s), _) => s.split(',').map(|v| parse_scope(v.trim())).collect::<CliResult<_>>()?,
        (None, Some(v)) => v.iter().map(|s| parse_scope(s)).collect::<CliResult<_>>()?,
        (None, None) => InterventionScope::ALL.to_vec(),
    };
    scopes.sort();
    scopes.dedup();
    if scopes.is_empty() {
        return Err(Failure::Input("--scopes: no scope given".into()));
    }
    let span = parse_span(args.span.as_deref().or(file.span.as_deref()))?;

    let corpus = load_corpus(&settings.corpus)?;
    let lexicon = load_lexicon(args.lexicon.as_deref().or(file.lexicon.as_deref()), &corpus)?
        .ok_or_else(|| Failure::Input("sweep needs an object lexicon (--lexicon or corpus truth objects)".into()))?;
    let backend = LoadedBackend::load(&settings.backend)?;
    create_out_dir(&settings.out)?;

    let mut grid = Vec::new();
    for &scope in &scopes {
        for &gamma in &gammas {
            for &alpha in &alphas {
                grid.push(DecoderConfig { scope, gamma, alpha, ..settings.decoder.clone() });
            }
        }
    }
    let cells: Vec<CliResult<SweepCell>> = pool(settings.jobs)?.install(|| {
        grid.par_iter()
            .map(|cfg| {
                run_cell(&backend, &corpus, &lexicon, span, cfg, settings.eos_token).map_err(|e| {
                    e.context(format_args!(
                        "cell scope={} gamma={} alpha={}",
                        cfg.scope, cfg.gamma, cfg.alpha
                    ))
                })
            })
            .collect()
    });
    let cells: Vec<SweepCell> = cells.into_iter().collect::<CliResult<_>>()?;

    let path = settings.out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).at("output", &path)?;
    for cell in &cells {
        w.serialize(cell).at("output", &path)?;
    }
    w.flush().at("output", &path)?;
    eprintln!("{} cells -> {}", cells.len(), path.display());
    Ok(())
}
