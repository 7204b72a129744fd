//! Experiment configuration: an optional JSON file overlaid by flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;
use visent::decoding::{DecoderConfig, InterventionScope, SegmentMarkers, Strategy, TokenId};
use visent::entropy::EntropyMode;
use visent::eval::EvalSpan;

use crate::failure::{CliResult, Failure, PathContext};

/// Everything a config file may set. Unknown keys are rejected so that a
/// typo is reported instead of silently ignored.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub backend: Option<String>,
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub generations: Option<PathBuf>,
    pub traces: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub scope: Option<String>,
    pub strategy: Option<String>,
    pub top_p: Option<f64>,
    pub beam_width: Option<usize>,
    pub seed: Option<u64>,
    pub max_tokens: Option<usize>,
    pub entropy_mode: Option<String>,
    pub jobs: Option<usize>,
    pub gamma_grid: Option<Vec<f64>>,
    pub alpha_grid: Option<Vec<f64>>,
    pub scopes: Option<Vec<String>>,
    pub span: Option<String>,
    pub markers: Option<SegmentMarkers>,
    pub record_attention: Option<bool>,
    pub eos_token: Option<TokenId>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).at("--config", path)?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::Input(format!("--config '{}': {e}", path.display())))
    }
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus JSONL.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct DecodeArgs {
    /// `scripted:<path>` or `tiny:<path>`.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// divergent-only | all-thinking | normal-only | none
    #[arg(long)]
    pub scope: Option<String>,
    /// greedy | nucleus | beam
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub beam_width: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    /// normalized | verbatim
    #[arg(long)]
    pub entropy_mode: Option<String>,
    /// Record per-step attention summaries in traces.
    #[arg(long)]
    pub record_attention: bool,
    /// Token that ends generation (tiny backend; scripted files carry their own).
    #[arg(long)]
    pub eos_token: Option<TokenId>,
}

pub const DEFAULT_TOP_P: f64 = 0.9;
pub const DEFAULT_BEAM_WIDTH: usize = 4;

fn input<T>(what: &str, r: Result<T, impl std::fmt::Display>) -> CliResult<T> {
    r.map_err(|e| Failure::Input(format!("{what}: {e}")))
}

pub fn require<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| Failure::Input(format!("missing required {flag}")))
}

pub fn parse_scope(s: &str) -> CliResult<InterventionScope> {
    input("--scope", s.parse::<InterventionScope>())
}

pub fn parse_span(s: Option<&str>) -> CliResult<EvalSpan> {
    match s {
        None => Ok(EvalSpan::Full),
        Some(s) => input("--span", s.parse::<EvalSpan>()),
    }
}

/// Resolved decoding settings for generate and sweep.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub backend: String,
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub jobs: usize,
    pub decoder: DecoderConfig,
    pub eos_token: Option<TokenId>,
}

pub fn resolve_jobs(flag: Option<usize>, file: &FileConfig) -> CliResult<usize> {
    let jobs = flag.or(file.jobs).unwrap_or(1);
    if jobs == 0 {
        return Err(Failure::Input("--jobs must be at least 1".into()));
    }
    Ok(jobs)
}

pub fn resolve_markers(file: &FileConfig) -> SegmentMarkers {
    file.markers.unwrap_or_default()
}

impl RunSettings {
    pub fn resolve(common: &CommonArgs, args: &DecodeArgs, file: &FileConfig) -> CliResult<Self> {
        let backend = require(args.backend.clone().or(file.backend.clone()), "--backend")?;
        let corpus = require(common.corpus.clone().or(file.corpus.clone()), "--corpus")?;
        let out = require(common.out.clone().or(file.out.clone()), "--out")?;
        let jobs = resolve_jobs(common.jobs, file)?;

        let mut d = DecoderConfig::default();
        if let Some(g) = args.gamma.or(file.gamma) {
            d.gamma = g;
        }
        if let Some(a) = args.alpha.or(file.alpha) {
            d.alpha = a;
        }
        if let Some(s) = args.scope.as_deref().or(file.scope.as_deref()) {
            d.scope = parse_scope(s)?;
        }
        if let Some(m) = args.entropy_mode.as_deref().or(file.entropy_mode.as_deref()) {
            d.entropy_mode = input("--entropy-mode", m.parse::<EntropyMode>())?;
        }
        if let Some(seed) = args.seed.or(file.seed) {
            d.seed = seed;
        }
        if let Some(n) = args.max_tokens.or(file.max_tokens) {
            d.max_tokens = n;
        }
        d.markers = resolve_markers(file);
        d.record_attention = args.record_attention || file.record_attention.unwrap_or(false);
        let top_p = args.top_p.or(file.top_p).unwrap_or(DEFAULT_TOP_P);
        let width = args.beam_width.or(file.beam_width).unwrap_or(DEFAULT_BEAM_WIDTH);
        d.strategy = match args.strategy.as_deref().or(file.strategy.as_deref()).unwrap_or("greedy") {
            "greedy" => Strategy::Greedy,
            "nucleus" => Strategy::Nucleus { top_p },
            "beam" => Strategy::Beam { width },
            other => {
                return Err(Failure::Input(format!(
                    "--strategy: unknown strategy '{other}' (expected greedy, nucleus or beam)"
                )))
            }
        };
        d.validate().map_err(|e| Failure::Input(format!("decoder settings: {e}")))?;

        Ok(Self {
            backend,
            corpus,
            out,
            jobs,
            decoder: d,
            eos_token: args.eos_token.or(file.eos_token),
        })
    }
}

/// Parses `0.1,0.5,0.9` and checks the grid is non-empty, ascending and in
/// `[0, 1]`.
pub fn parse_grid(flag: &str, text: Option<&str>, file: Option<&Vec<f64>>, default: f64) -> CliResult<Vec<f64>> {
    let grid = match (text, file) {
        (Some(t), _) => t
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Failure::Input(format!("{flag}: '{v}': {e}")))
            })
            .collect::<CliResult<Vec<f64>>>()?,
        (None, Some(v)) => v.clone(),
        (None, None) => vec![default],
    };
    validate_grid(flag, &grid)?;
    Ok(grid)
}

pub fn validate_grid(flag: &str, grid: &[f64]) -> CliResult<()> {
    if grid.is_empty() {
        return Err(Failure::Input(format!("{flag}: grid is empty")));
    }
    if let Some(v) = grid.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Failure::Input(format!("{flag}: value {v} outside [0, 1]")));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Failure::Input(format!("{flag}: values must be strictly ascending")));
    }
    Ok(())
}
