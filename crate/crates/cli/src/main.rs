//! `visent`: generation runs, metric evaluation, hyperparameter sweeps and
//! analysis reports for visual-entropy-guided decoding.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 backend or
//! runtime error.

mod backend;
mod config;
mod failure;
mod flat;
mod generate;
mod report;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use visent::backends::{TinyConfig, TinyTransformer};

use crate::config::{CommonArgs, DecodeArgs, FileConfig, RunSettings};
use crate::failure::{CliResult, Failure};

#[derive(Parser)]
#[command(name = "visent", version, about = "Visual-entropy-guided decoding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode every corpus sample; writes traces.jsonl and generations.jsonl.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        decode: DecodeArgs,
    },
    /// Score generations against the corpus; writes report.json and report.csv.
    Eval(report::EvalArgs),
    /// Run the scope x gamma x alpha grid; writes sweep.csv.
    Sweep(sweep::SweepArgs),
    /// Correlation, mode rates, attention and logistic fit from traces.
    Analyze(report::AnalyzeArgs),
    /// Write seeded tiny-transformer weights.
    InitTiny(InitArgs),
}

#[derive(Args)]
struct InitArgs {
    /// Weight file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    context: Option<usize>,
    /// Number of visual positions.
    #[arg(long)]
    m: Option<usize>,
}

fn init_tiny(args: &InitArgs) -> CliResult<()> {
    let d = TinyConfig::default();
    let config = TinyConfig {
        vocab_size: args.vocab_size.unwrap_or(d.vocab_size),
        dim: args.dim.unwrap_or(d.dim),
        layers: args.layers.unwrap_or(d.layers),
        heads: args.heads.unwrap_or(d.heads),
        context: args.context.unwrap_or(d.context),
        m: args.m.unwrap_or(d.m),
        seed: args.seed,
    };
    let model = TinyTransformer::from_seed(config).map_err(|e| Failure::from(e).context("init-tiny"))?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        generate::create_out_dir(dir)?;
    }
    backend::write_tiny(&model, &args.out)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate { common, decode } => {
            let file = FileConfig::load(common.config.as_deref())?;
            let settings = RunSettings::resolve(&common, &decode, &file)?;
            generate::cmd_generate(&settings)
        }
        Command::Eval(args) => report::cmd_eval(&args),
        Command::Sweep(args) => sweep::cmd_sweep(&args),
        Command::Analyze(args) => report::cmd_analyze(&args),
        Command::InitTiny(args) => init_tiny(&args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("visent: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
