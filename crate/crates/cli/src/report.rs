//! `eval` and `analyze`: metrics over generated responses.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use visent::decoding::{read_trace_jsonl, DecoderConfig, SegmentMarkers, StepTrace};
use visent::eval::{
    answer_prediction, attention_ratio, chair_metrics, hallucination_correlation, logistic_fit,
    mode_hallucination_rates, pope_metrics, rate_pairs, segment_entropy_points, AnnotatedSample,
    AttentionRatio, CorrelationReport, EvalSpan, HallucinationReport, Lexicon, LogisticReport,
    ModeRates, PopeLabel, PopeReport,
};

use crate::backend::prompt_for;
use crate::config::{parse_span, require, resolve_markers, FileConfig};
use crate::failure::{CliResult, Failure, PathContext};
use crate::flat::write_report;
use crate::generate::{create_out_dir, load_corpus, read_generations};

/// Fewest labelled steps the logistic section is fitted on.
pub const MIN_LOGISTIC_POINTS: usize = 10;

/// A report section that may be missing for a stated reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Section<T> {
    Available(T),
    Unavailable { unavailable: String },
}

impl<T> Section<T> {
    fn from_result(r: visent::Result<T>) -> Self {
        match r {
            Ok(v) => Section::Available(v),
            Err(e) => Section::Unavailable { unavailable: e.to_string() },
        }
    }

    fn missing(reason: impl Into<String>) -> Self {
        Section::Unavailable { unavailable: reason.into() }
    }
}

#[derive(Debug, Args, Default)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// generations.jsonl written by `generate`.
    #[arg(long)]
    pub generations: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// full | think | answer
    #[arg(long)]
    pub span: Option<String>,
    /// Object lexicon: JSON array or one object per line.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// traces.jsonl written by `generate`.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

pub fn load_lexicon(path: Option<&Path>, corpus: &[AnnotatedSample]) -> CliResult<Option<Lexicon>> {
    let Some(path) = path else {
        return Ok(Lexicon::from_corpus(corpus).ok());
    };
    let text = std::fs::read_to_string(path).at("--lexicon", path)?;
    let words: Vec<String> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text)
            .map_err(|e| Failure::Input(format!("--lexicon '{}': {e}", path.display())))?
    } else {
        text.lines().map(str::to_string).collect()
    };
    Lexicon::new(words).at("--lexicon", path).map(Some)
}

fn orphan_error(kind: &str, extra: &[String], missing: &[String]) -> Failure {
    let mut parts = Vec::new();
    if !extra.is_empty() {
        parts.push(format!("{kind} ids not in corpus: {}", extra.join(", ")));
    }
    if !missing.is_empty() {
        parts.push(format!("corpus ids without {kind}: {}", missing.join(", ")));
    }
    Failure::Input(format!("id mismatch; {}", parts.join("; ")))
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub span: EvalSpan,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chair: Option<HallucinationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pope: Option<PopeReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Section<CorrelationReport>>,
}

/// Corpus samples with their responses replaced by the generated ones.
fn join_generations(corpus: &[AnnotatedSample], generations_path: &Path) -> CliResult<Vec<AnnotatedSample>> {
    let gens = read_generations(generations_path)?;
    let mut by_id = BTreeMap::new();
    for g in gens {
        let id = g.id.clone();
        if by_id.insert(id.clone(), g).is_some() {
            return Err(Failure::Input(format!("--generations: duplicate id '{id}'")));
        }
    }
    let corpus_ids: BTreeSet<&str> = corpus.iter().map(|s| s.id.as_str()).collect();
    let extra: Vec<String> = by_id.keys().filter(|k| !corpus_ids.contains(k.as_str())).cloned().collect();
    let missing: Vec<String> = corpus
        .iter()
        .filter(|s| !by_id.contains_key(&s.id))
        .map(|s| s.id.clone())
        .collect();
    if !extra.is_empty() || !missing.is_empty() {
        return Err(orphan_error("generation", &extra, &missing));
    }
    Ok(corpus
        .iter()
        .map(|s| {
            let g = &by_id[&s.id];
            AnnotatedSample {
                prompt: g.prompt.clone(),
                tokens: g.tokens.clone(),
                ..s.clone()
            }
        })
        .collect())
}

pub fn evaluate(
    samples: &[AnnotatedSample],
    lexicon: Option<&Lexicon>,
    span: EvalSpan,
    markers: &SegmentMarkers,
) -> CliResult<EvalReport> {
    let chair = lexicon
        .map(|lex| chair_metrics(samples, lex, span, markers))
        .transpose()?;
    let correlation = lexicon.map(|lex| Section::from_result(hallucination_correlation(samples, lex, markers)));
    let items: Vec<PopeLabel> = samples
        .iter()
        .filter_map(|s| {
            s.pope.map(|p| PopeLabel {
                expected: p.expected,
                predicted: Some(answer_prediction(s, markers)),
            })
        })
        .collect();
    let pope = if items.is_empty() { None } else { Some(pope_metrics(&items)?) };
    if chair.is_none() && pope.is_none() {
        return Err(Failure::Input(
            "nothing to evaluate: no object lexicon and no POPE labels".into(),
        ));
    }
    Ok(EvalReport {
        n_samples: samples.len(),
        span,
        chair,
        pope,
        correlation,
    })
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let corpus_path = require(args.corpus.clone().or(file.corpus.clone()), "--corpus")?;
    let gens_path = require(args.generations.clone().or(file.generations.clone()), "--generations")?;
    let out = require(args.out.clone().or(file.out.clone()), "--out")?;
    let span = parse_span(args.span.as_deref().or(file.span.as_deref()))?;
    let markers = resolve_markers(&file);

    let corpus = load_corpus(&corpus_path)?;
    let lexicon = load_lexicon(args.lexicon.as_deref().or(file.lexicon.as_deref()), &corpus)?;
    let samples = join_generations(&corpus, &gens_path)?;
    let report = evaluate(&samples, lexicon.as_ref(), span, &markers)?;
    create_out_dir(&out)?;
    write_report(&out, "report", &report)?;
    if let Some(c) = &report.chair {
        eprintln!("CHAIR_S {:.4}  CHAIR_I {:.4}", c.chair_s, c.chair_i);
    }
    if let Some(p) = &report.pope {
        eprintln!("POPE accuracy {:.4}  F1 {:.4}", p.accuracy, p.f1);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct AnalysisReport {
    pub n_samples: usize,
    pub n_steps: usize,
    pub correlation: Section<CorrelationReport>,
    pub mode_rates: Section<ModeRates>,
    pub attention: Section<AttentionRatio>,
    pub logistic: Section<LogisticReport>,
}

/// Entropy/label points and rate pairs behind the report, for plotting.
pub struct PlotData {
    pub entropy_points: Vec<(String, usize, f64, bool)>,
    pub rate_pairs: Vec<(f64, f64)>,
}

/// Groups trace records per corpus sample in step order and rebuilds each
/// response from the selected tokens.
pub fn samples_from_traces(
    corpus: &[AnnotatedSample],
    records: Vec<visent::decoding::TraceRecord>,
    markers: SegmentMarkers,
) -> CliResult<Vec<(AnnotatedSample, Vec<StepTrace>)>> {
    let mut by_id: BTreeMap<String, Vec<StepTrace>> = BTreeMap::new();
    for r in records {
        by_id.entry(r.sample_id).or_default().push(r.trace);
    }
    let corpus_ids: BTreeSet<&str> = corpus.iter().map(|s| s.id.as_str()).collect();
    let extra: Vec<String> = by_id.keys().filter(|k| !corpus_ids.contains(k.as_str())).cloned().collect();
    if !extra.is_empty() {
        return Err(orphan_error("trace", &extra, &[]));
    }
    let config = DecoderConfig { markers, ..Default::default() };
    corpus
        .iter()
        .map(|s| {
            let mut traces = by_id.remove(&s.id).unwrap_or_default();
            traces.sort_by_key(|t| t.step_index);
            if traces.iter().enumerate().any(|(i, t)| t.step_index != i) {
                return Err(Failure::Input(format!(
                    "--traces: steps of sample '{}' are not 0..n",
                    s.id
                )));
            }
            let sample = AnnotatedSample {
                prompt: prompt_for(s, &config),
                tokens: traces.iter().map(|t| t.selected_token).collect(),
                ..s.clone()
            };
            Ok((sample, traces))
        })
        .collect()
}

pub fn analyze(
    joined: &[(AnnotatedSample, Vec<StepTrace>)],
    lexicon: Option<&Lexicon>,
    markers: &SegmentMarkers,
) -> (AnalysisReport, PlotData) {
    let samples: Vec<AnnotatedSample> = joined.iter().map(|(s, _)| s.clone()).collect();
    let no_lexicon = "no object lexicon";
    let correlation = match lexicon {
        Some(lex) => Section::from_result(hallucination_correlation(&samples, lex, markers)),
        None => Section::missing(no_lexicon),
    };
    let mode_rates = match lexicon {
        Some(lex) => Section::from_result(mode_hallucination_rates(&samples, lex)),
        None => Section::missing(no_lexicon),
    };
    let attention = Section::from_result(attention_ratio(joined.iter().flat_map(|(_, t)| t)));

    let mut entropy_points = Vec::new();
    for (s, traces) in joined {
        let pts = segment_entropy_points(s, traces);
        let steps = traces.iter().filter(|t| s.segments.iter().any(|seg| seg.range().contains(&t.step_index)));
        for (t, (e, d)) in steps.zip(pts) {
            entropy_points.push((s.id.clone(), t.step_index, e, d));
        }
    }
    let points: Vec<(f64, bool)> = entropy_points.iter().map(|p| (p.2, p.3)).collect();
    let logistic = if points.len() < MIN_LOGISTIC_POINTS {
        Section::missing(format!(
            "{} labelled steps, at least {MIN_LOGISTIC_POINTS} needed",
            points.len()
        ))
    } else {
        Section::from_result(logistic_fit(&points))
    };
    let rate_pairs = lexicon
        .and_then(|lex| rate_pairs(&samples, lex, markers).ok())
        .unwrap_or_default();

    let report = AnalysisReport {
        n_samples: joined.len(),
        n_steps: joined.iter().map(|(_, t)| t.len()).sum(),
        correlation,
        mode_rates,
        attention,
        logistic,
    };
    (report, PlotData { entropy_points, rate_pairs })
}

fn write_plot_data(out: &Path, data: &PlotData) -> CliResult<()> {
    let path = out.join("entropy_points.csv");
    let mut w = csv::Writer::from_path(&path).at("output", &path)?;
    w.write_record(["sample_id", "step_index", "entropy", "divergent"]).at("output", &path)?;
    for (id, step, e, d) in &data.entropy_points {
        w.write_record([id.clone(), step.to_string(), e.to_string(), u8::from(*d).to_string()])
            .at("output", &path)?;
    }
    w.flush().at("output", &path)?;

    let path = out.join("rate_pairs.csv");
    let mut w = csv::Writer::from_path(&path).at("output", &path)?;
    w.write_record(["thinking_rate", "answering_rate"]).at("output", &path)?;
    for (t, a) in &data.rate_pairs {
        w.write_record([t.to_string(), a.to_string()]).at("output", &path)?;
    }
    w.flush().at("output", &path)
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> CliResult<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let corpus_path = require(args.corpus.clone().or(file.corpus.clone()), "--corpus")?;
    let traces_path = require(args.traces.clone().or(file.traces.clone()), "--traces")?;
    let out = require(args.out.clone().or(file.out.clone()), "--out")?;
    let markers = resolve_markers(&file);

    let corpus = load_corpus(&corpus_path)?;
    let lexicon = load_lexicon(args.lexicon.as_deref().or(file.lexicon.as_deref()), &corpus)?;
    let reader = std::io::BufReader::new(std::fs::File::open(&traces_path).at("--traces", &traces_path)?);
    let records = read_trace_jsonl(reader).at("--traces", &traces_path)?;
    let joined = samples_from_traces(&corpus, records, markers)?;
    let (report, plot) = analyze(&joined, lexicon.as_ref(), &markers);
    create_out_dir(&out)?;
    write_report(&out, "analysis", &report)?;
    write_plot_data(&out, &plot)?;
    if let Section::Available(l) = &report.logistic {
        eprintln!("logistic pseudo-R2 {:.4}  accuracy {:.4}", l.mcfadden_r2, l.accuracy);
    }
    Ok(())
}
