use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use visent::backends::{ScriptedBackend, TinyTransformer};
use visent::decoding::{DecodeOutput, Decoder, DecoderConfig, TokenId};
use visent::eval::AnnotatedSample;
use visent::kernels::Matrix;

use crate::failure::{CliResult, Failure, PathContext};

/// A backend loaded from a `kind:path` spec.
pub enum LoadedBackend {
    Scripted(ScriptedBackend),
    Tiny(TinyTransformer),
}

impl LoadedBackend {
    pub fn load(spec: &str) -> CliResult<Self> {
        let (kind, path) = spec.split_once(':').ok_or_else(|| {
            Failure::Input(format!("--backend '{spec}': expected scripted:<path> or tiny:<path>"))
        })?;
        let path = PathBuf::from(path);
        match kind {
            "scripted" => {
                let file = File::open(&path).at("--backend", &path)?;
                let backend: ScriptedBackend = serde_json::from_reader(BufReader::new(file))
                    .map_err(|e| Failure::Input(format!("--backend '{}': {e}", path.display())))?;
                Ok(LoadedBackend::Scripted(backend))
            }
            "tiny" => {
                let file = File::open(&path).at("--backend", &path)?;
                let model = TinyTransformer::load(BufReader::new(file)).at("--backend", &path)?;
                Ok(LoadedBackend::Tiny(model))
            }
            other => Err(Failure::Input(format!(
                "--backend: unknown kind '{other}' (expected scripted or tiny)"
            ))),
        }
    }

    /// Decodes one corpus sample. `index` picks the nucleus stream and, for
    /// the tiny model, the synthetic visual input when the sample has none.
    pub fn decode(
        &self,
        sample: &AnnotatedSample,
        index: usize,
        config: &DecoderConfig,
        eos: Option<TokenId>,
    ) -> visent::Result<DecodeOutput> {
        let prompt = prompt_for(sample, config);
        let decoder = Decoder::new(config.clone()).with_stream(index as u64);
        match self {
            LoadedBackend::Scripted(b) => decoder.decode(b, &prompt),
            LoadedBackend::Tiny(model) => {
                let visual = match &sample.visual {
                    Some(rows) => Matrix::from_rows(rows)?,
                    None => model.synthetic_visual_embeddings(index as u64),
                };
                let session = model.session(visual, config.markers)?.with_eos(eos);
                decoder.decode(&session, &prompt)
            }
        }
    }
}

/// The sample's prompt, or a lone think-open marker when it has none, so
/// that generation starts inside the thinking segment.
pub fn prompt_for(sample: &AnnotatedSample, config: &DecoderConfig) -> Vec<TokenId> {
    if sample.prompt.is_empty() {
        vec![config.markers.think_open]
    } else {
        sample.prompt.clone()
    }
}

pub fn write_tiny(model: &TinyTransformer, path: &Path) -> CliResult<()> {
    let file = File::create(path).at("--out", path)?;
    let mut out = std::io::BufWriter::new(file);
    model.save(&mut out).at("--out", path)
}
