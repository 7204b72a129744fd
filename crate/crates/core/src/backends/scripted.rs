use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::decoding::{ModelBackend, TokenId, VisualPrefill, VocabDistribution};
use crate::entropy::{EntropyMode, VisualActivationMatrix};
use crate::error::{Error, Result};
use crate::kernels::Matrix;

use super::AttentionSummary;

/// Distribution keyed on the full token sequence (prompt then generated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixEntry {
    pub prefix: Vec<TokenId>,
    pub dist: VocabDistribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<AttentionSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScriptFile {
    vocab_size: usize,
    activation_matrix: VisualActivationMatrix,
    #[serde(default)]
    steps: Vec<VocabDistribution>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    prefixes: Vec<PrefixEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    attention: Vec<AttentionSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eos_token: Option<TokenId>,
}

/// Backend whose every output is written down in advance.
///
/// A distribution is looked up first by exact prefix, then by step index
/// (number of generated tokens). Anything else is
/// [`Error::ScriptExhausted`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ScriptFile", into = "ScriptFile")]
pub struct ScriptedBackend {
    vocab_size: usize,
    activations: VisualActivationMatrix,
    steps: Vec<VocabDistribution>,
    prefixes: Vec<PrefixEntry>,
    prefix_index: HashMap<Vec<TokenId>, usize>,
    attention: Vec<AttentionSummary>,
    eos_token: Option<TokenId>,
}

impl TryFrom<ScriptFile> for ScriptedBackend {
    type Error = Error;

    fn try_from(f: ScriptFile) -> Result<Self> {
        let mut b = ScriptedBackend::new(f.activation_matrix);
        if b.vocab_size != f.vocab_size {
            return Err(Error::Config(format!(
                "script declares vocab_size {} but activation matrix has {} rows",
                f.vocab_size, b.vocab_size
            )));
        }
        b = b.with_steps(f.steps)?.with_attention(f.attention)?;
        for entry in f.prefixes {
            b = b.with_prefix_entry(entry)?;
        }
        if let Some(eos) = f.eos_token {
            b = b.with_eos(eos)?;
        }
        Ok(b)
    }
}

impl From<ScriptedBackend> for ScriptFile {
    fn from(b: ScriptedBackend) -> Self {
        ScriptFile {
            vocab_size: b.vocab_size,
            activation_matrix: b.activations,
            steps: b.steps,
            prefixes: b.prefixes,
            attention: b.attention,
            eos_token: b.eos_token,
        }
    }
}

impl ScriptedBackend {
    pub fn new(activations: VisualActivationMatrix) -> Self {
        Self {
            vocab_size: activations.vocab_size(),
            activations,
            steps: Vec::new(),
            prefixes: Vec::new(),
            prefix_index: HashMap::new(),
            attention: Vec::new(),
            eos_token: None,
        }
    }

    pub fn with_steps(mut self, steps: Vec<VocabDistribution>) -> Result<Self> {
        for (i, d) in steps.iter().enumerate() {
            self.check_len(d, &format!("step {i}"))?;
        }
        self.steps = steps;
        Ok(self)
    }

    pub fn with_prefix(self, prefix: Vec<TokenId>, dist: VocabDistribution) -> Result<Self> {
        self.with_prefix_entry(PrefixEntry {
            prefix,
            dist,
            attention: None,
        })
    }

    pub fn with_prefix_entry(mut self, entry: PrefixEntry) -> Result<Self> {
        self.check_len(&entry.dist, &format!("prefix {:?}", entry.prefix))?;
        if let Some(a) = &entry.attention {
            a.validate()?;
        }
        if self.prefix_index.contains_key(&entry.prefix) {
            return Err(Error::Config(format!("duplicate scripted prefix {:?}", entry.prefix)));
        }
        self.prefix_index.insert(entry.prefix.clone(), self.prefixes.len());
        self.prefixes.push(entry);
        Ok(self)
    }

    /// Attention summaries indexed by step.
    pub fn with_attention(mut self, attention: Vec<AttentionSummary>) -> Result<Self> {
        for a in &attention {
            a.validate()?;
        }
        self.attention = attention;
        Ok(self)
    }

    pub fn with_eos(mut self, eos: TokenId) -> Result<Self> {
        if eos >= self.vocab_size {
            return Err(Error::Index {
                index: eos,
                len: self.vocab_size,
            });
        }
        self.eos_token = Some(eos);
        Ok(self)
    }

    pub fn activations(&self) -> &VisualActivationMatrix {
        &self.activations
    }

    fn check_len(&self, d: &VocabDistribution, what: &str) -> Result<()> {
        if d.len() != self.vocab_size {
            return Err(Error::Config(format!(
                "{what}: distribution has {} entries, vocabulary has {}",
                d.len(),
                self.vocab_size
            )));
        }
        Ok(())
    }

    fn lookup(&self, prompt: &[TokenId], generated: &[TokenId]) -> Option<&PrefixEntry> {
        if self.prefixes.is_empty() {
            return None;
        }
        let key: Vec<TokenId> = prompt.iter().chain(generated).copied().collect();
        self.prefix_index.get(&key).map(|&i| &self.prefixes[i])
    }

    /// The scripted distribution for this point of the sequence.
    pub fn scripted_next(
        &self,
        prompt: &[TokenId],
        generated: &[TokenId],
    ) -> Result<VocabDistribution> {
        if let Some(entry) = self.lookup(prompt, generated) {
            return Ok(entry.dist.clone());
        }
        self.steps
            .get(generated.len())
            .cloned()
            .ok_or(Error::ScriptExhausted {
                step: generated.len(),
            })
    }
}

impl ModelBackend for ScriptedBackend {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn eos_token(&self) -> Option<TokenId> {
        self.eos_token
    }

    fn prefill(&self) -> Result<VisualPrefill> {
        Ok(VisualPrefill::Activations(self.activations.clone()))
    }

    fn next_distribution(
        &self,
        prompt: &[TokenId],
        generated: &[TokenId],
    ) -> Result<VocabDistribution> {
        self.scripted_next(prompt, generated)
    }

    fn attention_summary(
        &self,
        prompt: &[TokenId],
        generated: &[TokenId],
    ) -> Result<Option<AttentionSummary>> {
        if let Some(entry) = self.lookup(prompt, generated) {
            if entry.attention.is_some() {
                return Ok(entry.attention.clone());
            }
        }
        Ok(self.attention.get(generated.len()).cloned())
    }
}

/// Builds a two-position activation matrix whose tokens have the requested
/// normalized visual entropies.
///
/// Every token except `sink` gets a row `(s*r, s*(1-r))` with `r` chosen so
/// that the binary entropy of `r` matches its target; `sink` absorbs the
/// remaining mass of both columns and its own entropy is whatever results.
pub fn entropy_profile_matrix(targets: &[f64], sink: TokenId) -> Result<VisualActivationMatrix> {
    let vocab = targets.len();
    if sink >= vocab {
        return Err(Error::Index {
            index: sink,
            len: vocab,
        });
    }
    let scale = 0.5 / vocab as f64;
    let mut values = Matrix::zeros(vocab, 2);
    let (mut used0, mut used1) = (0.0, 0.0);
    for (tok, &target) in targets.iter().enumerate() {
        if tok == sink {
            continue;
        }
        if !(0.0..=1.0).contains(&target) {
            return Err(Error::Config(format!("target entropy {target} outside [0, 1]")));
        }
        let r = invert_binary_entropy(target);
        values.set(tok, 0, scale * r);
        values.set(tok, 1, scale * (1.0 - r));
        used0 += scale * r;
        used1 += scale * (1.0 - r);
    }
    values.set(sink, 0, 1.0 - used0);
    values.set(sink, 1, 1.0 - used1);
    let m = VisualActivationMatrix::new(values)?;
    debug_assert!(crate::entropy::visual_entropy_vector(&m, EntropyMode::Normalized).is_ok());
    Ok(m)
}

/// `r` in `[0, 1/2]` with `H2(r) / ln 2 == h`, by bisection.
fn invert_binary_entropy(h: f64) -> f64 {
    if h <= 0.0 {
        return 0.0;
    }
    if h >= 1.0 {
        return 0.5;
    }
    let h2 = |r: f64| {
        if r <= 0.0 {
            0.0
        } else {
            -(r * r.ln() + (1.0 - r) * (1.0 - r).ln()) / std::f64::consts::LN_2
        }
    };
    let (mut lo, mut hi) = (0.0_f64, 0.5_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h2(mid) < h {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
