//! Visual entropy over the vocabulary.
//!
//! Visual hidden states (one column per visual position) are projected through
//! the language head and a column softmax, giving a `|V| x m` activation
//! matrix. Each vocabulary row of that matrix describes how strongly the
//! visual positions would produce the token; its Shannon entropy, divided by
//! `ln m`, is the token's visual entropy. High values mean the token is not
//! anchored to any particular part of the image.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernels::{softmax_in_place, Matrix};

/// Absolute tolerance on the column sums of an activation matrix.
pub const COLUMN_SUM_TOLERANCE: f64 = 1e-6;

/// How a vocabulary row is turned into an entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyMode {
    /// Rescale the row to sum to one first. Results lie in `[0, 1]`.
    #[default]
    Normalized,
    /// Apply the entropy formula to the raw row. Results are non-negative
    /// but may exceed one.
    Verbatim,
}

impl std::str::FromStr for EntropyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized" => Ok(Self::Normalized),
            "verbatim" => Ok(Self::Verbatim),
            other => Err(Error::Config(format!("unknown entropy mode '{other}'"))),
        }
    }
}

/// Hidden states of the visual positions, `d` rows by `m` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualHiddenStates {
    values: Matrix,
    layer_index: usize,
}

impl VisualHiddenStates {
    pub fn new(values: Matrix, layer_index: usize) -> Result<Self> {
        if values.rows() < 1 {
            return Err(Error::Config("visual hidden states need d >= 1".into()));
        }
        if values.cols() < 2 {
            return Err(Error::Config(format!(
                "visual hidden states need at least 2 positions, got {}",
                values.cols()
            )));
        }
        if !values.is_finite() {
            return Err(Error::Numeric("non-finite visual hidden state".into()));
        }
        Ok(Self {
            values,
            layer_index,
        })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.rows()
    }

    pub fn num_visual_tokens(&self) -> usize {
        self.values.cols()
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }
}

/// Column-stochastic `|V| x m` matrix of visual activation probabilities.
///
/// Stored row-major so that a token's activation row is contiguous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ActivationDump", into = "ActivationDump")]
pub struct VisualActivationMatrix {
    values: Matrix,
}

/// JSON debug layout: one array per visual position.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ActivationDump {
    vocab_size: usize,
    num_visual_tokens: usize,
    columns: Vec<Vec<f64>>,
}

impl TryFrom<ActivationDump> for VisualActivationMatrix {
    type Error = Error;

    fn try_from(dump: ActivationDump) -> Result<Self> {
        if dump.columns.len() != dump.num_visual_tokens {
            return Err(Error::Config(format!(
                "activation dump declares {} visual tokens but has {} columns",
                dump.num_visual_tokens,
                dump.columns.len()
            )));
        }
        if let Some(bad) = dump.columns.iter().position(|c| c.len() != dump.vocab_size) {
            return Err(Error::Config(format!(
                "activation dump column {bad} does not have {} entries",
                dump.vocab_size
            )));
        }
        Self::from_columns(&dump.columns)
    }
}

impl From<VisualActivationMatrix> for ActivationDump {
    fn from(m: VisualActivationMatrix) -> Self {
        ActivationDump {
            vocab_size: m.vocab_size(),
            num_visual_tokens: m.num_visual_tokens(),
            columns: (0..m.num_visual_tokens()).map(|c| m.values.column(c)).collect(),
        }
    }
}

impl VisualActivationMatrix {
    /// Validates a `|V| x m` matrix.
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() == 0 {
            return Err(Error::Config("activation matrix has an empty vocabulary".into()));
        }
        if values.cols() < 2 {
            return Err(Error::Config(format!(
                "activation matrix needs at least 2 visual tokens, got {}",
                values.cols()
            )));
        }
        if !values.is_finite() {
            return Err(Error::Numeric("non-finite activation probability".into()));
        }
        if let Some(v) = values.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!(
                "activation probability {v} outside [0, 1]"
            )));
        }
        for c in 0..values.cols() {
            let sum: f64 = (0..values.rows()).map(|r| values.get(r, c)).sum();
            if (sum - 1.0).abs() > COLUMN_SUM_TOLERANCE {
                return Err(Error::Config(format!(
                    "activation column {c} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(Self { values })
    }

    /// Builds the matrix from per-position vocabulary distributions.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let m = columns.len();
        let vocab = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != vocab) {
            return Err(Error::Config("ragged activation columns".into()));
        }
        let mut values = Matrix::zeros(vocab, m);
        for (c, col) in columns.iter().enumerate() {
            for (r, v) in col.iter().enumerate() {
                values.set(r, c, *v);
            }
        }
        Self::new(values)
    }

    pub fn vocab_size(&self) -> usize {
        self.values.rows()
    }

    pub fn num_visual_tokens(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// Activation row of one vocabulary token.
    pub fn token_row(&self, token_id: usize) -> Result<TokenActivationVector<'_>> {
        if token_id >= self.vocab_size() {
            return Err(Error::Index {
                index: token_id,
                len: self.vocab_size(),
            });
        }
        Ok(TokenActivationVector {
            token_id,
            values: self.values.row(token_id),
        })
    }
}

/// Borrowed length-`m` activation row for a single token.
#[derive(Debug, Clone, Copy)]
pub struct TokenActivationVector<'a> {
    pub token_id: usize,
    pub values: &'a [f64],
}

/// Entropy of one token plus whether its activation row was all zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenEntropy {
    pub value: f64,
    pub degenerate: bool,
}

/// Per-token visual entropy for the whole vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualEntropyVector {
    mode: EntropyMode,
    values: Vec<f64>,
    degenerate: Vec<bool>,
}

impl VisualEntropyVector {
    /// Wraps precomputed values. Entries must be finite and non-negative,
    /// and additionally at most one in normalized mode.
    pub fn from_values(mode: EntropyMode, values: Vec<f64>) -> Result<Self> {
        for (i, v) in values.iter().enumerate() {
            let ok = v.is_finite()
                && *v >= 0.0
                && (mode == EntropyMode::Verbatim || *v <= 1.0);
            if !ok {
                return Err(Error::Config(format!("entropy entry {i} = {v} out of range")));
            }
        }
        let degenerate = vec![false; values.len()];
        Ok(Self {
            mode,
            values,
            degenerate,
        })
    }

    pub fn mode(&self) -> EntropyMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, token: usize) -> Option<f64> {
        self.values.get(token).copied()
    }

    pub fn is_degenerate(&self, token: usize) -> bool {
        self.degenerate.get(token).copied().unwrap_or(false)
    }

    /// Short stable digest of the exact bit pattern of the values. Traces
    /// carry it so that "computed once per sequence" can be checked after
    /// the fact.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for v in &self.values {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(&hasher.finalize()[..8])
    }
}

/// Projects visual hidden states through a `|V| x d` language head and
/// applies a softmax to every visual position.
pub fn project_visual_states(
    states: &VisualHiddenStates,
    head: &Matrix,
) -> Result<VisualActivationMatrix> {
    if head.cols() != states.dim() {
        return Err(Error::Config(format!(
            "language head has {} columns but hidden states have dimension {}",
            head.cols(),
            states.dim()
        )));
    }
    if !head.is_finite() {
        return Err(Error::Numeric("non-finite language head weight".into()));
    }
    let vocab = head.rows();
    let m = states.num_visual_tokens();
    let hidden = states.values();
    let mut out = Matrix::zeros(vocab, m);
    let mut logits = vec![0.0; vocab];
    for j in 0..m {
        let h = hidden.column(j);
        for (r, l) in logits.iter_mut().enumerate() {
            *l = head.row(r).iter().zip(&h).map(|(w, x)| w * x).sum();
        }
        softmax_in_place(&mut logits)?;
        for (r, p) in logits.iter().enumerate() {
            out.set(r, j, *p);
        }
    }
    VisualActivationMatrix::new(out)
}

/// Entropy of a single activation row, normalized by `ln m` where `m` is the
/// row length.
pub fn row_entropy(row: &[f64], mode: EntropyMode) -> TokenEntropy {
    let m = row.len();
    let total: f64 = row.iter().sum();
    if total <= 0.0 {
        return TokenEntropy {
            value: 0.0,
            degenerate: true,
        };
    }
    let log_m = (m as f64).ln();
    let value = match mode {
        EntropyMode::Normalized => {
            if row.iter().all(|&p| p == row[0]) {
                1.0
            } else {
                let h: f64 = row
                    .iter()
                    .filter(|&&p| p > 0.0)
                    .map(|&p| {
                        let q = p / total;
                        q * q.ln()
                    })
                    .sum();
                (-h / log_m).clamp(0.0, 1.0)
            }
        }
        EntropyMode::Verbatim => {
            let h: f64 = row
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum();
            -h / log_m
        }
    };
    TokenEntropy {
        // collapses a possible -0.0
        value: if value > 0.0 { value } else { 0.0 },
        degenerate: false,
    }
}

/// Visual entropy of one vocabulary token.
pub fn token_visual_entropy(
    matrix: &VisualActivationMatrix,
    token_id: usize,
    mode: EntropyMode,
) -> Result<TokenEntropy> {
    let row = matrix.token_row(token_id)?;
    Ok(row_entropy(row.values, mode))
}

/// Visual entropy of every vocabulary token.
pub fn visual_entropy_vector(
    matrix: &VisualActivationMatrix,
    mode: EntropyMode,
) -> Result<VisualEntropyVector> {
    let vocab = matrix.vocab_size();
    let mut values = Vec::with_capacity(vocab);
    let mut degenerate = Vec::with_capacity(vocab);
    for token in 0..vocab {
        let e = token_visual_entropy(matrix, token, mode)?;
        if e.value.is_nan() {
            return Err(Error::Numeric(format!("entropy of token {token} is NaN")));
        }
        values.push(e.value);
        degenerate.push(e.degenerate);
    }
    Ok(VisualEntropyVector {
        mode,
        values,
        degenerate,
    })
}
