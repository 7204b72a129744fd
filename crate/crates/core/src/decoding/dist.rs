use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a [`VocabDistribution`].
pub const DIST_SUM_TOLERANCE: f64 = 1e-9;

/// Next-token probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct VocabDistribution(Vec<f64>);

impl VocabDistribution {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("empty distribution".into()));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::Config(format!("probability {i} = {v} outside [0, 1]")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > DIST_SUM_TOLERANCE {
            return Err(Error::Config(format!("distribution sums to {sum}")));
        }
        Ok(Self(values))
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Numeric("negative or non-finite weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Numeric(format!("total probability mass is {total}")));
        }
        for w in &mut weights {
            *w /= total;
        }
        Ok(Self(weights))
    }

    /// One-hot distribution on `token`.
    pub fn one_hot(vocab_size: usize, token: usize) -> Result<Self> {
        if token >= vocab_size {
            return Err(Error::Index {
                index: token,
                len: vocab_size,
            });
        }
        let mut v = vec![0.0; vocab_size];
        v[token] = 1.0;
        Ok(Self(v))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn prob(&self, token: usize) -> f64 {
        self.0.get(token).copied().unwrap_or(0.0)
    }

    /// Most probable token; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for VocabDistribution {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<VocabDistribution> for Vec<f64> {
    fn from(d: VocabDistribution) -> Self {
        d.0
    }
}
