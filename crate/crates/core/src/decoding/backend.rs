use crate::backends::AttentionSummary;
use crate::entropy::{project_visual_states, VisualActivationMatrix, VisualHiddenStates};
use crate::error::Result;
use crate::kernels::Matrix;

use super::dist::VocabDistribution;
use super::TokenId;

/// What a backend hands over at prefill to derive visual entropy from.
#[derive(Debug, Clone)]
pub enum VisualPrefill {
    /// Activation matrix given directly.
    Activations(VisualActivationMatrix),
    /// Final-layer hidden states of the visual positions and the `|V| x d`
    /// language head to project them with.
    HiddenStates {
        states: VisualHiddenStates,
        head: Matrix,
    },
}

impl VisualPrefill {
    pub fn into_activations(self) -> Result<VisualActivationMatrix> {
        match self {
            VisualPrefill::Activations(m) => Ok(m),
            VisualPrefill::HiddenStates { states, head } => project_visual_states(&states, &head),
        }
    }
}

/// A model viewed as one sequence: its visual input is fixed for the
/// lifetime of the value, and `next_distribution` must be a pure function of
/// the prompt and the tokens generated so far.
pub trait ModelBackend {
    fn vocab_size(&self) -> usize;

    /// Token that ends generation when selected.
    fn eos_token(&self) -> Option<TokenId> {
        None
    }

    /// Visual information for the sequence. Called once per decode.
    fn prefill(&self) -> Result<VisualPrefill>;

    /// Next-token distribution after `prompt` followed by `generated`.
    ///
    /// Scripted backends signal the end of their script with
    /// [`Error::ScriptExhausted`](crate::Error::ScriptExhausted).
    fn next_distribution(&self, prompt: &[TokenId], generated: &[TokenId])
        -> Result<VocabDistribution>;

    /// Where the position predicting the next token attends.
    fn attention_summary(
        &self,
        _prompt: &[TokenId],
        _generated: &[TokenId],
    ) -> Result<Option<AttentionSummary>> {
        Ok(None)
    }
}

impl<B: ModelBackend + ?Sized> ModelBackend for &B {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn eos_token(&self) -> Option<TokenId> {
        (**self).eos_token()
    }

    fn prefill(&self) -> Result<VisualPrefill> {
        (**self).prefill()
    }

    fn next_distribution(
        &self,
        prompt: &[TokenId],
        generated: &[TokenId],
    ) -> Result<VocabDistribution> {
        (**self).next_distribution(prompt, generated)
    }

    fn attention_summary(
        &self,
        prompt: &[TokenId],
        generated: &[TokenId],
    ) -> Result<Option<AttentionSummary>> {
        (**self).attention_summary(prompt, generated)
    }
}
