use serde::{Deserialize, Serialize};

use crate::decoding::{Segment, StepTrace};
use crate::error::{Error, Result};

/// Mean attention mass on the image and on the thinking span, taken over the
/// answer-segment steps of one or more traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRatio {
    pub image: f64,
    pub think: f64,
    pub n_tokens: usize,
}

pub fn attention_ratio<'a, I>(traces: I) -> Result<AttentionRatio>
where
    I: IntoIterator<Item = &'a StepTrace>,
{
    let (mut image, mut think, mut n) = (0.0, 0.0, 0usize);
    for t in traces.into_iter().filter(|t| t.segment == Segment::Answer) {
        let a = t.attention.as_ref().ok_or_else(|| {
            Error::Report(format!("step {} has no attention summary", t.step_index))
        })?;
        image += a.image;
        think += a.think;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Report("no answer-segment steps to average".into()));
    }
    Ok(AttentionRatio {
        image: image / n as f64,
        think: think / n as f64,
        n_tokens: n,
    })
}
