//! Conditional sequence models `p(y_t | X, y_1..y_{t-1})`.
//!
//! Every model exposes next-token *probabilities* through [`Conditioned`];
//! log-probabilities are always `p.ln()` of those values, so a decoder that
//! accumulates `ln p` token by token reproduces [`sequence_logprob`] bit for bit.

mod fusion;
mod ngram;
mod tabular;

pub use fusion::{train_backward, train_fusion, FusionConfig, FusionModel};
pub use ngram::{train_lm, NGramLM};
pub use tabular::TabularModel;

use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// A model bound to one source sequence.
pub trait Conditioned {
    /// Writes the next-token distribution after `prefix` into `out`, which has
    /// length `vocab_size()`. Callers guarantee `prefix` is valid and EOS-free.
    fn fill_probs(&self, prefix: &[TokenId], out: &mut [f64]);
}

pub trait SequenceModel: Send + Sync {
    /// Size of the output vocabulary, EOS included.
    fn vocab_size(&self) -> usize;

    fn eos_id(&self) -> TokenId;

    /// Size of the source vocabulary, or `None` if the model ignores its source.
    fn source_vocab_size(&self) -> Option<usize>;

    /// Binds the model to a source. Source-dependent work happens once here.
    fn condition<'a>(&'a self, source: &'a [TokenId]) -> Box<dyn Conditioned + 'a>;
}

pub(crate) fn validate_source(model: &dyn SequenceModel, source: &[TokenId]) -> Result<()> {
    if let Some(n) = model.source_vocab_size() {
        if let Some(&bad) = source.iter().find(|&&id| id as usize >= n) {
            return Err(Error::input(format!(
                "source token id {bad} outside source vocabulary of size {n}"
            )));
        }
    }
    Ok(())
}

fn validate_prefix(model: &dyn SequenceModel, prefix: &[TokenId]) -> Result<()> {
    let n = model.vocab_size();
    for &id in prefix {
        if id as usize >= n {
            return Err(Error::input(format!(
                "prefix token id {id} outside vocabulary of size {n}"
            )));
        }
        if id == model.eos_id() {
            return Err(Error::State("prefix already contains EOS".into()));
        }
    }
    Ok(())
}

/// Natural-log next-token distribution after `prefix`.
pub fn next_logprobs(model: &dyn SequenceModel, source: &[TokenId], prefix: &[TokenId]) -> Result<Vec<f64>> {
    validate_source(model, source)?;
    validate_prefix(model, prefix)?;
    let mut out = vec![0.0; model.vocab_size()];
    model.condition(source).fill_probs(prefix, &mut out);
    for p in &mut out {
        *p = p.ln();
    }
    Ok(out)
}

/// `sum_t ln p(y_t | X, y_<t)`. No EOS term is added implicitly.
pub fn sequence_logprob(model: &dyn SequenceModel, source: &[TokenId], target: &[TokenId]) -> Result<f64> {
    validate_source(model, source)?;
    crate::vocab::validate_ids(target, model.vocab_size(), model.eos_id())?;
    let bound = model.condition(source);
    Ok(logprob_bound(bound.as_ref(), model.vocab_size(), target))
}

pub(crate) fn logprob_bound(bound: &dyn Conditioned, vocab_size: usize, target: &[TokenId]) -> f64 {
    let mut buf = vec![0.0; vocab_size];
    let mut total = 0.0;
    for t in 0..target.len() {
        bound.fill_probs(&target[..t], &mut buf);
        total += buf[target[t] as usize].ln();
    }
    total
}

/// Add-alpha smoothed ratio `(count + alpha) / (total + alpha * size)`.
#[inline]
pub(crate) fn smoothed(count: u64, total: u64, alpha: f64, size: usize) -> f64 {
    (count as f64 + alpha) / (total as f64 + alpha * size as f64)
}
