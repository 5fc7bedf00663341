use crate::error::{Error, Result};
use crate::seqmodel::{validate_source, Conditioned, SequenceModel};
use crate::vocab::{Sequence, TokenId};

pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// Exact `argmax_Y p(Y | X)` over EOS-terminated sequences whose body length
/// lies in `min_len..=max_len`, by full enumeration. Ties go to the
/// lexicographically smallest id sequence.
pub fn exhaustive_argmax(
    model: &dyn SequenceModel,
    source: &[TokenId],
    max_len: usize,
    min_len: usize,
) -> Result<(Sequence, f64)> {
    exhaustive_argmax_capped(model, source, max_len, min_len, DEFAULT_ENUMERATION_CAP)
}

pub fn exhaustive_argmax_capped(
    model: &dyn SequenceModel,
    source: &[TokenId],
    max_len: usize,
    min_len: usize,
    cap: u128,
) -> Result<(Sequence, f64)> {
    if max_len == 0 {
        return Err(Error::param("max_len must be >= 1"));
    }
    if min_len > max_len {
        return Err(Error::param("min_len exceeds max_len"));
    }
    let v = model.vocab_size() as u128;
    let requested = v.checked_pow(max_len as u32).unwrap_or(u128::MAX);
    if requested > cap {
        return Err(Error::EnumerationCap { requested, cap });
    }
    validate_source(model, source)?;
    let bound = model.condition(source);
    let mut search = Search {
        bound: bound.as_ref(),
        eos: model.eos_id(),
        min_len,
        max_len,
        bufs: vec![vec![0.0; model.vocab_size()]; max_len + 1],
        prefix: Vec::with_capacity(max_len + 1),
        best: None,
    };
    search.visit(0.0);
    search
        .best
        .map(|(seq, s)| (Sequence(seq), s))
        .ok_or(Error::DecodeFailure)
}

struct Search<'a> {
    bound: &'a dyn Conditioned,
    eos: TokenId,
    min_len: usize,
    max_len: usize,
    bufs: Vec<Vec<f64>>,
    prefix: Vec<TokenId>,
    best: Option<(Vec<TokenId>, f64)>,
}

impl Search<'_> {
    fn offer(&mut self, score: f64) {
        let better = match &self.best {
            None => true,
            Some((seq, s)) => score > *s || (score == *s && self.prefix < *seq),
        };
        if better {
            self.best = Some((self.prefix.clone(), score));
        }
    }

    fn visit(&mut self, score: f64) {
        let depth = self.prefix.len();
        let mut probs = std::mem::take(&mut self.bufs[depth]);
        self.bound.fill_probs(&self.prefix, &mut probs);
        if depth >= self.min_len && probs[self.eos as usize] > 0.0 {
            self.prefix.push(self.eos);
            self.offer(score + probs[self.eos as usize].ln());
            self.prefix.pop();
        }
        if depth < self.max_len {
            for (t, &p) in probs.iter().enumerate() {
                if t as TokenId != self.eos && p > 0.0 {
                    self.prefix.push(t as TokenId);
                    self.visit(score + p.ln());
                    self.prefix.pop();
                }
            }
        }
        self.bufs[depth] = probs;
    }
}
