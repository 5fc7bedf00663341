use rayon::prelude::*;

use super::{
    child, expand_bound, finished_order, rank_candidates, DecodeParams, ExpandScratch, Hypothesis, NBestList, Selection,
};
use crate::error::{Error, Result};
use crate::seqmodel::{validate_source, SequenceModel};
use crate::vocab::{Sequence, TokenId};

/// Decodes one source, choosing vanilla selection when `gamma == 0`.
pub fn decode(model: &dyn SequenceModel, source: &[TokenId], params: &DecodeParams) -> Result<NBestList> {
    decode_with(model, source, params, Selection::for_gamma(params.gamma))
}

/// Beam search with an explicit selection rule (`params.gamma` is ignored).
///
/// At every step, all EOS children whose body length reaches `min_len` move
/// to the finished list and the beam is refilled with the best unfinished
/// children up to K. EOS children below `min_len` are dropped. Hypotheses
/// still live at `max_len` are closed with EOS and its log-probability.
pub fn decode_with(
    model: &dyn SequenceModel,
    source: &[TokenId],
    params: &DecodeParams,
    selection: Selection,
) -> Result<NBestList> {
    params.validate()?;
    validate_source(model, source)?;
    let (min_len, max_len) = params.lengths.resolve(source.len())?;
    let k = params.beam;
    let eos = model.eos_id();
    let bound = model.condition(source);
    let mut scratch = ExpandScratch::new(model.vocab_size());
    let mut candidates = Vec::with_capacity(k * k);
    let mut beam = vec![Hypothesis::root()];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for len in 0..=max_len {
        if beam.is_empty() {
            break;
        }
        if len == max_len {
            let mut probs = vec![0.0; model.vocab_size()];
            for h in &beam {
                bound.fill_probs(&h.tokens, &mut probs);
                let p = probs[eos as usize];
                if p > 0.0 {
                    let mut done = h.clone();
                    done.tokens.push(eos);
                    done.score += p.ln();
                    done.finished = true;
                    done.ranks.push(0);
                    finished.push(done);
                }
            }
            break;
        }
        expand_bound(&beam, bound.as_ref(), k, &mut scratch, &mut candidates);
        rank_candidates(&mut candidates, selection)?;
        let mut next = Vec::with_capacity(k);
        for c in &candidates {
            if c.token == eos {
                if len >= min_len {
                    finished.push(child(&beam[c.parent], c, eos));
                }
            } else if next.len() < k {
                next.push(child(&beam[c.parent], c, eos));
            }
        }
        beam = next;
    }

    if finished.is_empty() {
        return Err(Error::DecodeFailure);
    }
    finished.sort_by(finished_order);
    finished.truncate(params.nbest_cap);
    Ok(NBestList { entries: finished })
}

/// Decodes every source; results are in input order and identical for any
/// `parallelism`.
pub fn batch_decode(
    model: &dyn SequenceModel,
    sources: &[Sequence],
    params: &DecodeParams,
    parallelism: usize,
) -> Result<Vec<Result<NBestList>>> {
    batch_decode_with(model, sources, params, Selection::for_gamma(params.gamma), parallelism)
}

/// [`batch_decode`] with an explicit selection rule.
pub fn batch_decode_with(
    model: &dyn SequenceModel,
    sources: &[Sequence],
    params: &DecodeParams,
    selection: Selection,
    parallelism: usize,
) -> Result<Vec<Result<NBestList>>> {
    if parallelism == 0 {
        return Err(Error::param("parallelism must be >= 1"));
    }
    params.validate()?;
    let one = |s: &Sequence| decode_with(model, s, params, selection);
    if parallelism == 1 || sources.len() <= 1 {
        return Ok(sources.iter().map(one).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(|| sources.par_iter().map(one).collect()))
}
