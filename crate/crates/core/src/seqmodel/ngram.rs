use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{smoothed, Conditioned, SequenceModel};
use crate::error::{Error, Result};
use crate::vocab::{Sequence, TokenId, Vocabulary};

#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct NextCounts {
    pub(crate) total: u64,
    /// Sorted by token id.
    pub(crate) next: Vec<(TokenId, u64)>,
}

impl NextCounts {
    fn from_map(m: BTreeMap<TokenId, u64>) -> Self {
        NextCounts {
            total: m.values().sum(),
            next: m.into_iter().collect(),
        }
    }

    pub(crate) fn count(&self, token: TokenId) -> u64 {
        self.next
            .binary_search_by_key(&token, |&(t, _)| t)
            .map(|i| self.next[i].1)
            .unwrap_or(0)
    }

    /// Dense add-alpha distribution over `size` outcomes.
    pub(crate) fn fill(&self, alpha: f64, size: usize, out: &mut [f64]) {
        out.fill(smoothed(0, self.total, alpha, size));
        for &(t, c) in &self.next {
            out[t as usize] = smoothed(c, self.total, alpha, size);
        }
    }
}

/// Add-alpha smoothed n-gram model over one vocabulary. Contexts are the
/// previous `order - 1` tokens, left-padded with the EOS id as a start marker.
/// Unseen contexts give the uniform distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramLM {
    order: usize,
    alpha: f64,
    vocab: Vocabulary,
    counts: HashMap<Vec<TokenId>, NextCounts>,
    /// Token frequencies in the training corpus (EOS excluded).
    unigram: Vec<u64>,
}

/// Trains an n-gram LM. EOS is appended to every training sequence.
pub fn train_lm(corpus: &[Sequence], vocab: &Vocabulary, order: usize, alpha: f64) -> Result<NGramLM> {
    if order == 0 {
        return Err(Error::param("n-gram order must be >= 1"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::param(format!("alpha must be > 0, got {alpha}")));
    }
    if corpus.is_empty() {
        return Err(Error::Training("empty corpus".into()));
    }
    let eos = vocab.eos_id();
    let mut raw: BTreeMap<Vec<TokenId>, BTreeMap<TokenId, u64>> = BTreeMap::new();
    let mut unigram = vec![0u64; vocab.size()];
    for seq in corpus {
        vocab.validate(seq)?;
        if seq.contains(&eos) {
            return Err(Error::input("training sequence contains EOS"));
        }
        let mut padded = vec![eos; order - 1];
        padded.extend_from_slice(seq);
        padded.push(eos);
        for &t in seq.iter() {
            unigram[t as usize] += 1;
        }
        for w in padded.windows(order) {
            let (ctx, next) = w.split_at(order - 1);
            *raw.entry(ctx.to_vec()).or_default().entry(next[0]).or_default() += 1;
        }
    }
    Ok(NGramLM {
        order,
        alpha,
        vocab: vocab.clone(),
        counts: raw.into_iter().map(|(k, v)| (k, NextCounts::from_map(v))).collect(),
        unigram,
    })
}

impl NGramLM {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Training-corpus frequency of each token id.
    pub fn unigram_counts(&self) -> &[u64] {
        &self.unigram
    }

    /// Same counts, different smoothing.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::param(format!("alpha must be > 0, got {alpha}")));
        }
        Ok(NGramLM { alpha, ..self.clone() })
    }

    pub(crate) fn fill_probs(&self, prefix: &[TokenId], out: &mut [f64]) {
        let n = self.order - 1;
        let size = self.vocab.size();
        let hit = if prefix.len() >= n {
            self.counts.get(&prefix[prefix.len() - n..])
        } else {
            let mut ctx = vec![self.vocab.eos_id(); n - prefix.len()];
            ctx.extend_from_slice(prefix);
            self.counts.get(ctx.as_slice())
        };
        match hit {
            Some(c) => c.fill(self.alpha, size, out),
            None => out.fill(1.0 / size as f64),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(&NGramRepr::from(self)).map_err(|e| Error::input(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: NGramRepr = serde_json::from_str(text).map_err(|e| Error::input(e.to_string()))?;
        r.try_into()
    }
}

impl Conditioned for NGramLM {
    fn fill_probs(&self, prefix: &[TokenId], out: &mut [f64]) {
        NGramLM::fill_probs(self, prefix, out)
    }
}

impl SequenceModel for NGramLM {
    fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    fn eos_id(&self) -> TokenId {
        self.vocab.eos_id()
    }

    fn source_vocab_size(&self) -> Option<usize> {
        None
    }

    fn condition<'a>(&'a self, _source: &'a [TokenId]) -> Box<dyn Conditioned + 'a> {
        Box::new(self)
    }
}

impl<T: Conditioned + ?Sized> Conditioned for &T {
    fn fill_probs(&self, prefix: &[TokenId], out: &mut [f64]) {
        (**self).fill_probs(prefix, out)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct NGramRepr {
    order: usize,
    alpha: f64,
    vocab: Vocabulary,
    unigram: Vec<u64>,
    counts: Vec<ContextRepr>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextRepr {
    context: Vec<TokenId>,
    next: Vec<(TokenId, u64)>,
}

impl From<&NGramLM> for NGramRepr {
    fn from(m: &NGramLM) -> Self {
        let sorted: BTreeMap<_, _> = m.counts.iter().collect();
        NGramRepr {
            order: m.order,
            alpha: m.alpha,
            vocab: m.vocab.clone(),
            unigram: m.unigram.clone(),
            counts: sorted
                .into_iter()
                .map(|(ctx, c)| ContextRepr {
                    context: ctx.clone(),
                    next: c.next.clone(),
                })
                .collect(),
        }
    }
}

impl TryFrom<NGramRepr> for NGramLM {
    type Error = Error;

    fn try_from(r: NGramRepr) -> Result<Self> {
        if r.order == 0 || r.alpha.is_nan() || r.alpha <= 0.0 {
            return Err(Error::input("bad n-gram hyperparameters"));
        }
        if r.unigram.len() != r.vocab.size() {
            return Err(Error::input("unigram table size mismatch"));
        }
        let size = r.vocab.size();
        let mut counts = HashMap::with_capacity(r.counts.len());
        for c in r.counts {
            if c.context.len() != r.order - 1
                || c.context
                    .iter()
                    .chain(c.next.iter().map(|(t, _)| t))
                    .any(|&t| t as usize >= size)
                || !c.next.windows(2).all(|w| w[0].0 < w[1].0)
            {
                return Err(Error::input("malformed n-gram context record"));
            }
            let total = c.next.iter().map(|&(_, n)| n).sum();
            counts.insert(c.context, NextCounts { total, next: c.next });
        }
        Ok(NGramLM {
            order: r.order,
            alpha: r.alpha,
            vocab: r.vocab,
            counts,
            unigram: r.unigram,
        })
    }
}
