//! Corpus BLEU, smoothed sentence BLEU, distinct-n and ROUGE-2.
//!
//! All functions are generic over the token type so they work on ids and on
//! raw whitespace tokens alike. Hypotheses are expected with EOS removed.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair<T> {
    pub hypothesis: Vec<T>,
    pub references: Vec<Vec<T>>,
}

impl<T> EvalPair<T> {
    pub fn single(hypothesis: Vec<T>, reference: Vec<T>) -> Self {
        EvalPair {
            hypothesis,
            references: vec![reference],
        }
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut m = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Additive BLEU sufficient statistics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BleuStats {
    /// Clipped n-gram matches for n = 1..=max_n.
    pub matches: Vec<u64>,
    /// Hypothesis n-gram counts for n = 1..=max_n.
    pub totals: Vec<u64>,
    pub hyp_len: u64,
    /// Closest reference length (ties resolved to the shorter reference).
    pub ref_len: u64,
}

impl BleuStats {
    pub fn zero(max_n: usize) -> Self {
        BleuStats {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            hyp_len: 0,
            ref_len: 0,
        }
    }

    pub fn compute<T: Eq + Hash, R: AsRef<[T]>>(hyp: &[T], refs: &[R], max_n: usize) -> Self {
        let mut s = BleuStats::zero(max_n);
        s.hyp_len = hyp.len() as u64;
        let c = hyp.len() as i64;
        s.ref_len = refs
            .iter()
            .map(|r| r.as_ref().len() as i64)
            .min_by_key(|&r| ((r - c).abs(), r))
            .unwrap_or(0) as u64;
        for n in 1..=max_n {
            let h = ngram_counts(hyp, n);
            let mut max_ref: HashMap<&[T], u64> = HashMap::new();
            for r in refs {
                for (g, k) in ngram_counts(r.as_ref(), n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            s.totals[n - 1] = h.values().sum();
            s.matches[n - 1] = h
                .iter()
                .map(|(g, &k)| k.min(max_ref.get(g).copied().unwrap_or(0)))
                .sum();
        }
        s
    }

    pub fn add(&mut self, other: &BleuStats) {
        for (a, b) in self.matches.iter_mut().zip(&other.matches) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    pub fn sub(&mut self, other: &BleuStats) {
        for (a, b) in self.matches.iter_mut().zip(&other.matches) {
            *a -= b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a -= b;
        }
        self.hyp_len -= other.hyp_len;
        self.ref_len -= other.ref_len;
    }

    /// BLEU in `[0, 100]`; any zero precision gives 0.
    pub fn bleu(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for (&m, &t) in self.matches.iter().zip(&self.totals) {
            if m == 0 || t == 0 {
                return 0.0;
            }
            log_sum += (m as f64 / t as f64).ln();
        }
        let geo = (log_sum / self.matches.len() as f64).exp();
        100.0 * geo * brevity_penalty(self.hyp_len, self.ref_len)
    }
}

fn brevity_penalty(c: u64, r: u64) -> f64 {
    if c == 0 {
        0.0
    } else {
        (1.0 - r as f64 / c as f64).min(0.0).exp()
    }
}

/// Corpus-level BLEU in `[0, 100]`.
pub fn corpus_bleu<T: Eq + Hash>(pairs: &[EvalPair<T>], max_n: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::input("corpus BLEU needs at least one pair"));
    }
    if max_n == 0 {
        return Err(Error::param("max_n must be >= 1"));
    }
    if pairs.iter().any(|p| p.references.is_empty()) {
        return Err(Error::input("every pair needs a reference"));
    }
    let mut total = BleuStats::zero(max_n);
    for p in pairs {
        total.add(&BleuStats::compute(&p.hypothesis, &p.references, max_n));
    }
    Ok(total.bleu())
}

/// Sentence BLEU in `[0, 1]` for use as a reward. Unigram precision is
/// unsmoothed; higher orders use `(matches + 1) / (total + 1)`, so orders
/// with no hypothesis n-grams contribute 1.
pub fn sentence_bleu_smoothed<T: Eq + Hash>(hyp: &[T], reference: &[T], max_n: usize) -> f64 {
    if hyp.is_empty() || max_n == 0 {
        return 0.0;
    }
    let s = BleuStats::compute(hyp, &[reference], max_n);
    let mut log_sum = 0.0;
    for n in 0..max_n {
        let p = if n == 0 {
            s.matches[0] as f64 / s.totals[0] as f64
        } else {
            (s.matches[n] + 1) as f64 / (s.totals[n] + 1) as f64
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln();
    }
    (log_sum / max_n as f64).exp() * brevity_penalty(s.hyp_len, s.ref_len)
}

/// Distinct n-grams across all outputs divided by the total token count.
pub fn distinct_n<T: Eq + Hash, S: AsRef<[T]>>(outputs: &[S], n: usize) -> f64 {
    let total: usize = outputs.iter().map(|o| o.as_ref().len()).sum();
    if total == 0 || n == 0 {
        return 0.0;
    }
    let mut seen: HashSet<&[T]> = HashSet::new();
    for o in outputs {
        let o = o.as_ref();
        if o.len() >= n {
            seen.extend(o.windows(n));
        }
    }
    seen.len() as f64 / total as f64
}

/// ROUGE-2 recall: clipped bigram matches over reference bigrams.
pub fn rouge2<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> f64 {
    if reference.len() < 2 {
        return 0.0;
    }
    let h = ngram_counts(hyp, 2);
    let r = ngram_counts(reference, 2);
    let matched: u64 = r.iter().map(|(g, &k)| k.min(h.get(g).copied().unwrap_or(0))).sum();
    matched as f64 / (reference.len() - 1) as f64
}
