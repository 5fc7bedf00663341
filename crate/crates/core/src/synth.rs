//! Random models and corpora for oracle checks, tests and benchmarks.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::seqmodel::TabularModel;
use crate::vocab::{Sequence, TokenId, Vocabulary};

/// `p_i ∝ exp(sharpness * u_i)` with `u_i ~ U[0, 1)`.
pub fn random_distribution<R: Rng + ?Sized>(rng: &mut R, size: usize, sharpness: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..size).map(|_| (sharpness * rng.gen::<f64>()).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Tabular model over `Vocabulary::synthetic(vocab_size)` with an explicit
/// random distribution for every EOS-free prefix of length `<= depth` (empty
/// source), stopping early once `max_entries` is reached. Other states share
/// a random default.
pub fn random_tabular<R: Rng + ?Sized>(
    rng: &mut R,
    vocab_size: usize,
    depth: usize,
    max_entries: usize,
    sharpness: f64,
) -> TabularModel {
    let vocab = Vocabulary::synthetic(vocab_size);
    let eos = vocab.eos_id();
    let default = random_distribution(rng, vocab_size, sharpness);
    let mut m = TabularModel::new(vocab, default).expect("random distribution is normalized");
    let mut frontier: Vec<Vec<TokenId>> = vec![Vec::new()];
    let mut added = 0;
    'outer: for _ in 0..=depth {
        let mut next = Vec::new();
        for prefix in frontier {
            if added >= max_entries {
                break 'outer;
            }
            let probs = random_distribution(rng, vocab_size, sharpness);
            m.insert(Vec::new(), prefix.clone(), probs).expect("valid entry");
            added += 1;
            for t in 0..vocab_size as TokenId {
                if t != eos {
                    let mut p = prefix.clone();
                    p.push(t);
                    next.push(p);
                }
            }
        }
        frontier = next;
    }
    m
}

/// A noisy word-for-word "translation" corpus over one shared vocabulary.
/// Each source token maps to a fixed target token with probability
/// `fidelity`, otherwise to a random one. Source tokens are Zipf-distributed.
pub fn random_parallel_corpus<R: Rng + ?Sized>(
    rng: &mut R,
    vocab_size: usize,
    n_pairs: usize,
    len: std::ops::RangeInclusive<usize>,
    fidelity: f64,
) -> (Vocabulary, Vec<(Sequence, Sequence)>) {
    let words = vocab_size - 1;
    let dictionary = random_dictionary(rng, words);
    let zipf: Vec<f64> = (1..=words).map(|r| 1.0 / r as f64).collect();
    let pairs = (0..n_pairs)
        .map(|_| {
            let n = rng.gen_range(len.clone());
            let src: Vec<TokenId> = (0..n).map(|_| draw(rng, &zipf)).collect();
            translate(rng, src, &dictionary, fidelity)
        })
        .collect();
    (Vocabulary::synthetic(vocab_size), pairs)
}

/// Like [`random_parallel_corpus`], but sources follow a random first-order
/// Markov chain in which every token has `branching` Zipf-weighted
/// successors, so word order carries signal a target LM can learn.
pub fn markov_parallel_corpus<R: Rng + ?Sized>(
    rng: &mut R,
    vocab_size: usize,
    n_pairs: usize,
    len: std::ops::RangeInclusive<usize>,
    fidelity: f64,
    branching: usize,
) -> (Vocabulary, Vec<(Sequence, Sequence)>) {
    let words = vocab_size - 1;
    let branching = branching.clamp(1, words);
    let dictionary = random_dictionary(rng, words);
    let zipf: Vec<f64> = (1..=branching).map(|r| 1.0 / r as f64).collect();
    let all: Vec<TokenId> = (0..words as TokenId).collect();
    let successors: Vec<Vec<TokenId>> = (0..words)
        .map(|_| all.choose_multiple(rng, branching).copied().collect())
        .collect();
    let pairs = (0..n_pairs)
        .map(|_| {
            let n = rng.gen_range(len.clone());
            let mut src = vec![rng.gen_range(0..words as TokenId)];
            while src.len() < n {
                let prev = *src.last().unwrap() as usize;
                src.push(successors[prev][draw(rng, &zipf) as usize]);
            }
            translate(rng, src, &dictionary, fidelity)
        })
        .collect();
    (Vocabulary::synthetic(vocab_size), pairs)
}

fn random_dictionary<R: Rng + ?Sized>(rng: &mut R, words: usize) -> Vec<TokenId> {
    let mut dictionary: Vec<TokenId> = (0..words as TokenId).collect();
    dictionary.shuffle(rng);
    dictionary
}

/// Index drawn proportionally to `weights`.
fn draw<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> TokenId {
    let z: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * z;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i as TokenId;
        }
        u -= w;
    }
    (weights.len() - 1) as TokenId
}

fn translate<R: Rng + ?Sized>(
    rng: &mut R,
    src: Vec<TokenId>,
    dictionary: &[TokenId],
    fidelity: f64,
) -> (Sequence, Sequence) {
    let words = dictionary.len() as TokenId;
    let tgt = src
        .iter()
        .map(|&s| {
            if rng.gen::<f64>() < fidelity {
                dictionary[s as usize]
            } else {
                rng.gen_range(0..words)
            }
        })
        .collect();
    (Sequence(src), Sequence(tgt))
}
