#![allow(dead_code)]

use divbeam_core::decoder::{decode, DecodeParams, LengthBounds};
use divbeam_core::diverserl::GammaGrid;
use divbeam_core::metrics::sentence_bleu_smoothed;
use divbeam_core::{Sequence, TabularModel, TokenId, Vocabulary};
use rand::Rng;

// Bandit vocabulary: 19 words plus EOS (id 19).
pub const A: TokenId = 0;
pub const B: TokenId = 1;
pub const A1: TokenId = 2;
pub const A2: TokenId = 3;
pub const B1: TokenId = 4;
pub const B2: TokenId = 5;
pub const BANDIT_V: usize = 20;
const FILLERS: std::ops::Range<TokenId> = 6..19;
const BANDIT_EOS: TokenId = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    /// Short sources; the reference is the second child of the best root
    /// token, which plain beam search keeps.
    A,
    /// Long sources; the reference lives under the second root token, which
    /// only survives once the sibling penalty exceeds `ln(0.2 / 0.16)`.
    B,
}

/// Puts `mass` on `heads` and spreads the rest evenly over the fillers.
fn dist(heads: &[(TokenId, f64)]) -> Vec<f64> {
    let mut p = vec![0.0; BANDIT_V];
    let used: f64 = heads.iter().map(|h| h.1).sum();
    let n = FILLERS.len() as f64;
    for t in FILLERS {
        p[t as usize] = (1.0 - used) / n;
    }
    for &(t, m) in heads {
        p[t as usize] += m;
    }
    p
}

fn closing(eos_mass: f64) -> Vec<f64> {
    dist(&[(BANDIT_EOS, eos_mass)])
}

pub struct Bandit {
    pub model: TabularModel,
    pub train: Vec<(Sequence, Sequence)>,
    pub held_out: Vec<(Sequence, Sequence)>,
}

pub fn bandit_source<R: Rng>(rng: &mut R, class: Class) -> Vec<TokenId> {
    let n = match class {
        Class::A => rng.gen_range(1..=3),
        Class::B => rng.gen_range(6..=8),
    };
    (0..n).map(|_| rng.gen_range(0..19)).collect()
}

fn add_source(model: &mut TabularModel, src: &[TokenId], class: Class) -> Sequence {
    let ins = |m: &mut TabularModel, prefix: Vec<TokenId>, p: Vec<f64>| m.insert(src.to_vec(), prefix, p).unwrap();
    ins(model, vec![], dist(&[(A, 0.5), (B, 0.4)]));
    ins(model, vec![A], dist(&[(A1, 0.5), (A2, 0.4)]));
    ins(model, vec![B], dist(&[(B1, 0.4), (B2, 0.3)]));
    let (good, reference) = match class {
        Class::A => (vec![A, A2], vec![A, A2]),
        Class::B => (vec![B, B1], vec![B, B1]),
    };
    for prefix in [vec![A, A1], vec![A, A2], vec![B, B1], vec![B, B2]] {
        let p = if prefix == good { closing(1.0) } else { closing(0.01) };
        ins(model, prefix, p);
    }
    Sequence(reference)
}

/// Classes alternate A, B, A, ... in both splits.
pub fn build_bandit<R: Rng>(rng: &mut R, n_train: usize, n_held_out: usize) -> Bandit {
    let vocab = Vocabulary::synthetic(BANDIT_V);
    let mut model = TabularModel::new(vocab, vec![1.0 / BANDIT_V as f64; BANDIT_V]).unwrap();
    let mut split = |n: usize, model: &mut TabularModel| -> Vec<(Sequence, Sequence)> {
        (0..n)
            .map(|i| {
                let class = if i % 2 == 0 { Class::A } else { Class::B };
                let src = bandit_source(rng, class);
                let reference = add_source(model, &src, class);
                (Sequence(src), reference)
            })
            .collect()
    };
    let train = split(n_train, &mut model);
    let held_out = split(n_held_out, &mut model);
    Bandit { model, train, held_out }
}

pub fn bandit_params() -> DecodeParams {
    DecodeParams {
        beam: 2,
        gamma: 0.0,
        lengths: LengthBounds::Fixed { min: 2, max: 2 },
        nbest_cap: 100,
    }
}

/// Top-1 reward of every grid value for one input.
pub fn reward_sweep(model: &TabularModel, src: &[TokenId], reference: &[TokenId], grid: &GammaGrid) -> Vec<f64> {
    grid.values()
        .iter()
        .map(|&gamma| {
            let nb = decode(
                model,
                src,
                &DecodeParams {
                    gamma,
                    ..bandit_params()
                },
            )
            .unwrap();
            let best = nb.best().unwrap();
            sentence_bleu_smoothed(&best.tokens[..best.tokens.len() - 1], reference, 4)
        })
        .collect()
}
