//! Beam search with optional sibling-rank diversity penalty.
//!
//! Each step expands every live hypothesis into its top-K children, ranked
//! among siblings by conditional probability (rank `k'` starts at 1). Vanilla
//! selection keeps the K best children by cumulative log-probability `S`;
//! diverse selection ranks by `S - gamma * k'` instead. The penalty only
//! decides who survives: carried and reported scores are always plain `S`.

mod oracle;
mod search;

use std::cmp::Ordering;

pub use oracle::{exhaustive_argmax, exhaustive_argmax_capped, DEFAULT_ENUMERATION_CAP};
pub use search::{batch_decode, batch_decode_with, decode, decode_with};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqmodel::{validate_source, Conditioned, SequenceModel};
use crate::vocab::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    /// Cumulative log-probability of `tokens`.
    pub score: f64,
    pub finished: bool,
    /// Sibling rank taken at each step (diagnostics only).
    pub ranks: Vec<u32>,
}

impl Hypothesis {
    pub fn root() -> Self {
        Hypothesis {
            tokens: Vec::new(),
            score: 0.0,
            finished: false,
            ranks: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    /// Index of the parent in the beam it was expanded from.
    pub parent: usize,
    /// 1-based rank among siblings by descending conditional probability.
    pub rank: u32,
    pub token: TokenId,
    /// Parent score plus the token's log-probability.
    pub score: f64,
    /// `score - gamma * rank`; equals `score` until a diverse rule is applied.
    pub penalized: f64,
}

/// How survivors are chosen among the candidates of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    Vanilla,
    Diverse { gamma: f64 },
}

impl Selection {
    pub fn for_gamma(gamma: f64) -> Self {
        if gamma == 0.0 {
            Selection::Vanilla
        } else {
            Selection::Diverse { gamma }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LengthBounds {
    /// `min = max(1, floor(min_ratio * |X|))`, `max = ceil(max_ratio * |X|)`.
    Ratio {
        min_ratio: f64,
        max_ratio: f64,
    },
    Fixed {
        min: usize,
        max: usize,
    },
}

impl Default for LengthBounds {
    fn default() -> Self {
        LengthBounds::Ratio {
            min_ratio: 0.75,
            max_ratio: 1.5,
        }
    }
}

impl LengthBounds {
    /// Resolves to `(min_len, max_len)` counted in tokens before EOS.
    pub fn resolve(&self, source_len: usize) -> Result<(usize, usize)> {
        let (min, max) = match *self {
            LengthBounds::Fixed { min, max } => (min, max),
            LengthBounds::Ratio { min_ratio, max_ratio } => {
                if source_len == 0 {
                    return Err(Error::input("ratio length bounds need a non-empty source"));
                }
                if !(min_ratio >= 0.0 && max_ratio.is_finite()) {
                    return Err(Error::param("length ratios must be finite and >= 0"));
                }
                let n = source_len as f64;
                (
                    ((min_ratio * n).floor() as usize).max(1),
                    (max_ratio * n).ceil() as usize,
                )
            }
        };
        if min < 1 || max < min {
            return Err(Error::param(format!(
                "length bounds need max >= min >= 1, got min={min} max={max}"
            )));
        }
        Ok((min, max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub beam: usize,
    pub gamma: f64,
    pub lengths: LengthBounds,
    pub nbest_cap: usize,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            beam: 10,
            gamma: 0.0,
            lengths: LengthBounds::default(),
            nbest_cap: 100,
        }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::param("beam size must be >= 1"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::param(format!(
                "gamma must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        if self.nbest_cap == 0 {
            return Err(Error::param("nbest cap must be >= 1"));
        }
        Ok(())
    }
}

/// Finished hypotheses, best first.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NBestList {
    pub entries: Vec<Hypothesis>,
}

impl NBestList {
    pub fn best(&self) -> Option<&Hypothesis> {
        self.entries.first()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Finished-list order: higher score, then lexicographically smaller tokens
/// (so a prefix sorts before its extensions).
pub(crate) fn finished_order(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Selection order on a key: higher key, then lower token id, then lower parent.
fn candidate_order(key: fn(&Candidate) -> f64) -> impl Fn(&Candidate, &Candidate) -> Ordering {
    move |a, b| {
        key(b)
            .total_cmp(&key(a))
            .then(a.token.cmp(&b.token))
            .then(a.parent.cmp(&b.parent))
    }
}

/// Sorts candidates best-first under the given rule, filling in `penalized`.
pub fn rank_candidates(candidates: &mut [Candidate], selection: Selection) -> Result<()> {
    match selection {
        Selection::Vanilla => {
            for c in candidates.iter_mut() {
                c.penalized = c.score;
            }
            candidates.sort_by(candidate_order(|c| c.score));
        }
        Selection::Diverse { gamma } => {
            if !(gamma >= 0.0 && gamma.is_finite()) {
                return Err(Error::param(format!("gamma must be finite and >= 0, got {gamma}")));
            }
            for c in candidates.iter_mut() {
                c.penalized = c.score - gamma * c.rank as f64;
            }
            candidates.sort_by(candidate_order(|c| c.penalized));
        }
    }
    Ok(())
}

pub(crate) fn child(parent: &Hypothesis, c: &Candidate, eos: TokenId) -> Hypothesis {
    let mut tokens = Vec::with_capacity(parent.tokens.len() + 1);
    tokens.extend_from_slice(&parent.tokens);
    tokens.push(c.token);
    let mut ranks = Vec::with_capacity(parent.ranks.len() + 1);
    ranks.extend_from_slice(&parent.ranks);
    ranks.push(c.rank);
    Hypothesis {
        tokens,
        score: c.score,
        finished: c.token == eos,
        ranks,
    }
}

/// Top-K survivors by `S`.
pub fn select_vanilla(beam: &[Hypothesis], candidates: &[Candidate], k: usize, eos: TokenId) -> Vec<Hypothesis> {
    let mut ranked = candidates.to_vec();
    rank_candidates(&mut ranked, Selection::Vanilla).expect("vanilla ranking cannot fail");
    ranked.iter().take(k).map(|c| child(&beam[c.parent], c, eos)).collect()
}

/// Top-K survivors by `S - gamma * k'`. Survivors carry the unpenalized `S`.
pub fn select_diverse(
    beam: &[Hypothesis],
    candidates: &[Candidate],
    k: usize,
    gamma: f64,
    eos: TokenId,
) -> Result<Vec<Hypothesis>> {
    let mut ranked = candidates.to_vec();
    rank_candidates(&mut ranked, Selection::Diverse { gamma })?;
    Ok(ranked.iter().take(k).map(|c| child(&beam[c.parent], c, eos)).collect())
}

/// Scratch space reused across expansion calls.
pub(crate) struct ExpandScratch {
    probs: Vec<f64>,
    order: Vec<(f64, TokenId)>,
}

impl ExpandScratch {
    pub(crate) fn new(vocab_size: usize) -> Self {
        ExpandScratch {
            probs: vec![0.0; vocab_size],
            order: Vec::with_capacity(vocab_size),
        }
    }
}

fn by_prob_desc(a: &(f64, TokenId), b: &(f64, TokenId)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Expands each parent into at most `k` children. Zero-probability tokens are
/// never expanded.
pub(crate) fn expand_bound(
    beam: &[Hypothesis],
    bound: &dyn Conditioned,
    k: usize,
    scratch: &mut ExpandScratch,
    out: &mut Vec<Candidate>,
) {
    out.clear();
    for (pi, parent) in beam.iter().enumerate() {
        bound.fill_probs(&parent.tokens, &mut scratch.probs);
        scratch.order.clear();
        scratch.order.extend(
            scratch
                .probs
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(t, &p)| (p, t as TokenId)),
        );
        if scratch.order.len() > k {
            scratch.order.select_nth_unstable_by(k - 1, by_prob_desc);
            scratch.order.truncate(k);
        }
        scratch.order.sort_unstable_by(by_prob_desc);
        out.extend(scratch.order.iter().enumerate().map(|(r, &(p, token))| {
            let score = parent.score + p.ln();
            Candidate {
                parent: pi,
                rank: r as u32 + 1,
                token,
                score,
                penalized: score,
            }
        }));
    }
}

/// Children of every hypothesis in `beam`: the top `min(k, |V|)` tokens per
/// parent with sibling ranks `1..`.
pub fn expand(beam: &[Hypothesis], model: &dyn SequenceModel, source: &[TokenId], k: usize) -> Result<Vec<Candidate>> {
    if beam.is_empty() {
        return Err(Error::State("cannot expand an empty beam".into()));
    }
    if k == 0 {
        return Err(Error::param("beam size must be >= 1"));
    }
    if beam.iter().any(|h| h.finished || h.tokens.contains(&model.eos_id())) {
        return Err(Error::State("beam contains a finished hypothesis".into()));
    }
    validate_source(model, source)?;
    for h in beam {
        crate::vocab::validate_ids(&h.tokens, model.vocab_size(), model.eos_id())?;
    }
    let bound = model.condition(source);
    let mut scratch = ExpandScratch::new(model.vocab_size());
    let mut out = Vec::with_capacity(beam.len() * k);
    expand_bound(beam, bound.as_ref(), k, &mut scratch, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::TabularModel;
    use crate::vocab::Vocabulary;

    fn cand(parent: usize, rank: u32, token: TokenId, score: f64) -> Candidate {
        Candidate {
            parent,
            rank,
            token,
            score,
            penalized: score,
        }
    }

    fn parents(n: usize) -> Vec<Hypothesis> {
        (0..n)
            .map(|i| Hypothesis {
                tokens: vec![i as TokenId],
                score: 0.0,
                finished: false,
                ranks: vec![1],
            })
            .collect()
    }

    fn abc() -> TabularModel {
        let vocab = Vocabulary::new(["a", "b", "c", "</s>"].iter().map(|s| s.to_string()).collect(), 3).unwrap();
        let mut m = TabularModel::new(vocab, vec![0.25; 4]).unwrap();
        m.insert(vec![0], vec![], vec![0.0, 0.7, 0.2, 0.1]).unwrap();
        m
    }

    #[test]
    fn expand_hand_example() {
        let m = abc();
        let c = expand(&[Hypothesis::root()], &m, &[0], 2).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!((c[0].token, c[0].rank, c[0].score), (1, 1, 0.7f64.ln()));
        assert_eq!((c[1].token, c[1].rank, c[1].score), (2, 2, 0.2f64.ln()));
    }

    #[test]
    fn expand_small_vocab_caps_children() {
        let v = Vocabulary::synthetic(3);
        let m = TabularModel::new(v, vec![0.2, 0.3, 0.5]).unwrap();
        let beam = vec![
            Hypothesis::root(),
            Hypothesis {
                tokens: vec![0],
                score: -1.0,
                finished: false,
                ranks: vec![1],
            },
        ];
        let c = expand(&beam, &m, &[], 5).unwrap();
        assert_eq!(c.len(), 6);
        for x in &c {
            let parent = &beam[x.parent];
            let p = [0.2f64, 0.3, 0.5][x.token as usize];
            assert_eq!(x.score, parent.score + p.ln());
        }
        assert_eq!(
            c.iter().filter(|x| x.parent == 0).map(|x| x.token).collect::<Vec<_>>(),
            vec![2, 1, 0]
        );
    }

    #[test]
    fn expand_rejects_finished_and_empty() {
        let m = abc();
        let done = Hypothesis {
            tokens: vec![3],
            score: 0.0,
            finished: true,
            ranks: vec![1],
        };
        assert!(matches!(expand(&[done], &m, &[], 2), Err(Error::State(_))));
        assert!(matches!(expand(&[], &m, &[], 2), Err(Error::State(_))));
    }

    #[test]
    fn expand_ties_break_on_token_id() {
        let v = Vocabulary::synthetic(4);
        let m = TabularModel::new(v, vec![0.3, 0.3, 0.3, 0.1]).unwrap();
        let c = expand(&[Hypothesis::root()], &m, &[], 2).unwrap();
        assert_eq!(c.iter().map(|x| x.token).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn vanilla_top_k() {
        let beam = parents(3);
        let c = vec![cand(0, 1, 5, -3.0), cand(1, 1, 6, -1.0), cand(2, 1, 7, -2.0)];
        let s = select_vanilla(&beam, &c, 2, 99);
        assert_eq!(s.iter().map(|h| h.score).collect::<Vec<_>>(), vec![-1.0, -2.0]);
        assert_eq!(s[0].tokens, vec![1, 6]);
    }

    #[test]
    fn vanilla_tie_rule() {
        let beam = parents(3);
        let c = vec![cand(0, 1, 5, -1.0), cand(2, 1, 4, -1.0), cand(1, 1, 4, -1.0)];
        let s = select_vanilla(&beam, &c, 3, 99);
        // token 4 before 5, then lower parent first
        assert_eq!(
            s.iter().map(|h| h.tokens.clone()).collect::<Vec<_>>(),
            vec![vec![1, 4], vec![2, 4], vec![0, 5]]
        );
    }

    #[test]
    fn diverse_hand_example() {
        // A1=-1.0, A2=-1.05, B1=-1.3, B2=-1.6, gamma=0.3
        let beam = parents(2);
        let c = vec![
            cand(0, 1, 10, -1.0),
            cand(0, 2, 11, -1.05),
            cand(1, 1, 12, -1.3),
            cand(1, 2, 13, -1.6),
        ];
        let mut ranked = c.clone();
        rank_candidates(&mut ranked, Selection::Diverse { gamma: 0.3 }).unwrap();
        let hat: Vec<(TokenId, f64)> = ranked.iter().map(|x| (x.token, x.penalized)).collect();
        let expect = [(10, -1.3), (12, -1.6), (11, -1.65), (13, -2.2)];
        for ((t, s), (et, es)) in hat.iter().zip(expect) {
            assert_eq!(*t, et);
            assert!((s - es).abs() < 1e-12);
        }
        let d = select_diverse(&beam, &c, 2, 0.3, 99).unwrap();
        assert_eq!(d.iter().map(|h| h.tokens[1]).collect::<Vec<_>>(), vec![10, 12]);
        // survivors keep S, not S-hat
        assert_eq!(d[1].score, -1.3);
        let v = select_vanilla(&beam, &c, 2, 99);
        assert_eq!(v.iter().map(|h| h.tokens[1]).collect::<Vec<_>>(), vec![10, 11]);
    }

    #[test]
    fn diverse_gamma_zero_matches_vanilla() {
        let beam = parents(2);
        let c = vec![
            cand(0, 1, 1, -1.0),
            cand(0, 2, 2, -1.0),
            cand(1, 1, 1, -0.5),
            cand(1, 2, 3, -2.0),
        ];
        assert_eq!(
            select_diverse(&beam, &c, 3, 0.0, 99).unwrap(),
            select_vanilla(&beam, &c, 3, 99)
        );
    }

    #[test]
    fn negative_gamma_rejected() {
        let beam = parents(1);
        let c = vec![cand(0, 1, 1, -1.0)];
        assert!(matches!(
            select_diverse(&beam, &c, 1, -0.1, 99),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn ratio_bounds() {
        assert_eq!(LengthBounds::default().resolve(4).unwrap(), (3, 6));
        assert_eq!(LengthBounds::default().resolve(1).unwrap(), (1, 2));
        assert!(LengthBounds::default().resolve(0).is_err());
        assert!(LengthBounds::Fixed { min: 3, max: 2 }.resolve(0).is_err());
        assert!(LengthBounds::Fixed { min: 0, max: 2 }.resolve(0).is_err());
    }
}
