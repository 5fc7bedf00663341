use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ngram::{NGramRepr, NextCounts};
use super::{smoothed, train_lm, Conditioned, NGramLM, SequenceModel};
use crate::error::{Error, Result};
use crate::vocab::{Sequence, TokenId, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub order: usize,
    /// Weight of the target n-gram model; `1 - lambda` goes to the lexical table.
    pub lambda: f64,
    pub alpha: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            order: 3,
            lambda: 0.5,
            alpha: 0.1,
        }
    }
}

/// Trainable stand-in for an encoder-decoder: a probability-space mixture of
/// a target n-gram model and a smoothed lexical translation table,
///
/// `p(t | X, prefix) = lambda * p_ngram(t | prefix) + (1 - lambda) * mean_{s in X} p_lex(t | s)`
///
/// with `p_lex(t | s) = (count(s, t) + alpha) / (sum_t' count(s, t') + alpha * |V|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    source_vocab: Vocabulary,
    lm: NGramLM,
    /// Indexed by source token id.
    lex: Vec<NextCounts>,
    lambda: f64,
}

/// Builds a [`FusionModel`] from parallel data. Lexical counts add one for
/// every (source token occurrence, target token occurrence) pair within a
/// sentence pair; EOS takes no part in them.
pub fn train_fusion(
    pairs: &[(Sequence, Sequence)],
    source_vocab: &Vocabulary,
    target_vocab: &Vocabulary,
    cfg: FusionConfig,
) -> Result<FusionModel> {
    if !(0.0..=1.0).contains(&cfg.lambda) {
        return Err(Error::param(format!("lambda must be in [0, 1], got {}", cfg.lambda)));
    }
    if pairs.is_empty() {
        return Err(Error::Training("empty corpus".into()));
    }
    let targets: Vec<Sequence> = pairs.iter().map(|(_, t)| t.clone()).collect();
    let lm = train_lm(&targets, target_vocab, cfg.order, cfg.alpha)?;
    let mut raw: Vec<BTreeMap<TokenId, u64>> = vec![BTreeMap::new(); source_vocab.size()];
    for (src, tgt) in pairs {
        source_vocab.validate(src)?;
        if src.contains(&source_vocab.eos_id()) {
            return Err(Error::input("source sequence contains EOS"));
        }
        for &s in src.iter() {
            let row = &mut raw[s as usize];
            for &t in tgt.iter() {
                *row.entry(t).or_default() += 1;
            }
        }
    }
    Ok(FusionModel {
        source_vocab: source_vocab.clone(),
        lm,
        lex: raw
            .into_iter()
            .map(|m| NextCounts {
                total: m.values().sum(),
                next: m.into_iter().collect(),
            })
            .collect(),
        lambda: cfg.lambda,
    })
}

/// Backward model `p(X | Y)`: the forward construction on role-swapped pairs.
pub fn train_backward(
    pairs: &[(Sequence, Sequence)],
    source_vocab: &Vocabulary,
    target_vocab: &Vocabulary,
    cfg: FusionConfig,
) -> Result<FusionModel> {
    let swapped: Vec<_> = pairs.iter().map(|(s, t)| (t.clone(), s.clone())).collect();
    train_fusion(&swapped, target_vocab, source_vocab, cfg)
}

impl FusionModel {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn alpha(&self) -> f64 {
        self.lm.alpha()
    }

    pub fn target_lm(&self) -> &NGramLM {
        &self.lm
    }

    pub fn source_vocab(&self) -> &Vocabulary {
        &self.source_vocab
    }

    pub fn target_vocab(&self) -> &Vocabulary {
        self.lm.vocab()
    }

    /// `p_lex(target | source)`.
    pub fn lexical_prob(&self, source: TokenId, target: TokenId) -> f64 {
        let row = &self.lex[source as usize];
        smoothed(row.count(target), row.total, self.alpha(), self.lm.vocab().size())
    }

    /// Same counts with a different interpolation weight or smoothing.
    pub fn with_params(&self, lambda: f64, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::param(format!("lambda must be in [0, 1], got {lambda}")));
        }
        Ok(FusionModel {
            lm: self.lm.with_alpha(alpha)?,
            lambda,
            ..self.clone()
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(&FusionRepr::from(self)).map_err(|e| Error::input(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: FusionRepr = serde_json::from_str(text).map_err(|e| Error::input(e.to_string()))?;
        r.try_into()
    }
}

struct Bound<'a> {
    model: &'a FusionModel,
    /// Mean lexical distribution over source positions; `None` when lambda = 1.
    lex_mean: Option<Vec<f64>>,
}

impl Conditioned for Bound<'_> {
    fn fill_probs(&self, prefix: &[TokenId], out: &mut [f64]) {
        self.model.lm.fill_probs(prefix, out);
        if let Some(lex) = &self.lex_mean {
            let l = self.model.lambda;
            for (o, &x) in out.iter_mut().zip(lex) {
                *o = l * *o + (1.0 - l) * x;
            }
        }
    }
}

impl SequenceModel for FusionModel {
    fn vocab_size(&self) -> usize {
        self.lm.vocab().size()
    }

    fn eos_id(&self) -> TokenId {
        self.lm.vocab().eos_id()
    }

    fn source_vocab_size(&self) -> Option<usize> {
        Some(self.source_vocab.size())
    }

    fn condition<'a>(&'a self, source: &'a [TokenId]) -> Box<dyn Conditioned + 'a> {
        let size = self.vocab_size();
        let lex_mean = (self.lambda < 1.0).then(|| {
            if source.is_empty() {
                // An empty source behaves like a single unseen source token.
                return vec![1.0 / size as f64; size];
            }
            let mut acc = vec![0.0; size];
            let mut row = vec![0.0; size];
            for &s in source {
                self.lex[s as usize].fill(self.alpha(), size, &mut row);
                for (a, r) in acc.iter_mut().zip(&row) {
                    *a += r;
                }
            }
            let n = source.len() as f64;
            acc.iter_mut().for_each(|a| *a /= n);
            acc
        });
        Box::new(Bound { model: self, lex_mean })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FusionRepr {
    lambda: f64,
    source_vocab: Vocabulary,
    target_lm: NGramRepr,
    lexical: Vec<Vec<(TokenId, u64)>>,
}

impl From<&FusionModel> for FusionRepr {
    fn from(m: &FusionModel) -> Self {
        FusionRepr {
            lambda: m.lambda,
            source_vocab: m.source_vocab.clone(),
            target_lm: NGramRepr::from(&m.lm),
            lexical: m.lex.iter().map(|r| r.next.clone()).collect(),
        }
    }
}

impl TryFrom<FusionRepr> for FusionModel {
    type Error = Error;

    fn try_from(r: FusionRepr) -> Result<Self> {
        let lm = NGramLM::try_from(r.target_lm)?;
        if r.lexical.len() != r.source_vocab.size() || !(0.0..=1.0).contains(&r.lambda) {
            return Err(Error::input("malformed fusion model"));
        }
        let size = lm.vocab().size();
        let lex = r
            .lexical
            .into_iter()
            .map(|next| {
                if next.iter().any(|&(t, _)| t as usize >= size) || !next.windows(2).all(|w| w[0].0 < w[1].0) {
                    return Err(Error::input("malformed lexical row"));
                }
                Ok(NextCounts {
                    total: next.iter().map(|&(_, c)| c).sum(),
                    next,
                })
            })
            .collect::<Result<_>>()?;
        Ok(FusionModel {
            source_vocab: r.source_vocab,
            lm,
            lex,
            lambda: r.lambda,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::next_logprobs;

    fn seq(v: &[TokenId]) -> Sequence {
        Sequence(v.to_vec())
    }

    #[test]
    fn lexical_hand_ratio() {
        // source {x, EOS}; target {y, z, EOS}
        let sv = Vocabulary::new(vec!["x".into(), "</s>".into()], 1).unwrap();
        let tv = Vocabulary::new(vec!["y".into(), "z".into(), "</s>".into()], 2).unwrap();
        let m = train_fusion(
            &[(seq(&[0]), seq(&[0]))],
            &sv,
            &tv,
            FusionConfig {
                order: 2,
                lambda: 0.5,
                alpha: 1.0,
            },
        )
        .unwrap();
        assert_eq!(m.lexical_prob(0, 0), 0.5);
        assert_eq!(m.lexical_prob(0, 1), 0.25);
    }

    #[test]
    fn lambda_one_ignores_source() {
        let v = Vocabulary::synthetic(5);
        let pairs = vec![(seq(&[0, 1]), seq(&[2, 3])), (seq(&[3]), seq(&[0, 0, 1]))];
        let m = train_fusion(
            &pairs,
            &v,
            &v,
            FusionConfig {
                order: 2,
                lambda: 1.0,
                alpha: 0.3,
            },
        )
        .unwrap();
        for prefix in [&[][..], &[2], &[0, 1]] {
            let lm = next_logprobs(m.target_lm(), &[], prefix).unwrap();
            for src in [&[][..], &[0], &[3, 3, 1]] {
                assert_eq!(next_logprobs(&m, src, prefix).unwrap(), lm);
            }
        }
    }

    #[test]
    fn empty_corpus_and_bad_lambda() {
        let v = Vocabulary::synthetic(3);
        assert!(matches!(
            train_fusion(&[], &v, &v, FusionConfig::default()),
            Err(Error::Training(_))
        ));
        let cfg = FusionConfig {
            lambda: 1.5,
            ..FusionConfig::default()
        };
        assert!(train_fusion(&[(seq(&[0]), seq(&[1]))], &v, &v, cfg).is_err());
    }

    #[test]
    fn backward_is_forward_on_swapped_pairs() {
        let sv = Vocabulary::synthetic(4);
        let tv = Vocabulary::synthetic(6);
        let pairs = vec![(seq(&[0, 1]), seq(&[4, 2])), (seq(&[2]), seq(&[0, 1, 3]))];
        let swapped: Vec<_> = pairs.iter().map(|(a, b)| (b.clone(), a.clone())).collect();
        let cfg = FusionConfig::default();
        assert_eq!(
            train_backward(&pairs, &sv, &tv, cfg).unwrap(),
            train_fusion(&swapped, &tv, &sv, cfg).unwrap()
        );
    }

    #[test]
    fn json_round_trip() {
        let v = Vocabulary::synthetic(6);
        let pairs = vec![(seq(&[0, 1, 1]), seq(&[2, 3])), (seq(&[4]), seq(&[0, 0, 1]))];
        let m = train_fusion(
            &pairs,
            &v,
            &v,
            FusionConfig {
                order: 3,
                lambda: 0.3,
                alpha: 0.1,
            },
        )
        .unwrap();
        let back = FusionModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(
            next_logprobs(&back, &[1, 4], &[2]).unwrap(),
            next_logprobs(&m, &[1, 4], &[2]).unwrap()
        );
    }
}
