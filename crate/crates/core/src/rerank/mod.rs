//! N-best feature extraction and linear reranking.

mod mert;

pub use mert::{dev_bleu, mert_tune, DevList, MertConfig, MertResult, MertStep};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::decoder::{Hypothesis, NBestList};
use crate::error::{Error, Result};
use crate::seqmodel::{sequence_logprob, SequenceModel};
use crate::vocab::{Sequence, TokenId};

/// Canonical feature order. `tfidf_avg` is only active when requested.
pub const FEATURE_NAMES: [&str; 5] = ["fwd_logp", "bwd_logp", "length", "lm_logp", "tfidf_avg"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// `log p(Y | X)` including the EOS step.
    pub fwd_logp: f64,
    /// `log p(X | Y)` under the backward model, EOS appended to X.
    pub bwd_logp: f64,
    /// Token count of Y without EOS.
    pub length: f64,
    /// `log p(Y)` of the EOS-stripped body.
    pub lm_logp: f64,
    pub tfidf_avg: Option<f64>,
}

impl FeatureVector {
    pub fn values(&self) -> Vec<f64> {
        let mut v = vec![self.fwd_logp, self.bwd_logp, self.length, self.lm_logp];
        v.extend(self.tfidf_avg);
        v
    }

    pub fn names(&self) -> &'static [&'static str] {
        let n = if self.tfidf_avg.is_some() { 5 } else { 4 };
        &FEATURE_NAMES[..n]
    }

    /// Rebuilds a vector from name/value pairs, e.g. a persisted record.
    pub fn from_named(values: &HashMap<String, f64>) -> Result<Self> {
        let get = |k: &str| {
            values
                .get(k)
                .copied()
                .ok_or_else(|| Error::input(format!("missing feature {k:?}")))
        };
        if let Some(k) = values.keys().find(|k| !FEATURE_NAMES.contains(&k.as_str())) {
            return Err(Error::input(format!("unknown feature {k:?}")));
        }
        Ok(FeatureVector {
            fwd_logp: get("fwd_logp")?,
            bwd_logp: get("bwd_logp")?,
            length: get("length")?,
            lm_logp: get("lm_logp")?,
            tfidf_avg: values.get("tfidf_avg").copied(),
        })
    }
}

/// Per-token inverse document frequencies; unknown tokens score 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdfTable {
    idf: HashMap<TokenId, f64>,
}

impl IdfTable {
    pub fn new(idf: HashMap<TokenId, f64>) -> Result<Self> {
        if idf.values().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::input("idf values must be finite and >= 0"));
        }
        Ok(IdfTable { idf })
    }

    /// `idf(t) = ln(N / (1 + df(t)))`, floored at 0, over a document collection.
    pub fn from_documents(docs: &[Sequence]) -> Self {
        let mut df: HashMap<TokenId, u64> = HashMap::new();
        for d in docs {
            let mut seen: Vec<TokenId> = d.to_vec();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        let n = docs.len() as f64;
        IdfTable {
            idf: df
                .into_iter()
                .map(|(t, c)| (t, (n / (1.0 + c as f64)).ln().max(0.0)))
                .collect(),
        }
    }

    pub fn get(&self, token: TokenId) -> f64 {
        self.idf.get(&token).copied().unwrap_or(0.0)
    }

    pub fn entries(&self) -> impl Iterator<Item = (TokenId, f64)> + '_ {
        self.idf.iter().map(|(&t, &v)| (t, v))
    }
}

/// Mean over positions of `tf(token in output) * idf(token)`; 0 for empty output.
pub fn tfidf_avg(idf: &IdfTable, output: &[TokenId]) -> f64 {
    if output.is_empty() {
        return 0.0;
    }
    let mut tf: HashMap<TokenId, u64> = HashMap::new();
    for &t in output {
        *tf.entry(t).or_default() += 1;
    }
    let sum: f64 = output.iter().map(|t| tf[t] as f64 * idf.get(*t)).sum();
    sum / output.len() as f64
}

/// Models used to featurize hypotheses.
#[derive(Clone, Copy)]
pub struct FeatureModels<'a> {
    pub forward: &'a dyn SequenceModel,
    pub backward: &'a dyn SequenceModel,
    pub lm: &'a dyn SequenceModel,
    pub idf: Option<&'a IdfTable>,
    pub use_tfidf: bool,
}

pub fn extract_features(source: &[TokenId], hyp: &Hypothesis, models: &FeatureModels) -> Result<FeatureVector> {
    if !hyp.finished {
        return Err(Error::State("cannot featurize an unfinished hypothesis".into()));
    }
    let eos = models.forward.eos_id();
    let body = match hyp.tokens.split_last() {
        Some((&last, body)) if last == eos => body,
        _ => &hyp.tokens[..],
    };
    let tfidf = if models.use_tfidf {
        let idf = models
            .idf
            .ok_or_else(|| Error::Config("tf-idf feature requested without an idf table".into()))?;
        Some(tfidf_avg(idf, body))
    } else {
        None
    };
    let mut x_eos = source.to_vec();
    x_eos.push(models.backward.eos_id());
    Ok(FeatureVector {
        fwd_logp: sequence_logprob(models.forward, source, &hyp.tokens)?,
        bwd_logp: sequence_logprob(models.backward, body, &x_eos)?,
        length: body.len() as f64,
        lm_logp: sequence_logprob(models.lm, &[], body)?,
        tfidf_avg: tfidf,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeights {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl FeatureWeights {
    pub fn new(names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(Error::input("weight names and values differ in length"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature weight".into()));
        }
        Ok(FeatureWeights { names, values })
    }

    /// Unit weight on `fwd_logp`, zero elsewhere: plain model-score order.
    pub fn forward_only(use_tfidf: bool) -> Self {
        let n = if use_tfidf { 5 } else { 4 };
        let mut values = vec![0.0; n];
        values[0] = 1.0;
        FeatureWeights {
            names: FEATURE_NAMES[..n].iter().map(|s| s.to_string()).collect(),
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub(crate) fn dot(w: &[f64], f: &[f64]) -> f64 {
    w.iter().zip(f).map(|(a, b)| a * b).sum()
}

/// Indices of `rows` ordered by descending `w . f`; equal scores keep input order.
pub fn rerank_order(rows: &[Vec<f64>], weights: &[f64]) -> Result<Vec<usize>> {
    if let Some(r) = rows.iter().find(|r| r.len() != weights.len()) {
        return Err(Error::input(format!(
            "feature dimension {} does not match {} weights",
            r.len(),
            weights.len()
        )));
    }
    let scores: Vec<f64> = rows.iter().map(|r| dot(weights, r)).collect();
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    Ok(idx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizedEntry {
    pub hypothesis: Hypothesis,
    pub features: FeatureVector,
}

/// Featurizes every entry of an N-best list.
pub fn featurize_nbest(source: &[TokenId], nbest: &NBestList, models: &FeatureModels) -> Result<Vec<FeaturizedEntry>> {
    nbest
        .entries
        .iter()
        .map(|h| {
            Ok(FeaturizedEntry {
                hypothesis: h.clone(),
                features: extract_features(source, h, models)?,
            })
        })
        .collect()
}

/// Reorders a featurized N-best list by linear score (stable).
pub fn rerank_nbest(entries: &[FeaturizedEntry], weights: &FeatureWeights) -> Result<Vec<FeaturizedEntry>> {
    let rows: Vec<Vec<f64>> = entries.iter().map(|e| e.features.values()).collect();
    Ok(rerank_order(&rows, &weights.values)?
        .into_iter()
        .map(|i| entries[i].clone())
        .collect())
}
