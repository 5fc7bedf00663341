//! Line-oriented file formats shared by the command-line tools.
//!
//! N-best and featurized records are JSON lines with a fixed field order.
//! Weights and idf tables are `name<TAB>value` lines. Scores are written in
//! full (round-trip) precision.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::decoder::{Hypothesis, NBestList};
use crate::error::{Error, Result};
use crate::rerank::{FeatureVector, FeatureWeights, FeaturizedEntry, IdfTable};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NBestRecord {
    pub source: usize,
    pub rank: usize,
    pub text: String,
    pub ids: Vec<TokenId>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRecord {
    pub source: usize,
    pub rank: usize,
    pub features: BTreeMap<String, f64>,
    pub text: String,
    pub ids: Vec<TokenId>,
    pub score: f64,
}

pub fn nbest_records(source: usize, nbest: &NBestList, vocab: &Vocabulary) -> Vec<NBestRecord> {
    nbest
        .entries
        .iter()
        .enumerate()
        .map(|(rank, h)| NBestRecord {
            source,
            rank,
            text: vocab.decode(&h.tokens),
            ids: h.tokens.clone(),
            score: h.score,
        })
        .collect()
}

pub fn feature_records(source: usize, entries: &[FeaturizedEntry], vocab: &Vocabulary) -> Vec<FeatureRecord> {
    entries
        .iter()
        .enumerate()
        .map(|(rank, e)| FeatureRecord {
            source,
            rank,
            features: e
                .features
                .names()
                .iter()
                .map(|s| s.to_string())
                .zip(e.features.values())
                .collect(),
            text: vocab.decode(&e.hypothesis.tokens),
            ids: e.hypothesis.tokens.clone(),
            score: e.hypothesis.score,
        })
        .collect()
}

impl FeatureRecord {
    pub fn to_entry(&self, eos: TokenId) -> Result<FeaturizedEntry> {
        let named: HashMap<String, f64> = self.features.clone().into_iter().collect();
        Ok(FeaturizedEntry {
            hypothesis: Hypothesis {
                tokens: self.ids.clone(),
                score: self.score,
                finished: self.ids.last() == Some(&eos),
                ranks: Vec::new(),
            },
            features: FeatureVector::from_named(&named)?,
        })
    }
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Groups records by their `source` field, keeping file order within groups.
pub fn group_by_source<T, F: Fn(&T) -> usize>(records: Vec<T>, key: F) -> BTreeMap<usize, Vec<T>> {
    let mut m: BTreeMap<usize, Vec<T>> = BTreeMap::new();
    for r in records {
        m.entry(key(&r)).or_default().push(r);
    }
    m
}

fn parse_pairs(text: &str) -> Result<Vec<(String, f64)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let parse = |msg: &str| Error::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            let (k, v) = l.split_once('\t').ok_or_else(|| parse("expected name<TAB>value"))?;
            let v: f64 = v.trim().parse().map_err(|_| parse("value is not a number"))?;
            Ok((k.to_string(), v))
        })
        .collect()
}

pub fn format_weights(w: &FeatureWeights) -> String {
    w.names
        .iter()
        .zip(&w.values)
        .map(|(n, v)| format!("{n}\t{v:?}\n"))
        .collect()
}

pub fn parse_weights(text: &str) -> Result<FeatureWeights> {
    let (names, values) = parse_pairs(text)?.into_iter().unzip();
    FeatureWeights::new(names, values)
}

pub fn format_idf(idf: &IdfTable, vocab: &Vocabulary) -> String {
    let mut rows: Vec<(TokenId, f64)> = idf.entries().collect();
    rows.sort_by_key(|&(t, _)| t);
    rows.into_iter()
        .map(|(t, v)| format!("{}\t{v:?}\n", vocab.token(t).unwrap_or("<unk>")))
        .collect()
}

/// Reads an idf table; tokens missing from `vocab` are dropped (they would score 0).
pub fn parse_idf(text: &str, vocab: &Vocabulary) -> Result<IdfTable> {
    let map = parse_pairs(text)?
        .into_iter()
        .filter_map(|(k, v)| vocab.id(&k).map(|id| (id, v)))
        .collect();
    IdfTable::new(map)
}
