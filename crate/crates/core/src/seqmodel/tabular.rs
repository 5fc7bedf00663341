use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{Conditioned, SequenceModel};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};

const NORM_TOL: f64 = 1e-9;

/// Explicit table of next-token distributions keyed by `(source, prefix)`.
/// Source and target share one vocabulary. States without an entry use the
/// model's default distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularModel {
    vocab: Vocabulary,
    entries: HashMap<Vec<TokenId>, HashMap<Vec<TokenId>, Vec<f64>>>,
    default: Vec<f64>,
}

fn check_distribution(probs: &[f64], size: usize) -> Result<()> {
    if probs.len() != size {
        return Err(Error::input(format!(
            "distribution has {} entries, vocabulary has {size}",
            probs.len()
        )));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::input("distribution entries must be finite and >= 0"));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > NORM_TOL {
        return Err(Error::input(format!("distribution sums to {sum}, not 1")));
    }
    Ok(())
}

impl TabularModel {
    pub fn new(vocab: Vocabulary, default: Vec<f64>) -> Result<Self> {
        check_distribution(&default, vocab.size())?;
        Ok(TabularModel {
            vocab,
            entries: HashMap::new(),
            default,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn insert(&mut self, source: Vec<TokenId>, prefix: Vec<TokenId>, probs: Vec<f64>) -> Result<()> {
        self.vocab.validate(&source)?;
        self.vocab.validate(&prefix)?;
        if prefix.contains(&self.vocab.eos_id()) {
            return Err(Error::State("prefix contains EOS".into()));
        }
        check_distribution(&probs, self.vocab.size())?;
        self.entries.entry(source).or_default().insert(prefix, probs);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&TabularRepr::from(self)).map_err(|e| Error::input(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let repr: TabularRepr = serde_json::from_str(text).map_err(|e| Error::input(e.to_string()))?;
        repr.try_into()
    }
}

struct Bound<'a> {
    table: Option<&'a HashMap<Vec<TokenId>, Vec<f64>>>,
    default: &'a [f64],
}

impl Conditioned for Bound<'_> {
    fn fill_probs(&self, prefix: &[TokenId], out: &mut [f64]) {
        let dist = self
            .table
            .and_then(|t| t.get(prefix))
            .map(Vec::as_slice)
            .unwrap_or(self.default);
        out.copy_from_slice(dist);
    }
}

impl SequenceModel for TabularModel {
    fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    fn eos_id(&self) -> TokenId {
        self.vocab.eos_id()
    }

    fn source_vocab_size(&self) -> Option<usize> {
        Some(self.vocab.size())
    }

    fn condition<'a>(&'a self, source: &'a [TokenId]) -> Box<dyn Conditioned + 'a> {
        Box::new(Bound {
            table: self.entries.get(source),
            default: &self.default,
        })
    }
}

// On-disk form: sources and prefixes as surface strings, entries sorted.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TabularRepr {
    vocab: Vec<String>,
    eos_id: TokenId,
    default: Vec<f64>,
    entries: Vec<EntryRepr>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryRepr {
    source: String,
    prefix: Vec<String>,
    probs: Vec<f64>,
}

impl From<&TabularModel> for TabularRepr {
    fn from(m: &TabularModel) -> Self {
        let surface =
            |ids: &[TokenId]| -> Vec<String> { ids.iter().map(|&i| m.vocab.tokens()[i as usize].clone()).collect() };
        let mut sorted: BTreeMap<(&Vec<TokenId>, &Vec<TokenId>), &Vec<f64>> = BTreeMap::new();
        for (src, table) in &m.entries {
            for (prefix, probs) in table {
                sorted.insert((src, prefix), probs);
            }
        }
        TabularRepr {
            vocab: m.vocab.tokens().to_vec(),
            eos_id: m.vocab.eos_id(),
            default: m.default.clone(),
            entries: sorted
                .into_iter()
                .map(|((src, prefix), probs)| EntryRepr {
                    source: surface(src).join(" "),
                    prefix: surface(prefix),
                    probs: probs.clone(),
                })
                .collect(),
        }
    }
}

impl TryFrom<TabularRepr> for TabularModel {
    type Error = Error;

    fn try_from(r: TabularRepr) -> Result<Self> {
        let vocab = Vocabulary::new(r.vocab, r.eos_id)?;
        let lookup = |w: &str| {
            vocab
                .id(w)
                .ok_or_else(|| Error::input(format!("unknown token {w:?} in table")))
        };
        let mut entries = Vec::with_capacity(r.entries.len());
        for e in r.entries {
            let src = e.source.split_whitespace().map(lookup).collect::<Result<Vec<_>>>()?;
            let prefix = e.prefix.iter().map(|w| lookup(w)).collect::<Result<Vec<_>>>()?;
            entries.push((src, prefix, e.probs));
        }
        let mut m = TabularModel::new(vocab, r.default)?;
        for (src, prefix, probs) in entries {
            m.insert(src, prefix, probs)?;
        }
        Ok(m)
    }
}
