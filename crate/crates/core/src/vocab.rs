use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Surface string reserved for the end-of-sequence token.
pub const EOS: &str = "</s>";
/// Surface string reserved for out-of-vocabulary words in corpus-built vocabularies.
pub const UNK: &str = "<unk>";

/// A token-id sequence. EOS may only appear as the final element.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sequence(pub Vec<TokenId>);

impl Sequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Sequence(ids)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The body of the sequence with a trailing EOS removed.
    pub fn strip_eos(&self, eos: TokenId) -> &[TokenId] {
        match self.0.split_last() {
            Some((&last, body)) if last == eos => body,
            _ => &self.0,
        }
    }
}

impl From<Vec<TokenId>> for Sequence {
    fn from(ids: Vec<TokenId>) -> Self {
        Sequence(ids)
    }
}

impl AsRef<[TokenId]> for Sequence {
    fn as_ref(&self) -> &[TokenId] {
        &self.0
    }
}

impl std::ops::Deref for Sequence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

/// Closed vocabulary with dense ids `0..size` and one reserved EOS entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    eos_id: TokenId,
    index: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    eos_id: TokenId,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = Error;

    fn try_from(r: VocabularyRepr) -> Result<Self> {
        Vocabulary::new(r.tokens, r.eos_id)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            tokens: v.tokens,
            eos_id: v.eos_id,
        }
    }
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>, eos_id: TokenId) -> Result<Self> {
        if eos_id as usize >= tokens.len() {
            return Err(Error::input(format!(
                "eos id {eos_id} out of range for {} tokens",
                tokens.len()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::input(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, eos_id, index })
    }

    /// Builds a vocabulary from whitespace-tokenized text. Id 0 is EOS, id 1 is
    /// `<unk>`, remaining words follow in first-seen order.
    pub fn from_words<'a, I>(words: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut tokens = vec![EOS.to_string(), UNK.to_string()];
        let mut index: HashMap<String, TokenId> = HashMap::new();
        index.insert(EOS.to_string(), 0);
        index.insert(UNK.to_string(), 1);
        for w in words {
            if !index.contains_key(w) {
                index.insert(w.to_string(), tokens.len() as TokenId);
                tokens.push(w.to_string());
            }
        }
        Vocabulary {
            tokens,
            eos_id: 0,
            index,
        }
    }

    /// Vocabulary `t0 .. t{n-2}` plus EOS as the last id. Handy for synthetic models.
    pub fn synthetic(size: usize) -> Self {
        assert!(size >= 1, "vocabulary needs at least the EOS token");
        let mut tokens: Vec<String> = (0..size - 1).map(|i| format!("t{i}")).collect();
        tokens.push(EOS.to_string());
        Vocabulary::new(tokens, (size - 1) as TokenId).expect("synthetic tokens are unique")
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Maps whitespace tokens to ids. Unknown words map to `<unk>` if the
    /// vocabulary has one and are an error otherwise. EOS is never produced.
    pub fn encode<'a, I>(&self, words: I) -> Result<Sequence>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let unk = self.id(UNK);
        words
            .into_iter()
            .map(|w| match self.id(w) {
                Some(id) if id == self.eos_id => Err(Error::input(format!("reserved token {w:?} in text"))),
                Some(id) => Ok(id),
                None => unk.ok_or_else(|| Error::input(format!("unknown token {w:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Sequence)
    }

    pub fn encode_str(&self, text: &str) -> Result<Sequence> {
        self.encode(text.split_whitespace())
    }

    /// Surface text of a sequence, trailing EOS dropped.
    pub fn decode(&self, seq: &[TokenId]) -> String {
        let body = match seq.split_last() {
            Some((&last, body)) if last == self.eos_id => body,
            _ => seq,
        };
        body.iter()
            .map(|&id| self.token(id).unwrap_or(UNK))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Checks that every id is in range and EOS, if present, is final.
    pub fn validate(&self, seq: &[TokenId]) -> Result<()> {
        validate_ids(seq, self.size(), self.eos_id)
    }
}

pub(crate) fn validate_ids(seq: &[TokenId], size: usize, eos: TokenId) -> Result<()> {
    for (i, &id) in seq.iter().enumerate() {
        if id as usize >= size {
            return Err(Error::input(format!(
                "token id {id} at position {i} outside vocabulary of size {size}"
            )));
        }
        if id == eos && i + 1 != seq.len() {
            return Err(Error::input(format!("EOS at non-final position {i}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_words_reserves_eos_and_unk() {
        let v = Vocabulary::from_words("a b a c".split_whitespace());
        assert_eq!(v.tokens(), &["</s>", "<unk>", "a", "b", "c"]);
        assert_eq!(v.eos_id(), 0);
        assert_eq!(v.encode_str("c a zz").unwrap().ids(), &[4, 2, 1]);
    }

    #[test]
    fn eos_never_produced_by_encoding() {
        let v = Vocabulary::from_words(["a"]);
        assert!(v.encode_str("a </s>").is_err());
    }

    #[test]
    fn duplicate_tokens_rejected() {
        assert!(Vocabulary::new(vec!["a".into(), "a".into()], 0).is_err());
        assert!(Vocabulary::new(vec!["a".into()], 1).is_err());
    }

    #[test]
    fn eos_only_final() {
        let v = Vocabulary::synthetic(3);
        assert!(v.validate(&[0, 1, 2]).is_ok());
        assert!(v.validate(&[2, 0]).is_err());
        assert!(v.validate(&[3]).is_err());
        assert_eq!(v.decode(&[0, 1, 2]), "t0 t1");
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocabulary::from_words(["x", "y"]);
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&s).unwrap(), v);
    }
}
