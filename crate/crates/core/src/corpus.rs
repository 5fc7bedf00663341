//! Parallel corpus ingestion: TSV (`source<TAB>target`) or JSON lines with
//! `source` / `target` text fields and an optional `split` tag.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Tsv,
    Jsonl,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(CorpusFormat::Tsv),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(Error::Config(format!("unknown corpus format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusPair {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub split: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub pairs: Vec<CorpusPair>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    source: String,
    target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<String>,
}

fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    text.split_whitespace()
        .map(|w| if lowercase { w.to_lowercase() } else { w.to_string() })
        .collect()
}

pub fn parse_corpus(text: &str, format: CorpusFormat, lowercase: bool) -> Result<ParallelCorpus> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (src, tgt, split) = match format {
            CorpusFormat::Tsv => {
                let fields: Vec<&str> = line.split('\t').collect();
                if fields.len() != 2 {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("expected 2 tab-separated fields, found {}", fields.len()),
                    });
                }
                (fields[0].to_string(), fields[1].to_string(), None)
            }
            CorpusFormat::Jsonl => {
                let r: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
                    line: line_no,
                    msg: e.to_string(),
                })?;
                (r.source, r.target, r.split)
            }
        };
        let pair = CorpusPair {
            source: tokenize(&src, lowercase),
            target: tokenize(&tgt, lowercase),
            split,
        };
        if pair.source.is_empty() || pair.target.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty source or target".into(),
            });
        }
        pairs.push(pair);
    }
    if pairs.is_empty() {
        return Err(Error::input("corpus is empty"));
    }
    Ok(ParallelCorpus { pairs })
}

pub fn ingest(path: &Path, format: CorpusFormat, lowercase: bool) -> Result<ParallelCorpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    parse_corpus(&text, format, lowercase)
}

impl ParallelCorpus {
    pub fn to_text(&self, format: CorpusFormat) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            match format {
                CorpusFormat::Tsv => {
                    out.push_str(&p.source.join(" "));
                    out.push('\t');
                    out.push_str(&p.target.join(" "));
                }
                CorpusFormat::Jsonl => {
                    let r = Record {
                        source: p.source.join(" "),
                        target: p.target.join(" "),
                        split: p.split.clone(),
                    };
                    out.push_str(&serde_json::to_string(&r).expect("record serializes"));
                }
            }
            out.push('\n');
        }
        out
    }

    /// Pairs tagged with `split`; untagged pairs belong to every split.
    pub fn split(&self, split: &str) -> ParallelCorpus {
        ParallelCorpus {
            pairs: self
                .pairs
                .iter()
                .filter(|p| p.split.as_deref().is_none_or(|s| s == split))
                .cloned()
                .collect(),
        }
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.pairs
            .iter()
            .flat_map(|p| p.source.iter().chain(&p.target))
            .map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_pair() {
        let c = parse_corpus("a b\tc d\n", CorpusFormat::Tsv, false).unwrap();
        assert_eq!(c.pairs[0].source, vec!["a", "b"]);
        assert_eq!(c.pairs[0].target, vec!["c", "d"]);
    }

    #[test]
    fn jsonl_record() {
        let c = parse_corpus(r#"{"source":"x","target":"y"}"#, CorpusFormat::Jsonl, false).unwrap();
        assert_eq!(c.pairs[0].source, vec!["x"]);
        assert_eq!(c.pairs[0].target, vec!["y"]);
        assert!(parse_corpus(r#"{"source":"x","target":"y","extra":1}"#, CorpusFormat::Jsonl, false).is_err());
    }

    #[test]
    fn ragged_tsv_names_the_line() {
        let err = parse_corpus("a\tb\nx\ty\tz\n", CorpusFormat::Tsv, false).unwrap_err();
        assert_eq!(
            err,
            Error::Parse {
                line: 2,
                msg: "expected 2 tab-separated fields, found 3".into()
            }
        );
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn empty_inputs() {
        assert!(matches!(
            parse_corpus("", CorpusFormat::Tsv, false),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            parse_corpus("a\t \n", CorpusFormat::Tsv, false),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn lowercase_flag() {
        let c = parse_corpus("A b\tC\n", CorpusFormat::Tsv, true).unwrap();
        assert_eq!(c.pairs[0].source, vec!["a", "b"]);
    }

    #[test]
    fn round_trip_both_formats() {
        let text = "{\"source\":\"a b\",\"target\":\"c\",\"split\":\"dev\"}\n{\"source\":\"d\",\"target\":\"e f\"}\n";
        let c = parse_corpus(text, CorpusFormat::Jsonl, false).unwrap();
        assert_eq!(c.to_text(CorpusFormat::Jsonl), text);
        assert_eq!(c.split("dev").pairs.len(), 2);
        assert_eq!(c.split("train").pairs.len(), 1);
        let tsv = parse_corpus("a b\tc\nd\te f\n", CorpusFormat::Tsv, false).unwrap();
        assert_eq!(
            parse_corpus(&tsv.to_text(CorpusFormat::Tsv), CorpusFormat::Tsv, false).unwrap(),
            tsv
        );
    }
}
