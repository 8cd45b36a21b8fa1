//! Weighted sample corpora.
//!
//! A corpus is an ordered list of `(token sequence, count)` pairs plus
//! the alphabet derived from them. Counts are positive rationals:
//! absolute sample frequencies drive how far induction generalizes, and
//! corpora are often rescaled to a fixed total, which need not produce
//! integers.
//!
//! File format (UTF-8 text): one sample per line, with an optional
//! leading `<count><TAB>` prefix where the count is an integer or a
//! fraction `p/q`. Lines starting with `#` and blank lines are ignored.
//! The rest of the line is split according to the tokenization mode.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use crate::count::{count_from_int, count_to_f64, is_positive, parse_count, Count};
use crate::error::{Error, Result};

/// How a sample line is split into symbols.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Tokenization {
    /// Every non-whitespace character is a symbol (formal languages).
    Chars,
    /// Whitespace-separated words are symbols (word corpora).
    Words,
}

impl Tokenization {
    pub fn tokenize(&self, line: &str) -> Vec<String> {
        match self {
            Tokenization::Chars => line
                .chars()
                .filter(|c| !c.is_whitespace())
                .map(String::from)
                .collect(),
            Tokenization::Words => line.split_whitespace().map(String::from).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    samples: Vec<(Vec<String>, Count)>,
    alphabet: BTreeSet<String>,
    tokenization: Tokenization,
}

impl Corpus {
    /// Builds a corpus from raw samples, consolidating identical token
    /// sequences by summing their counts. First-appearance order is kept.
    pub fn from_samples(
        samples: Vec<(Vec<String>, Count)>,
        tokenization: Tokenization,
    ) -> Result<Self> {
        let mut ordered: Vec<(Vec<String>, Count)> = Vec::new();
        let mut index: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        for (tokens, count) in samples {
            if tokens.is_empty() {
                return Err(Error::InvalidOp("empty sample".into()));
            }
            if !is_positive(&count) {
                return Err(Error::InvalidOp(format!("sample count must be > 0, got {count}")));
            }
            match index.get(&tokens) {
                Some(&i) => ordered[i].1 += count,
                None => {
                    index.insert(tokens.clone(), ordered.len());
                    ordered.push((tokens, count));
                }
            }
        }
        if ordered.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let alphabet = ordered
            .iter()
            .flat_map(|(toks, _)| toks.iter().cloned())
            .collect();
        Ok(Corpus { samples: ordered, alphabet, tokenization })
    }

    /// Loads a corpus from text. Errors carry 1-based line numbers.
    pub fn parse(text: &str, tokenization: Tokenization) -> Result<Self> {
        let mut samples = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let (count, rest) = match raw.split_once('\t') {
                Some((prefix, rest)) => {
                    let count = parse_count(prefix).ok_or_else(|| Error::Parse {
                        line,
                        message: format!("malformed count prefix {prefix:?}"),
                    })?;
                    if !is_positive(&count) {
                        return Err(Error::Parse {
                            line,
                            message: format!("count must be > 0, got {count}"),
                        });
                    }
                    (count, rest)
                }
                None => (count_from_int(1), raw),
            };
            let tokens = tokenization.tokenize(rest);
            if tokens.is_empty() {
                return Err(Error::Parse { line, message: "count given but sample is empty".into() });
            }
            samples.push((tokens, count));
        }
        if samples.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Self::from_samples(samples, tokenization)
    }

    /// Serializes in the corpus file format; reloads to an equal corpus.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (tokens, count) in &self.samples {
            let body = match self.tokenization {
                Tokenization::Chars => tokens.concat(),
                Tokenization::Words => tokens.join(" "),
            };
            out.push_str(&format!("{count}\t{body}\n"));
        }
        out
    }

    pub fn samples(&self) -> &[(Vec<String>, Count)] {
        &self.samples
    }

    pub fn alphabet(&self) -> &BTreeSet<String> {
        &self.alphabet
    }

    pub fn tokenization(&self) -> Tokenization {
        self.tokenization
    }

    pub fn total_count(&self) -> Count {
        self.samples.iter().map(|(_, c)| *c).sum()
    }

    pub fn total_count_f64(&self) -> f64 {
        count_to_f64(&self.total_count())
    }

    /// Rescales all counts so they sum to `total` exactly, preserving
    /// every pairwise ratio.
    pub fn scale_to(&self, total: Count) -> Result<Corpus> {
        if !is_positive(&total) {
            return Err(Error::InvalidOp(format!("scale total must be > 0, got {total}")));
        }
        let sum = self.total_count();
        let factor = total / sum;
        let samples = self
            .samples
            .iter()
            .map(|(toks, c)| (toks.clone(), *c * factor))
            .collect();
        Corpus::from_samples(samples, self.tokenization)
    }

    /// The set of distinct token sequences.
    pub fn support(&self) -> BTreeSet<Vec<String>> {
        self.samples.iter().map(|(toks, _)| toks.clone()).collect()
    }

    pub fn max_sample_len(&self) -> usize {
        self.samples.iter().map(|(toks, _)| toks.len()).max().unwrap_or(0)
    }

    /// A corpus holding the samples at `range`, in order. Used by the
    /// on-line induction schedule.
    pub fn slice(&self, start: usize, len: usize) -> Result<Corpus> {
        let end = (start + len).min(self.samples.len());
        Corpus::from_samples(self.samples[start..end].to_vec(), self.tokenization)
    }
}
