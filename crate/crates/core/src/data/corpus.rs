use std::fs;
use std::path::Path;

use super::{Vocabulary, EOS};
use crate::error::{Error, Result};

pub type Sentence = Vec<String>;

/// Whitespace tokenization; corpora are expected to be pre-tokenized.
pub fn tokenize(line: &str) -> Sentence {
    line.split_whitespace().map(str::to_string).collect()
}

/// Aligned `(source, target)` sentence pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParallelCorpus {
    pairs: Vec<(Sentence, Sentence)>,
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<(Sentence, Sentence)>) -> Self {
        Self { pairs }
    }

    /// Parses two parallel texts, one sentence per line.
    pub fn from_texts(src: &str, tgt: &str) -> Result<Self> {
        let s: Vec<&str> = src.lines().collect();
        let t: Vec<&str> = tgt.lines().collect();
        if s.len() != t.len() {
            return Err(Error::Data(format!(
                "parallel files differ in length: {} source vs {} target lines",
                s.len(),
                t.len()
            )));
        }
        Ok(Self::new(s.into_iter().zip(t).map(|(a, b)| (tokenize(a), tokenize(b))).collect()))
    }

    pub fn load(src: &Path, tgt: &Path) -> Result<Self> {
        let s = fs::read_to_string(src).map_err(|e| Error::Data(format!("{}: {e}", src.display())))?;
        let t = fs::read_to_string(tgt).map_err(|e| Error::Data(format!("{}: {e}", tgt.display())))?;
        Self::from_texts(&s, &t)
    }

    pub fn save(&self, src: &Path, tgt: &Path) -> Result<()> {
        fs::write(src, join_lines(self.sources()))?;
        fs::write(tgt, join_lines(self.targets()))?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(Sentence, Sentence)] {
        &self.pairs
    }

    pub fn sources(&self) -> impl Iterator<Item = &Sentence> {
        self.pairs.iter().map(|p| &p.0)
    }

    pub fn targets(&self) -> impl Iterator<Item = &Sentence> {
        self.pairs.iter().map(|p| &p.1)
    }

    /// Drops pairs with an empty side or a side longer than `max_len` tokens.
    pub fn filter_by_length(&self, max_len: usize) -> Self {
        Self::new(
            self.pairs
                .iter()
                .filter(|(s, t)| !s.is_empty() && !t.is_empty() && s.len() <= max_len && t.len() <= max_len)
                .cloned()
                .collect(),
        )
    }

    pub fn extend(&mut self, other: &ParallelCorpus) {
        self.pairs.extend(other.pairs.iter().cloned());
    }
}

fn join_lines<'a>(sentences: impl Iterator<Item = &'a Sentence>) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&s.join(" "));
        out.push('\n');
    }
    out
}

/// Id form of one pair; both sides end with EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedPair {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

pub fn encode_corpus(corpus: &ParallelCorpus, src_vocab: &Vocabulary, tgt_vocab: &Vocabulary) -> Vec<EncodedPair> {
    corpus
        .pairs()
        .iter()
        .map(|(s, t)| {
            let mut src = src_vocab.encode(s);
            src.push(EOS);
            let mut tgt = tgt_vocab.encode(t);
            tgt.push(EOS);
            EncodedPair { src, tgt }
        })
        .collect()
}
