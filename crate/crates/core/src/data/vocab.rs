use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{BOS, EOS, PAD, RESERVED, UNK};
use crate::error::{Error, Result};

/// Token ↔ id map. Ids 0..4 are reserved (PAD, BOS, EOS, UNK); every token
/// outside the map encodes as UNK.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps the `cap − 4` most frequent tokens, ties broken lexicographically.
    pub fn build<'a, I, S>(sentences: I, cap: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[String]> + 'a + ?Sized,
    {
        if cap < RESERVED.len() + 1 {
            return Err(Error::Config(format!("vocabulary cap must be at least 5, got {cap}")));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut any = false;
        for sentence in sentences {
            any = true;
            for tok in sentence.as_ref() {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        if !any {
            return Err(Error::EmptyInput("vocabulary corpus".into()));
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, _)| !RESERVED.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(cap - RESERVED.len());
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()))
    }

    /// Vocabulary from content tokens in id order (the first gets id 4).
    pub fn from_tokens<I: IntoIterator<Item = String>>(content: I) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(content);
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn content_tokens(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn encode<S: AsRef<str>>(&self, sentence: &[S]) -> Vec<usize> {
        sentence.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Tokens up to the first EOS, skipping PAD and BOS.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&id| id != EOS)
            .filter(|&&id| id != PAD && id != BOS)
            .map(|&id| self.token(id).unwrap_or(RESERVED[UNK]).to_string())
            .collect()
    }

    /// One content token per line; line `k` holds id `k + 4`.
    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        for t in self.content_tokens() {
            writeln!(out, "{t}")?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut tokens = Vec::new();
        for line in BufReader::new(input).lines() {
            let line = line?;
            let tok = line.trim_end_matches('\r');
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Data(format!("invalid vocabulary line {:?}", line)));
            }
            tokens.push(tok.to_string());
        }
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(fs::File::open(path)?)
    }
}
