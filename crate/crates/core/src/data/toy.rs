use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParallelCorpus, RESERVED};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    /// Target equals source.
    Copy,
    /// Target is the source reversed.
    Reverse,
    /// Source is digits, target their English words.
    NumWord,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Copy => "copy",
            TaskKind::Reverse => "reverse",
            TaskKind::NumWord => "numword",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(TaskKind::Copy),
            "reverse" => Ok(TaskKind::Reverse),
            "numword" => Ok(TaskKind::NumWord),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

const NUMBER_WORDS: [&str; 10] = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"];

/// English word for a single digit token.
pub fn number_word(digit: &str) -> Option<&'static str> {
    digit.parse::<usize>().ok().and_then(|d| NUMBER_WORDS.get(d).copied())
}

/// Generates `n_pairs` sentence pairs over `vocab_size − 4` content tokens
/// (at most ten digits for [`TaskKind::NumWord`]), with lengths drawn
/// uniformly from `len_range`.
pub fn gen_toy_task(
    kind: TaskKind,
    n_pairs: usize,
    len_range: RangeInclusive<usize>,
    vocab_size: usize,
    seed: u64,
) -> Result<ParallelCorpus> {
    if vocab_size < RESERVED.len() + 1 {
        return Err(Error::Config(format!("toy task vocab_size must be at least 5, got {vocab_size}")));
    }
    let (lo, hi) = (*len_range.start(), *len_range.end());
    if lo == 0 || lo > hi {
        return Err(Error::Config(format!("invalid length range {lo}..={hi}")));
    }
    let content = vocab_size - RESERVED.len();
    let alphabet: Vec<String> = match kind {
        TaskKind::Copy | TaskKind::Reverse => (0..content).map(|i| format!("w{i}")).collect(),
        TaskKind::NumWord => (0..content.min(10)).map(|d| d.to_string()).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = (0..n_pairs)
        .map(|_| {
            let len = rng.random_range(lo..=hi);
            let src: Vec<String> = (0..len)
                .map(|_| alphabet[rng.random_range(0..alphabet.len())].clone())
                .collect();
            let tgt = match kind {
                TaskKind::Copy => src.clone(),
                TaskKind::Reverse => src.iter().rev().cloned().collect(),
                TaskKind::NumWord => src
                    .iter()
                    .map(|d| number_word(d).expect("digit alphabet").to_string())
                    .collect(),
            };
            (src, tgt)
        })
        .collect();
    Ok(ParallelCorpus::new(pairs))
}
