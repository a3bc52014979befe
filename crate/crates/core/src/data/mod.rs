//! Corpora, vocabularies and synthetic translation tasks.

mod corpus;
mod toy;
mod vocab;

pub use corpus::{encode_corpus, tokenize, EncodedPair, ParallelCorpus, Sentence};
pub use toy::{gen_toy_task, number_word, TaskKind};
pub use vocab::Vocabulary;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

/// Surface forms of the reserved ids, in id order.
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];
