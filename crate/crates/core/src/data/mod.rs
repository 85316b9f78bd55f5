pub mod corpus;
pub mod vocab;

pub use corpus::{read_pairs, read_sentences, write_pairs, write_sentences, Pair};
pub use vocab::{Padded, TokenSequence, Vocabulary, BOS, EOS, NUM_RESERVED, PAD, UNK};
