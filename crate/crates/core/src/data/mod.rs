//! Vocabulary, corpus files and synthetic tasks.

pub mod corpus;
pub mod synthetic;
pub mod vocab;

pub use corpus::{load_corpus, load_corpus_with_vocab, Corpus, SourceTargetPair, Split, VocabPolicy};
pub use synthetic::{gen_splits, gen_synthetic, synthetic_vocab, KeyedDialogLayout, Splits, SyntheticConfig, Task};
pub use vocab::Vocabulary;
