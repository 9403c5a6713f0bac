//! Tokenization, vocabulary, padding arithmetic, file ingestion, and the
//! noising operators.

pub mod data;
pub mod perturb;
pub mod sentence;
pub mod vocab;

pub use data::{ids_to_text, read_corpus, read_labeled_tsv, read_pairs_tsv, strip_pads, LabeledExample, Level};
pub use perturb::{perturb, perturb_batch, PerturbMode, PerturbationSpec};
pub use sentence::{
    compatible_length, compatible_length_capped, encode_batch, encode_sentence, length_trace,
    PaddedBatch, TokenizedSentence,
};
pub use vocab::{build_vocab, Vocabulary, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};
