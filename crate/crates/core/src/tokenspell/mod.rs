//! Tokenizers, per-token byte-spelling tables and vocabulary analysis.

mod analyze;
mod bpe;
mod table;
mod vocab;

pub use analyze::{surface_variants, variant_token_census, vocab_substring_matches, Census, VariantEncoding};
pub use bpe::{split_pieces, train_mini_bpe, BpeTraining};
pub use table::{permutation, SpellingTable, TableVariant, PAD_BYTE, SPELLING_WIDTH};
pub use vocab::{VocabKind, Vocabulary, END_OF_TEXT};
