use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Vocabulary;
use crate::error::{Error, Result};

/// Bytes kept per token.
pub const SPELLING_WIDTH: usize = 16;
/// Filler for tokens shorter than [`SPELLING_WIDTH`]. A genuine 0x00 byte in
/// a token is indistinguishable from padding.
pub const PAD_BYTE: u8 = 0x00;

/// Which ablation, if any, has been applied to a table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableVariant {
    Plain,
    /// Rows permuted across token ids (`seed` is `None` for an explicit permutation).
    Shuffled { seed: Option<u64> },
    /// Only the first byte of each row kept.
    FirstChar,
}

/// One fixed-width byte spelling per token id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpellingTable {
    rows: Vec<[u8; SPELLING_WIDTH]>,
    variant: TableVariant,
}

fn spell(bytes: &[u8]) -> [u8; SPELLING_WIDTH] {
    let mut row = [PAD_BYTE; SPELLING_WIDTH];
    let n = bytes.len().min(SPELLING_WIDTH);
    row[..n].copy_from_slice(&bytes[..n]);
    row
}

/// Seeded uniform permutation of `0..n`.
pub fn permutation(seed: u64, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm
}

impl SpellingTable {
    /// Row `t` is the first 16 bytes of token `t`, null padded; special
    /// tokens get all-pad rows.
    pub fn from_vocab(vocab: &Vocabulary) -> Self {
        let rows = vocab
            .entries()
            .iter()
            .enumerate()
            .map(|(id, bytes)| {
                if vocab.is_special(id as u32) {
                    [PAD_BYTE; SPELLING_WIDTH]
                } else {
                    spell(bytes)
                }
            })
            .collect();
        Self {
            rows,
            variant: TableVariant::Plain,
        }
    }

    /// Table over raw rows, truncated/padded to the fixed width.
    pub fn from_spellings<B: AsRef<[u8]>>(spellings: &[B]) -> Self {
        Self {
            rows: spellings.iter().map(|s| spell(s.as_ref())).collect(),
            variant: TableVariant::Plain,
        }
    }

    pub fn from_rows(rows: Vec<[u8; SPELLING_WIDTH]>, variant: TableVariant) -> Self {
        Self { rows, variant }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[[u8; SPELLING_WIDTH]] {
        &self.rows
    }

    pub fn row(&self, id: usize) -> Option<&[u8; SPELLING_WIDTH]> {
        self.rows.get(id)
    }

    pub fn variant(&self) -> TableVariant {
        self.variant
    }

    /// Token `t` receives the spelling of token `perm[t]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.rows.len();
        let mut seen = alloc::vec![false; n];
        if perm.len() != n {
            return Err(Error::Invalid(format!("permutation of length {} for {} rows", perm.len(), n)));
        }
        for &p in perm {
            if p >= n || core::mem::replace(&mut seen[p], true) {
                return Err(Error::Invalid(format!("not a permutation: entry {}", p)));
            }
        }
        Ok(Self {
            rows: perm.iter().map(|&p| self.rows[p]).collect(),
            variant: TableVariant::Shuffled { seed: None },
        })
    }

    pub fn shuffled(&self, seed: u64) -> Self {
        let perm = permutation(seed, self.rows.len());
        let mut t = self.permuted(&perm).expect("seeded permutation is valid");
        t.variant = TableVariant::Shuffled { seed: Some(seed) };
        t
    }

    pub fn first_char(&self) -> Self {
        Self {
            rows: self
                .rows
                .iter()
                .map(|r| {
                    let mut out = [PAD_BYTE; SPELLING_WIDTH];
                    out[0] = r[0];
                    out
                })
                .collect(),
            variant: TableVariant::FirstChar,
        }
    }

    /// Flat `len * 16` bytes, row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.rows.iter().flatten().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ascii_row_is_null_padded() {
        let t = SpellingTable::from_spellings(&["cat"]);
        let mut want = [0u8; 16];
        want[..3].copy_from_slice(&[0x63, 0x61, 0x74]);
        assert_eq!(t.rows()[0], want);
    }

    #[test]
    fn long_token_is_truncated() {
        let t = SpellingTable::from_spellings(&["abcdefghijklmnopqrst"]);
        assert_eq!(&t.rows()[0], b"abcdefghijklmnop");
    }

    #[test]
    fn utf8_bytes() {
        let t = SpellingTable::from_spellings(&["é"]);
        let encoded = "é".as_bytes();
        assert_eq!(&t.rows()[0][..2], encoded);
        assert_eq!(&t.rows()[0][..2], &[0xC3, 0xA9]);
    }

    #[test]
    fn specials_get_pad_rows() {
        let v = Vocabulary::byte_fallback().with_end_of_text();
        let t = SpellingTable::from_vocab(&v);
        assert_eq!(t.len(), 257);
        assert_eq!(t.rows()[256], [PAD_BYTE; 16]);
        assert_eq!(t.rows()[b'x' as usize][0], b'x');
    }

    #[test]
    fn first_char_keeps_one_byte() {
        let t = SpellingTable::from_spellings(&["cat"]).first_char();
        let mut want = [0u8; 16];
        want[0] = 0x63;
        assert_eq!(t.rows()[0], want);
        assert_eq!(t.variant(), TableVariant::FirstChar);
    }

    #[test]
    fn identity_permutation_is_noop() {
        let t = SpellingTable::from_spellings(&["a", "bb", "ccc"]);
        let p = t.permuted(&[0, 1, 2]).unwrap();
        assert_eq!(p.rows(), t.rows());
        assert!(t.permuted(&[0, 0, 1]).is_err());
    }

    proptest! {
        #[test]
        fn shuffle_preserves_multiset_and_inverts(words in proptest::collection::vec("[a-z]{1,20}", 1..40), seed in any::<u64>()) {
            let t = SpellingTable::from_spellings(&words);
            let s = t.shuffled(seed);
            let mut a = t.rows().to_vec();
            let mut b = s.rows().to_vec();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
            let perm = permutation(seed, t.len());
            let mut inverse = alloc::vec![0; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inverse[p] = i;
            }
            let back = s.permuted(&inverse).unwrap();
            prop_assert_eq!(back.rows(), t.rows());
        }

        #[test]
        fn rows_are_prefix_then_pad(word in proptest::collection::vec(1u8..=255, 1..30)) {
            let t = SpellingTable::from_spellings(std::slice::from_ref(&word));
            let row = t.rows()[0];
            let n = word.len().min(16);
            prop_assert_eq!(&row[..n], &word[..n]);
            prop_assert!(row[n..].iter().all(|&b| b == PAD_BYTE));
        }
    }
}
