//! Document packing, held-out splits and the synthetic letter-count corpus.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tokenspell::{permutation, Vocabulary};

/// Packs documents into rows of `seq_len + 1` tokens and groups rows into
/// batches.
///
/// Documents are concatenated in order with the separator between
/// neighbours; a row boundary may fall anywhere, and whatever overhangs it
/// starts the next row. Only full batches are emitted.
#[derive(Debug)]
pub struct PackedBatchStream<I> {
    source: I,
    batch_size: usize,
    seq_len: usize,
    separator: Option<u32>,
    started: bool,
    carry: Vec<u32>,
    ready: VecDeque<Vec<u32>>,
}

impl<I: Iterator<Item = Vec<u32>>> PackedBatchStream<I> {
    pub fn new(source: I, batch_size: usize, seq_len: usize, separator: Option<u32>) -> Result<Self> {
        if batch_size == 0 || seq_len == 0 {
            return Err(Error::Config(format!(
                "batch size and sequence length must be positive, got {} and {}",
                batch_size, seq_len
            )));
        }
        Ok(Self {
            source,
            batch_size,
            seq_len,
            separator,
            started: false,
            carry: Vec::new(),
            ready: VecDeque::new(),
        })
    }

    pub fn row_len(&self) -> usize {
        self.seq_len + 1
    }

    /// Tokens of the current partial row; always shorter than a row.
    pub fn carry(&self) -> &[u32] {
        &self.carry
    }

    /// Complete rows not yet emitted in a batch.
    pub fn pending_rows(&self) -> usize {
        self.ready.len()
    }

    fn feed(&mut self, doc: Vec<u32>) {
        if self.started {
            if let Some(sep) = self.separator {
                self.carry.push(sep);
            }
        }
        self.started = true;
        let width = self.row_len();
        let mut doc = doc.as_slice();
        while !doc.is_empty() {
            let take = (width - self.carry.len()).min(doc.len());
            self.carry.extend_from_slice(&doc[..take]);
            doc = &doc[take..];
            if self.carry.len() == width {
                self.ready.push_back(core::mem::take(&mut self.carry));
            }
        }
        // A separator can complete a row on its own.
        if self.carry.len() == width {
            self.ready.push_back(core::mem::take(&mut self.carry));
        }
    }
}

impl<I: Iterator<Item = Vec<u32>>> Iterator for PackedBatchStream<I> {
    /// `batch_size × (seq_len + 1)` tokens, row-major.
    type Item = Vec<u32>;

    fn next(&mut self) -> Option<Vec<u32>> {
        while self.ready.len() < self.batch_size {
            let doc = self.source.next()?;
            self.feed(doc);
        }
        let mut batch = Vec::with_capacity(self.batch_size * self.row_len());
        for row in self.ready.drain(..self.batch_size) {
            batch.extend_from_slice(&row);
        }
        Some(batch)
    }
}

/// Seeded document-level split; both halves keep their original order.
/// The test side gets `round(n * test_fraction)` documents, at least one.
pub fn split_corpus<D>(docs: Vec<D>, test_fraction: f64, seed: u64) -> Result<(Vec<D>, Vec<D>)> {
    if !(test_fraction > 0.0 && test_fraction < 0.5) {
        return Err(Error::Config(format!("test fraction must lie in (0, 0.5), got {}", test_fraction)));
    }
    let n = docs.len();
    let n_test = (libm::round(n as f64 * test_fraction) as usize).max(1);
    if n_test >= n {
        return Err(Error::Invalid(format!("{} documents are too few to split", n)));
    }
    let mut is_test = alloc::vec![false; n];
    for &i in &permutation(seed, n)[..n_test] {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(n - n_test), Vec::with_capacity(n_test));
    for (d, t) in docs.into_iter().zip(is_test) {
        if t {
            test.push(d);
        } else {
            train.push(d);
        }
    }
    Ok((train, test))
}

pub fn tokenize_docs<S: AsRef<[u8]>>(vocab: &Vocabulary, docs: &[S]) -> Result<Vec<Vec<u32>>> {
    docs.iter().map(|d| vocab.encode(d.as_ref())).collect()
}

/// `"The number of times the letter {L} occurs in {word} is {n}."` with `L`
/// upper-cased.
pub fn count_sentence(word: &str, letter: char) -> String {
    let n = word.chars().filter(|&c| c == letter.to_ascii_lowercase()).count();
    format!(
        "The number of times the letter {} occurs in {} is {}.",
        letter.to_ascii_uppercase(),
        word,
        n
    )
}

/// `n_docs` letter-count sentences over seeded random lowercase words of 4–10
/// letters; the letter is drawn from the word's distinct letters.
pub fn synth_spelling_corpus(seed: u64, n_docs: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|_| {
            let len = rng.random_range(4..=10);
            let word: String = (0..len).map(|_| (b'a' + rng.random_range(0..26u8)) as char).collect();
            let mut distinct: Vec<char> = word.chars().collect();
            distinct.sort_unstable();
            distinct.dedup();
            let letter = distinct[rng.random_range(0..distinct.len())];
            count_sentence(&word, letter)
        })
        .collect()
}
