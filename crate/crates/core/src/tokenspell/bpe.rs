use alloc::vec::Vec;
use core::cmp::Ordering;

use hashbrown::HashMap;

use super::vocab::{merge_pair, Vocabulary};
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Letter,
    Digit,
    Space,
    Other,
}

fn class(b: u8) -> Class {
    if b.is_ascii_alphabetic() || b >= 0x80 {
        Class::Letter
    } else if b.is_ascii_digit() {
        Class::Digit
    } else if b.is_ascii_whitespace() {
        Class::Space
    } else {
        Class::Other
    }
}

/// Pre-tokenizer: runs of letters, digits, punctuation or whitespace, with a
/// single leading space attached to the run that follows it. Merges never
/// cross piece boundaries. Concatenating the pieces gives back `text`.
pub fn split_pieces(text: &[u8]) -> Vec<&[u8]> {
    let n = text.len();
    let mut pieces = Vec::new();
    let mut i = 0;
    while i < n {
        let start = i;
        if text[i] == b' ' && i + 1 < n && class(text[i + 1]) != Class::Space {
            i += 1;
        }
        let c = class(text[i]);
        let mut j = i + 1;
        while j < n && class(text[j]) == c {
            j += 1;
        }
        if c == Class::Space && j < n && j - start > 1 && text[j - 1] == b' ' {
            // Leave the last space for the next word.
            j -= 1;
        }
        pieces.push(&text[start..j]);
        i = j;
    }
    pieces
}

/// Result of [`train_mini_bpe`].
#[derive(Debug, Clone)]
pub struct BpeTraining {
    pub vocab: Vocabulary,
    /// False when the corpus ran out of pairs before `target_size`.
    pub reached_target: bool,
}

struct Word {
    ids: Vec<u32>,
    count: i64,
}

/// Trains a byte-level BPE vocabulary of `target_size` tokens.
///
/// Starts from the 256 byte tokens and repeatedly merges the most frequent
/// adjacent pair (overlapping occurrences counted), breaking ties by the
/// lexicographically smaller `(left bytes, right bytes)`.
pub fn train_mini_bpe(corpus: &[u8], target_size: usize) -> Result<BpeTraining> {
    if target_size < 256 {
        return Err(Error::Config(alloc::format!(
            "BPE target size {} is below the 256 byte tokens",
            target_size
        )));
    }
    let mut piece_counts: HashMap<&[u8], i64> = HashMap::new();
    for p in split_pieces(corpus) {
        *piece_counts.entry(p).or_default() += 1;
    }
    let mut pieces: Vec<(&[u8], i64)> = piece_counts.into_iter().collect();
    pieces.sort_unstable();
    let mut words: Vec<Word> = pieces
        .into_iter()
        .map(|(p, count)| Word {
            ids: p.iter().map(|&b| b as u32).collect(),
            count,
        })
        .collect();

    let mut entries: Vec<Vec<u8>> = (0..=255u8).map(|b| alloc::vec![b]).collect();
    let mut counts: HashMap<(u32, u32), i64> = HashMap::new();
    let mut occurs: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
    for (wi, w) in words.iter().enumerate() {
        for p in w.ids.windows(2) {
            *counts.entry((p[0], p[1])).or_default() += w.count;
            occurs.entry((p[0], p[1])).or_default().push(wi as u32);
        }
    }

    let mut merges = Vec::new();
    while entries.len() < target_size {
        let mut best: Option<((u32, u32), i64)> = None;
        for (&pair, &c) in &counts {
            if c <= 0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((bp, bc)) => c > bc || (c == bc && pair_order(&entries, pair, bp) == Ordering::Less),
            };
            if better {
                best = Some((pair, c));
            }
        }
        let Some((pair, _)) = best else { break };
        let new_id = entries.len() as u32;
        let mut joined = entries[pair.0 as usize].clone();
        joined.extend_from_slice(&entries[pair.1 as usize]);
        entries.push(joined);
        merges.push(pair);

        let mut touched = occurs.remove(&pair).unwrap_or_default();
        touched.sort_unstable();
        touched.dedup();
        for wi in touched {
            let w = &mut words[wi as usize];
            if !w.ids.windows(2).any(|p| (p[0], p[1]) == pair) {
                continue;
            }
            for p in w.ids.windows(2) {
                *counts.get_mut(&(p[0], p[1])).unwrap() -= w.count;
            }
            w.ids = merge_pair(&w.ids, pair, new_id);
            for p in w.ids.windows(2) {
                *counts.entry((p[0], p[1])).or_default() += w.count;
                if p[0] == new_id || p[1] == new_id {
                    occurs.entry((p[0], p[1])).or_default().push(wi);
                }
            }
        }
        counts.retain(|_, c| *c > 0);
    }
    let reached_target = entries.len() >= target_size;
    Ok(BpeTraining {
        vocab: Vocabulary::from_merges(merges)?,
        reached_target,
    })
}

fn pair_order(entries: &[Vec<u8>], a: (u32, u32), b: (u32, u32)) -> Ordering {
    let ka = (&entries[a.0 as usize], &entries[a.1 as usize]);
    let kb = (&entries[b.0 as usize], &entries[b.1 as usize]);
    ka.cmp(&kb).then(a.cmp(&b))
}
