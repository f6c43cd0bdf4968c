use alloc::borrow::ToOwned;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use hashbrown::HashMap;
use serde::{Deserialize, Serialize};

use super::bpe::split_pieces;
use crate::error::{Error, Result};

/// Byte string of the end-of-text special token.
pub const END_OF_TEXT: &[u8] = b"<|endoftext|>";

/// How a vocabulary was obtained, which also fixes how it encodes text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VocabKind {
    /// Ranked token list (`base64(token) rank` lines); encoded by greedy
    /// longest match, an approximation of the original pre-tokenizer.
    RankFile,
    /// Byte-level BPE trained locally; encoded by applying merges in rank order.
    MiniBpe,
    /// The 256 single-byte tokens.
    ByteFallback,
}

/// Dense token-id -> byte-string table.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    kind: VocabKind,
    entries: Vec<Vec<u8>>,
    merges: Vec<(u32, u32)>,
    specials: BTreeSet<u32>,
    eot: Option<u32>,
    lookup: HashMap<Vec<u8>, u32>,
    merge_ranks: HashMap<(u32, u32), u32>,
    max_len: usize,
}

impl Vocabulary {
    fn from_parts(kind: VocabKind, entries: Vec<Vec<u8>>, merges: Vec<(u32, u32)>) -> Self {
        let mut v = Self {
            kind,
            entries,
            merges,
            specials: BTreeSet::new(),
            eot: None,
            lookup: HashMap::new(),
            merge_ranks: HashMap::new(),
            max_len: 0,
        };
        v.reindex();
        v
    }

    fn reindex(&mut self) {
        self.lookup.clear();
        self.max_len = 0;
        if self.kind == VocabKind::RankFile {
            for (id, bytes) in self.entries.iter().enumerate() {
                if self.specials.contains(&(id as u32)) {
                    continue;
                }
                self.lookup.entry(bytes.clone()).or_insert(id as u32);
                self.max_len = self.max_len.max(bytes.len());
            }
        }
        self.merge_ranks = self
            .merges
            .iter()
            .enumerate()
            .map(|(rank, &pair)| (pair, rank as u32))
            .collect();
    }

    pub fn byte_fallback() -> Self {
        Self::from_parts(VocabKind::ByteFallback, (0..=255u8).map(|b| alloc::vec![b]).collect(), Vec::new())
    }

    /// Builds a rank-file vocabulary; ranks become token ids and must be
    /// dense and unique.
    pub fn from_ranks(tokens: Vec<(Vec<u8>, u32)>) -> Result<Self> {
        let n = tokens.len();
        let mut slots: Vec<Option<Vec<u8>>> = alloc::vec![None; n];
        for (bytes, rank) in tokens {
            let r = rank as usize;
            if r >= n {
                return Err(Error::Invalid(format!("rank {} leaves a gap in {} tokens", rank, n)));
            }
            if bytes.is_empty() {
                return Err(Error::Invalid(format!("rank {} has an empty token", rank)));
            }
            if slots[r].is_some() {
                return Err(Error::Invalid(format!("duplicate rank {}", rank)));
            }
            slots[r] = Some(bytes);
        }
        let entries = slots.into_iter().map(|s| s.unwrap()).collect();
        Ok(Self::from_parts(VocabKind::RankFile, entries, Vec::new()))
    }

    /// Rebuilds a byte-level BPE vocabulary from its ordered merge list.
    pub fn from_merges(merges: Vec<(u32, u32)>) -> Result<Self> {
        let mut entries: Vec<Vec<u8>> = (0..=255u8).map(|b| alloc::vec![b]).collect();
        for (rank, &(a, b)) in merges.iter().enumerate() {
            let len = entries.len() as u32;
            if a >= len || b >= len {
                return Err(Error::Invalid(format!(
                    "merge {} references token {} before it exists",
                    rank,
                    a.max(b)
                )));
            }
            let mut joined = entries[a as usize].clone();
            joined.extend_from_slice(&entries[b as usize]);
            entries.push(joined);
        }
        Ok(Self::from_parts(VocabKind::MiniBpe, entries, merges))
    }

    /// Appends a special token (all-pad spelling, never produced by `encode`).
    pub fn push_special(&mut self, bytes: &[u8]) -> u32 {
        let id = self.entries.len() as u32;
        self.entries.push(bytes.to_owned());
        self.specials.insert(id);
        id
    }

    /// Appends the end-of-text special and marks it as the document separator.
    pub fn with_end_of_text(mut self) -> Self {
        let id = self.push_special(END_OF_TEXT);
        self.eot = Some(id);
        self
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn token(&self, id: u32) -> Option<&[u8]> {
        self.entries.get(id as usize).map(|v| v.as_slice())
    }

    pub fn entries(&self) -> &[Vec<u8>] {
        &self.entries
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn specials(&self) -> &BTreeSet<u32> {
        &self.specials
    }

    pub fn is_special(&self, id: u32) -> bool {
        self.specials.contains(&id)
    }

    pub fn end_of_text(&self) -> Option<u32> {
        self.eot
    }

    /// Marks an existing token as the document separator.
    pub fn set_end_of_text(&mut self, id: u32) -> Result<()> {
        if id as usize >= self.entries.len() {
            return Err(Error::Index { what: "token", index: id as usize, bound: self.entries.len() });
        }
        self.specials.insert(id);
        self.eot = Some(id);
        self.reindex();
        Ok(())
    }

    pub fn encode(&self, text: &[u8]) -> Result<Vec<u32>> {
        match self.kind {
            VocabKind::ByteFallback => Ok(text.iter().map(|&b| b as u32).collect()),
            VocabKind::MiniBpe => {
                let mut out = Vec::with_capacity(text.len() / 2);
                for piece in split_pieces(text) {
                    self.encode_piece(piece, &mut out);
                }
                Ok(out)
            }
            VocabKind::RankFile => self.encode_longest_match(text),
        }
    }

    fn encode_piece(&self, piece: &[u8], out: &mut Vec<u32>) {
        let mut ids: Vec<u32> = piece.iter().map(|&b| b as u32).collect();
        while ids.len() > 1 {
            let mut best: Option<(u32, (u32, u32))> = None;
            for w in ids.windows(2) {
                if let Some(&rank) = self.merge_ranks.get(&(w[0], w[1])) {
                    if best.is_none_or(|(r, _)| rank < r) {
                        best = Some((rank, (w[0], w[1])));
                    }
                }
            }
            let Some((rank, pair)) = best else { break };
            ids = merge_pair(&ids, pair, 256 + rank);
        }
        out.extend_from_slice(&ids);
    }

    fn encode_longest_match(&self, text: &[u8]) -> Result<Vec<u32>> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < text.len() {
            let longest = self.max_len.min(text.len() - i);
            let hit = (1..=longest)
                .rev()
                .find_map(|len| self.lookup.get(&text[i..i + len]).map(|&id| (id, len)));
            match hit {
                Some((id, len)) => {
                    out.push(id);
                    i += len;
                }
                None => return Err(Error::Unencodable(i)),
            }
        }
        Ok(out)
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let bytes = self.token(id).ok_or(Error::Index {
                what: "token",
                index: id as usize,
                bound: self.entries.len(),
            })?;
            out.extend_from_slice(bytes);
        }
        Ok(out)
    }
}

/// Replaces every left-to-right, non-overlapping occurrence of `pair`.
pub(crate) fn merge_pair(ids: &[u32], pair: (u32, u32), new_id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && ids[i] == pair.0 && ids[i + 1] == pair.1 {
            out.push(new_id);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_fallback_is_identity() {
        let v = Vocabulary::byte_fallback();
        assert_eq!(v.len(), 256);
        assert_eq!(v.token(65), Some(&b"A"[..]));
        assert_eq!(v.encode(b"cat").unwrap(), [99, 97, 116]);
    }

    #[test]
    fn longest_match_prefers_longer_token() {
        let v = Vocabulary::from_ranks(alloc::vec![(b"a".to_vec(), 0), (b"ab".to_vec(), 1), (b"b".to_vec(), 2)]).unwrap();
        assert_eq!(v.encode(b"ab").unwrap(), [1]);
        assert_eq!(v.encode(b"ba").unwrap(), [2, 0]);
        assert_eq!(v.encode(b"abc"), Err(Error::Unencodable(2)));
    }

    #[test]
    fn rank_errors() {
        let dup = Vocabulary::from_ranks(alloc::vec![(b"a".to_vec(), 0), (b"b".to_vec(), 0)]);
        assert!(matches!(dup, Err(Error::Invalid(m)) if m.contains("duplicate")));
        let gap = Vocabulary::from_ranks(alloc::vec![(b"a".to_vec(), 0), (b"b".to_vec(), 5)]);
        assert!(gap.is_err());
    }

    #[test]
    fn specials_are_not_encoded() {
        let v = Vocabulary::byte_fallback().with_end_of_text();
        assert_eq!(v.end_of_text(), Some(256));
        assert_eq!(v.decode(&[104, 256]).unwrap(), b"h<|endoftext|>");
        assert_eq!(v.encode(b"<|endoftext|>").unwrap().len(), END_OF_TEXT.len());
    }

    #[test]
    fn merge_pair_is_left_to_right() {
        assert_eq!(merge_pair(&[1, 1, 1], (1, 1), 9), [9, 1]);
        assert_eq!(merge_pair(&[1, 2, 1, 2], (1, 2), 9), [9, 9]);
    }
}
