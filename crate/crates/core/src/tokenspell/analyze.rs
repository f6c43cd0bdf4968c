use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use super::Vocabulary;
use crate::error::Result;

/// Non-special tokens whose bytes contain `word`, ASCII case-insensitively.
pub fn vocab_substring_matches(vocab: &Vocabulary, word: &str) -> Vec<u32> {
    let needle = word.as_bytes().to_ascii_lowercase();
    if needle.is_empty() {
        return Vec::new();
    }
    vocab
        .entries()
        .iter()
        .enumerate()
        .filter(|(id, bytes)| {
            !vocab.is_special(*id as u32)
                && bytes.len() >= needle.len()
                && bytes
                    .to_ascii_lowercase()
                    .windows(needle.len())
                    .any(|w| w == needle.as_slice())
        })
        .map(|(id, _)| id as u32)
        .collect()
}

fn capitalize(word: &str) -> String {
    let mut c = word.chars();
    match c.next() {
        Some(f) => {
            let mut s = String::with_capacity(word.len());
            s.push(f.to_ascii_uppercase());
            s.push_str(c.as_str());
            s
        }
        None => String::new(),
    }
}

/// Surface forms of a word as they show up in running text: lowercase with
/// ten leading contexts, capitalized with four, all-caps with two.
pub fn surface_variants(word: &str) -> Vec<String> {
    let lower = word.to_ascii_lowercase();
    let title = capitalize(&lower);
    let upper = word.to_ascii_uppercase();
    let mut out = Vec::with_capacity(16);
    for lead in ["", " ", "(", ",", "=", "'", ".", "[", "-", "_"] {
        out.push(alloc::format!("{lead}{lower}"));
    }
    for lead in ["", " ", "(", "."] {
        out.push(alloc::format!("{lead}{title}"));
    }
    for lead in ["", "'"] {
        out.push(alloc::format!("{lead}{upper}"));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantEncoding {
    pub text: String,
    pub tokens: Result<Vec<u32>>,
}

/// Tokenizations of every surface variant and the union of tokens they use.
#[derive(Debug, Clone, PartialEq)]
pub struct Census {
    pub variants: Vec<VariantEncoding>,
    pub distinct: BTreeSet<u32>,
}

/// Variants that fail to encode are reported and left out of the union.
pub fn variant_token_census(vocab: &Vocabulary, word: &str) -> Census {
    let variants: Vec<VariantEncoding> = surface_variants(word)
        .into_iter()
        .map(|text| {
            let tokens = vocab.encode(text.as_bytes());
            VariantEncoding { text, tokens }
        })
        .collect();
    let distinct = variants
        .iter()
        .filter_map(|v| v.tokens.as_ref().ok())
        .flatten()
        .copied()
        .collect();
    Census { variants, distinct }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn single_letter_on_bytes() {
        let v = Vocabulary::byte_fallback();
        assert_eq!(vocab_substring_matches(&v, "a"), [0x41, 0x61]);
        assert!(vocab_substring_matches(&v, "zzqx").is_empty());
    }

    #[test]
    fn census_on_bytes_is_distinct_bytes() {
        let v = Vocabulary::byte_fallback();
        let c = variant_token_census(&v, "a");
        // a, A, and the nine leading characters (space ( , = ' . [ - _)
        let want: BTreeSet<u32> = "aA (,='.[-_".bytes().map(|b| b as u32).collect();
        assert_eq!(c.distinct, want);
        assert_eq!(c.distinct.len(), 11);

        let c = variant_token_census(&v, "strawberry");
        let mut direct = BTreeSet::new();
        for s in surface_variants("strawberry") {
            direct.extend(s.bytes().map(|b| b as u32));
        }
        assert_eq!(c.distinct, direct);
    }

    #[test]
    fn variant_list() {
        let v = surface_variants("strawberry");
        assert_eq!(v.len(), 16);
        assert!(v.contains(&" Strawberry".to_string()));
        assert!(v.contains(&"'STRAWBERRY".to_string()));
        assert!(v.contains(&"_strawberry".to_string()));
    }
}
