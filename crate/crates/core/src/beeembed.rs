//! Spelling-aware input embeddings.
//!
//! For token `t` with spelling bytes `b_0..b_15` (null padded):
//!
//! ```text
//! chars(t) = (1/alpha) * sum_i rope(byte_table[b_i], i)
//! bee(t)   = (token_table[t] + chars(t)) / 2
//! ```
//!
//! Byte positions are 0-based; rotations pair `(2k, 2k+1)` across the full
//! embedding width with frequency `base^(-2k/d)`. The remaining
//! [`EmbedMode`]s are the ablations of this construction.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{kernels, Graph, Real, Tensor, Var};
use crate::tokenspell::{SpellingTable, TableVariant};

pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;

/// How input embeddings are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedMode {
    /// Plain token embedding lookup.
    Baseline,
    /// Mean of token embedding and rotated spelling sum.
    Bee,
    /// Mean of token embedding and one shared learned vector.
    BiasOnly,
    /// `Bee` with unrotated byte embeddings (bag of characters).
    NoRotary,
    /// Spelling sum alone.
    NoTokenEmb,
    /// `Bee` over a row-shuffled spelling table.
    Shuffled,
    /// `Bee` over a table holding only each token's first byte.
    FirstChar,
}

impl EmbedMode {
    pub const ALL: [EmbedMode; 7] = [
        EmbedMode::Baseline,
        EmbedMode::Bee,
        EmbedMode::BiasOnly,
        EmbedMode::NoRotary,
        EmbedMode::NoTokenEmb,
        EmbedMode::Shuffled,
        EmbedMode::FirstChar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EmbedMode::Baseline => "baseline",
            EmbedMode::Bee => "bee",
            EmbedMode::BiasOnly => "bias-only",
            EmbedMode::NoRotary => "no-rotary",
            EmbedMode::NoTokenEmb => "no-token-emb",
            EmbedMode::Shuffled => "shuffled",
            EmbedMode::FirstChar => "first-char",
        }
    }

    pub fn uses_spelling(self) -> bool {
        !matches!(self, EmbedMode::Baseline | EmbedMode::BiasOnly)
    }

    pub fn rotates(self) -> bool {
        self != EmbedMode::NoRotary
    }

    fn accepts(self, variant: TableVariant) -> bool {
        match self {
            EmbedMode::Shuffled => matches!(variant, TableVariant::Shuffled { .. }),
            EmbedMode::FirstChar => variant == TableVariant::FirstChar,
            EmbedMode::Baseline | EmbedMode::BiasOnly => true,
            _ => variant == TableVariant::Plain,
        }
    }
}

impl fmt::Display for EmbedMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmbedMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EmbedMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = EmbedMode::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!("unknown mode `{}` (expected one of {})", s, names.join(", ")))
            })
    }
}

/// Learned tables plus the frozen constants of the embedding layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BeeEmbeddingParams<T> {
    /// `[vocab, d]`
    pub token_table: Tensor<T>,
    /// `[256, d]`
    pub byte_table: Tensor<T>,
    /// `[d]`, used by [`EmbedMode::BiasOnly`].
    pub shared_bias: Tensor<T>,
    pub alpha: f64,
    pub rope_base: f64,
    pub mode: EmbedMode,
}

/// Graph handles for the three learned tables.
#[derive(Debug, Clone, Copy)]
pub struct EmbedVars {
    pub token_table: Var,
    pub byte_table: Var,
    pub shared_bias: Var,
}

impl<T: Real> BeeEmbeddingParams<T> {
    pub fn dim(&self) -> usize {
        self.token_table.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.token_table.rows()
    }

    /// Structural checks; `table` must be the variant this mode reads.
    pub fn validate(&self, table: &SpellingTable) -> Result<()> {
        let d = self.dim();
        if self.byte_table.shape() != [256, d] || self.shared_bias.shape() != [d] {
            return Err(Error::Config(format!(
                "byte table {:?} / bias {:?} do not match width {}",
                self.byte_table.shape(),
                self.shared_bias.shape(),
                d
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.mode.uses_spelling() {
            if self.mode.rotates() && !d.is_multiple_of(2) {
                return Err(Error::Config(format!("rotary byte embeddings need an even width, got {}", d)));
            }
            if table.len() != self.vocab_size() {
                return Err(Error::Config(format!(
                    "spelling table has {} rows for a vocabulary of {}",
                    table.len(),
                    self.vocab_size()
                )));
            }
        }
        if !self.mode.accepts(table.variant()) {
            return Err(Error::Config(format!(
                "mode {} cannot read a {:?} spelling table",
                self.mode,
                table.variant()
            )));
        }
        Ok(())
    }

    pub fn register(&self, g: &mut Graph<T>, trainable: bool) -> EmbedVars {
        let mut leaf = |t: &Tensor<T>| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
        EmbedVars {
            token_table: leaf(&self.token_table),
            byte_table: leaf(&self.byte_table),
            shared_bias: leaf(&self.shared_bias),
        }
    }

    /// Records the embedding of `ids` on `g`; returns `[ids.len(), d]`.
    pub fn embed_on_graph(&self, g: &mut Graph<T>, vars: EmbedVars, ids: &[u32], table: &SpellingTable) -> Result<Var> {
        self.validate(table)?;
        let v = self.vocab_size();
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        if let Some(&bad) = idx.iter().find(|&&i| i >= v) {
            return Err(Error::Index { what: "token", index: bad, bound: v });
        }
        let half = T::from_f64(0.5);
        let mode = self.mode;
        let chars = |g: &mut Graph<T>| -> Result<Var> {
            let rows: Vec<[u8; 16]> = idx.iter().map(|&i| table.rows()[i]).collect();
            let sum = g.spelling_sum(vars.byte_table, &rows, mode.rotates(), self.rope_base)?;
            Ok(g.div_scalar(sum, T::from_f64(self.alpha)))
        };
        Ok(match mode {
            EmbedMode::Baseline => g.gather(vars.token_table, &idx)?,
            EmbedMode::BiasOnly => {
                let tok = g.gather(vars.token_table, &idx)?;
                let s = g.add_row(tok, vars.shared_bias)?;
                g.scale(s, half)
            }
            EmbedMode::NoTokenEmb => chars(g)?,
            EmbedMode::Bee | EmbedMode::NoRotary | EmbedMode::Shuffled | EmbedMode::FirstChar => {
                let tok = g.gather(vars.token_table, &idx)?;
                let c = chars(g)?;
                let s = g.add(tok, c)?;
                g.scale(s, half)
            }
        })
    }

    /// `[ids.len(), d]` embeddings without recording gradients.
    pub fn embed_tokens(&self, ids: &[u32], table: &SpellingTable) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.register(&mut g, false);
        let out = self.embed_on_graph(&mut g, vars, ids, table)?;
        Ok(g.value(out).clone())
    }
}

/// Rotates consecutive pairs of `v` by `pos * base^(-2k/d)`.
pub fn rope_rotate<T: Real>(v: &[T], pos: usize, base: f64) -> Result<Vec<T>> {
    if !v.len().is_multiple_of(2) {
        return Err(Error::Config(format!("rope needs an even dimension, got {}", v.len())));
    }
    let half = v.len() / 2;
    let (cos, sin) = kernels::rope_table(pos + 1, v.len(), base);
    let mut out = v.to_vec();
    kernels::rotate_pairs(&mut out, &cos[pos * half..], &sin[pos * half..], false);
    Ok(out)
}

/// Unscaled spelling sum of one row.
pub fn char_sum<T: Real>(row: &[u8; 16], byte_table: &Tensor<T>, rope_base: f64, rotate: bool) -> Result<Vec<T>> {
    let mut g = Graph::new();
    let t = g.constant(byte_table.clone());
    let out = g.spelling_sum(t, core::slice::from_ref(row), rotate, rope_base)?;
    Ok(g.value(out).data().to_vec())
}

/// Ratio of mean squared norms `E|chars|^2 / E|tok|^2` over the whole
/// vocabulary, for the given `alpha`.
pub fn norm_ratio<T: Real>(params: &BeeEmbeddingParams<T>, table: &SpellingTable, alpha: f64) -> Result<f64> {
    let (chars, tok) = mean_sq_norms(params, table)?;
    Ok(chars / (alpha * alpha) / tok)
}

fn mean_sq_norms<T: Real>(params: &BeeEmbeddingParams<T>, table: &SpellingTable) -> Result<(f64, f64)> {
    let v = params.vocab_size();
    if v == 0 || table.len() != v {
        return Err(Error::Calibration(format!("table has {} rows for {} tokens", table.len(), v)));
    }
    let sq = |xs: &[T]| xs.iter().map(|x| x.to_f64() * x.to_f64()).sum::<f64>();
    let tok: f64 = (0..v).map(|t| sq(params.token_table.row(t))).sum::<f64>() / v as f64;
    let mut chars = 0.0;
    for chunk in table.rows().chunks(1024) {
        let mut g = Graph::new();
        let bt = g.constant(params.byte_table.clone());
        let s = g.spelling_sum(bt, chunk, params.mode.rotates(), params.rope_base)?;
        chars += g.value(s).data().chunks(params.dim()).map(sq).sum::<f64>();
    }
    Ok((chars / v as f64, tok))
}

/// `alpha = sqrt(mean |spelling sum|^2 / mean |token embedding|^2)` over the
/// rows of `table` (the table the mode reads). Computed once at init.
pub fn calibrate_alpha<T: Real>(params: &BeeEmbeddingParams<T>, table: &SpellingTable) -> Result<f64> {
    let (chars, tok) = mean_sq_norms(params, table)?;
    if !(tok > 0.0) {
        return Err(Error::Calibration(String::from("token table has zero norm")));
    }
    if !(chars > 0.0) {
        return Err(Error::Calibration(String::from("byte table has zero norm")));
    }
    Ok(libm::sqrt(chars / tok))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn params(v: usize, d: usize, mode: EmbedMode) -> BeeEmbeddingParams<f64> {
        let f = |seed: u64| move |i: usize| libm::sin((i as f64 + 1.0) * (seed as f64 + 0.37)) * 0.5;
        BeeEmbeddingParams {
            token_table: Tensor::from_fn(&[v, d], f(1)),
            byte_table: Tensor::from_fn(&[256, d], f(2)),
            shared_bias: Tensor::from_fn(&[d], f(3)),
            alpha: 3.0,
            rope_base: DEFAULT_ROPE_BASE,
            mode,
        }
    }

    #[test]
    fn position_zero_is_identity() {
        let v = [0.3f64, -1.2, 2.5, 0.25];
        assert_eq!(rope_rotate(&v, 0, DEFAULT_ROPE_BASE).unwrap(), v);
    }

    #[test]
    fn two_dim_rotation() {
        let r = rope_rotate(&[1.0f64, 0.0], 1, 123.0).unwrap();
        assert!((r[0] - 1f64.cos()).abs() < 1e-12 && (r[1] - 1f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn odd_dimension_rejected() {
        assert!(matches!(rope_rotate(&[1.0f64, 2.0, 3.0], 1, 10.0), Err(Error::Config(_))));
    }

    #[test]
    fn repeated_byte_without_rotation() {
        let p = params(4, 6, EmbedMode::NoRotary);
        let row = [b'q'; 16];
        let s = char_sum(&row, &p.byte_table, p.rope_base, false).unwrap();
        for (j, x) in s.iter().enumerate() {
            assert!((x - 16.0 * p.byte_table.row(b'q' as usize)[j]).abs() < 1e-12);
        }
        let zero = Tensor::<f64>::zeros(&[256, 6]);
        assert!(char_sum(&row, &zero, 10_000.0, true).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mode_names_roundtrip() {
        for m in EmbedMode::ALL {
            assert_eq!(m.name().parse::<EmbedMode>().unwrap(), m);
        }
        assert!("bias_only".parse::<EmbedMode>().is_err());
    }

    #[test]
    fn zero_byte_table_halves_token_embedding() {
        let mut p = params(5, 4, EmbedMode::Bee);
        p.byte_table = Tensor::zeros(&[256, 4]);
        let table = SpellingTable::from_spellings(&["a", "bc", "def", "g", "hij"]);
        let out = p.embed_tokens(&[0, 3, 4], &table).unwrap();
        for (r, &id) in [0usize, 3, 4].iter().enumerate() {
            for j in 0..4 {
                assert_eq!(out.row(r)[j], p.token_table.row(id)[j] / 2.0);
            }
        }
    }

    #[test]
    fn baseline_is_plain_lookup() {
        let p = params(5, 4, EmbedMode::Baseline);
        let table = SpellingTable::from_spellings(&["a", "b", "c", "d", "e"]);
        let out = p.embed_tokens(&[4, 0, 4], &table).unwrap();
        assert_eq!(out.row(0), p.token_table.row(4));
        assert_eq!(out.row(1), p.token_table.row(0));
    }

    #[test]
    fn mode_table_mismatch() {
        let p = params(2, 4, EmbedMode::Shuffled);
        let table = SpellingTable::from_spellings(&["a", "b"]);
        assert!(p.embed_tokens(&[0], &table).is_err());
        assert!(p.embed_tokens(&[0], &table.shuffled(1)).is_ok());
        let p = params(2, 4, EmbedMode::Bee);
        assert!(matches!(p.embed_tokens(&[2], &table), Err(Error::Index { .. })));
    }

    #[test]
    fn identical_spellings_share_chars() {
        let p = params(3, 4, EmbedMode::NoTokenEmb);
        let table = SpellingTable::from_spellings(&["ab", "xy", "ab"]);
        let out = p.embed_tokens(&[0, 1, 2], &table).unwrap();
        assert_eq!(out.row(0), out.row(2));
        assert_ne!(out.row(0), out.row(1));
    }

    #[test]
    fn calibration_errors() {
        let mut p = params(3, 4, EmbedMode::Bee);
        let table = SpellingTable::from_spellings(&["a", "b", "c"]);
        p.token_table = Tensor::zeros(&[3, 4]);
        assert!(matches!(calibrate_alpha(&p, &table), Err(Error::Calibration(_))));
    }

    #[test]
    fn calibration_is_one_when_norms_match() {
        // A single non-pad byte per row at position 0 (no rotation), with pad
        // byte embedding zero: chars == byte row == token row.
        let d = 4;
        let mut byte_table = Tensor::<f64>::zeros(&[256, d]);
        let mut token_table = Tensor::<f64>::zeros(&[2, d]);
        for (t, b) in b"xy".iter().enumerate() {
            for j in 0..d {
                let v = (t * d + j) as f64 * 0.1 + 0.2;
                byte_table.data_mut()[*b as usize * d + j] = v;
                token_table.data_mut()[t * d + j] = v;
            }
        }
        let p = BeeEmbeddingParams {
            token_table,
            byte_table,
            shared_bias: Tensor::zeros(&[d]),
            alpha: 1.0,
            rope_base: DEFAULT_ROPE_BASE,
            mode: EmbedMode::Bee,
        };
        let table = SpellingTable::from_spellings(&["x", "y"]);
        let a = calibrate_alpha(&p, &table).unwrap();
        assert!((a - 1.0).abs() < 1e-12, "{a}");
        let _ = vec![0u8];
    }
}
