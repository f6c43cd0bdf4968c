//! Run configuration: `key = value` files, `--set key=value` overrides and
//! built-in defaults, in that order of precedence (flag > file > default).
//!
//! Config files allow `#` comments and blank lines. Every key is listed in
//! [`KEYS`]; unknown keys and unparsable values are rejected up front.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use spellbee_core::beeembed::EmbedMode;
use spellbee_core::model::{Activation, ModelConfig};
use spellbee_core::tokenspell::SpellingTable;
use spellbee_core::trainer::TrainConfig;

use crate::corpus::DocMode;
use crate::vocab_io::VocabFormat;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}:{line}: {msg}")]
    Syntax { path: String, line: usize, msg: String },
    #[error("unknown config key `{0}` (see --help for the list)")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {msg}")]
    BadValue { key: String, value: String, msg: String },
    #[error("`{0}` must be set")]
    Missing(&'static str),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Usize,
    U64,
    F64,
    OptU64,
    Mode,
    Activation,
    DocMode,
    Format,
    Separator,
    Text,
}

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
    kind: Kind,
}

const fn key(name: &'static str, default: &'static str, kind: Kind, help: &'static str) -> Key {
    Key { name, default, help, kind }
}

/// Every recognised key, its default and what it controls.
pub const KEYS: &[Key] = &[
    key("mode", "bee", Kind::Mode, "embedding: baseline, bee, bias-only, no-rotary, no-token-emb, shuffled, first-char"),
    key("seed", "0", Kind::U64, "seed for init, data split, batch order and table shuffling"),
    key("shuffle_seed", "", Kind::OptU64, "permutation seed for mode=shuffled (empty: use seed)"),
    key("out", "run", Kind::Text, "output directory (train) or file"),
    key("corpus", "", Kind::Text, "text file or directory of files"),
    key("doc_mode", "line", Kind::DocMode, "document unit: line or file"),
    key("tokenizer", "", Kind::Text, "tokenizer file (empty: byte fallback)"),
    key("tokenizer_format", "auto", Kind::Format, "auto, mini-bpe, rank-file or byte-fallback"),
    key("separator", "eot", Kind::Separator, "token between packed documents: eot or none"),
    key("test_fraction", "0.05", Kind::F64, "share of documents held out for test loss"),
    key("eval_rows", "64", Kind::Usize, "maximum held-out rows per evaluation"),
    key("d_model", "128", Kind::Usize, "model width"),
    key("n_layers", "4", Kind::Usize, "transformer blocks"),
    key("n_heads", "4", Kind::Usize, "query heads"),
    key("n_kv_heads", "0", Kind::Usize, "key/value heads (0: n_heads / 4, at least 1)"),
    key("ffn_hidden", "0", Kind::Usize, "MLP width (0: 8d/3 rounded up to 8 for swiglu, 4d otherwise)"),
    key("activation", "swiglu", Kind::Activation, "MLP type: swiglu, gelu or relu"),
    key("rope_base", "10000", Kind::F64, "rotary base for attention and byte positions"),
    key("lr_max", "0.0007", Kind::F64, "peak learning rate"),
    key("warmup_steps", "500", Kind::U64, "linear warmup steps"),
    key("final_lr_frac", "0.1", Kind::F64, "final learning rate as a fraction of lr_max"),
    key("beta1", "0.9", Kind::F64, "AdamW first-moment decay"),
    key("beta2", "0.995", Kind::F64, "AdamW second-moment decay"),
    key("eps", "1e-7", Kind::F64, "AdamW epsilon"),
    key("weight_decay", "0.1", Kind::F64, "decoupled weight decay"),
    key("batch_size", "192", Kind::Usize, "sequences per step"),
    key("seq_len", "512", Kind::Usize, "tokens per sequence (also the model context)"),
    key("token_budget", "", Kind::OptU64, "training tokens (empty: 20 per parameter times chinchilla_multiplier)"),
    key("chinchilla_multiplier", "1", Kind::U64, "multiple of the 20-tokens-per-parameter budget"),
    key("eval_every", "100", Kind::U64, "steps between test-loss evaluations"),
];

/// Where a resolved value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Flag => "flag",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, (String, Source)>,
}

fn lookup(name: &str) -> Result<&'static Key, ConfigError> {
    KEYS.iter().find(|k| k.name == name).ok_or_else(|| ConfigError::UnknownKey(name.into()))
}

fn check(k: &Key, v: &str) -> Result<(), String> {
    fn p<T: FromStr>(v: &str) -> Result<(), String>
    where
        T::Err: fmt::Display,
    {
        v.parse::<T>().map(drop).map_err(|e| e.to_string())
    }
    match k.kind {
        Kind::Usize => p::<usize>(v),
        Kind::U64 => p::<u64>(v),
        Kind::F64 => match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(()),
            Ok(_) => Err("not finite".into()),
            Err(e) => Err(e.to_string()),
        },
        Kind::OptU64 if v.is_empty() => Ok(()),
        Kind::OptU64 => p::<u64>(v),
        Kind::Mode => p::<EmbedMode>(v),
        Kind::Activation => p::<Activation>(v),
        Kind::DocMode => p::<DocMode>(v),
        Kind::Format if v == "auto" => Ok(()),
        Kind::Format => p::<VocabFormat>(v),
        Kind::Separator if v == "eot" || v == "none" => Ok(()),
        Kind::Separator => Err("expected eot or none".into()),
        Kind::Text => Ok(()),
    }
}

/// Splits `key=value`, trimming both sides.
pub fn split_pair(s: &str) -> Option<(&str, &str)> {
    let (k, v) = s.split_once('=')?;
    Some((k.trim(), v.trim()))
}

/// Parses config file text into ordered `(key, value)` pairs.
pub fn parse_text(path: &str, text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = split_pair(line).ok_or_else(|| ConfigError::Syntax {
            path: path.into(),
            line: i + 1,
            msg: format!("expected key = value, got `{line}`"),
        })?;
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { values: KEYS.iter().map(|k| (k.name, (k.default.to_string(), Source::Default))).collect() }
    }
}

impl RunConfig {
    pub fn set(&mut self, name: &str, value: &str, source: Source) -> Result<(), ConfigError> {
        let k = lookup(name)?;
        check(k, value).map_err(|msg| ConfigError::BadValue { key: name.into(), value: value.into(), msg })?;
        self.values.insert(k.name, (value.to_string(), source));
        Ok(())
    }

    /// Defaults, then the file (if any), then the flag overrides.
    pub fn resolve(file: Option<&Path>, flags: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        if let Some(p) = file {
            let text = fs::read_to_string(p)
                .map_err(|source| ConfigError::Io { path: p.display().to_string(), source })?;
            for (k, v) in parse_text(&p.display().to_string(), &text)? {
                cfg.set(&k, &v, Source::File)?;
            }
        }
        for (k, v) in flags {
            cfg.set(k, v, Source::Flag)?;
        }
        Ok(cfg)
    }

    pub fn get(&self, name: &str) -> &str {
        &self.values.get(name).unwrap_or_else(|| panic!("unregistered key {name}")).0
    }

    pub fn source(&self, name: &str) -> Source {
        self.values[name].1
    }

    fn parse<T: FromStr>(&self, name: &str) -> T {
        self.get(name).parse().unwrap_or_else(|_| panic!("`{name}` was checked on set"))
    }

    fn opt<T: FromStr>(&self, name: &str) -> Option<T> {
        let v = self.get(name);
        (!v.is_empty()).then(|| self.parse(name))
    }

    fn path(&self, name: &str) -> Option<PathBuf> {
        let v = self.get(name);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn mode(&self) -> EmbedMode {
        self.parse("mode")
    }

    pub fn seed(&self) -> u64 {
        self.parse("seed")
    }

    pub fn out(&self) -> PathBuf {
        PathBuf::from(self.get("out"))
    }

    pub fn corpus(&self) -> Result<PathBuf, ConfigError> {
        self.path("corpus").ok_or(ConfigError::Missing("corpus"))
    }

    pub fn doc_mode(&self) -> DocMode {
        self.parse("doc_mode")
    }

    pub fn tokenizer(&self) -> Option<PathBuf> {
        self.path("tokenizer")
    }

    /// `None` means detect from the file.
    pub fn tokenizer_format(&self) -> Option<VocabFormat> {
        match self.get("tokenizer_format") {
            "auto" => None,
            _ => Some(self.parse("tokenizer_format")),
        }
    }

    pub fn use_separator(&self) -> bool {
        self.get("separator") == "eot"
    }

    pub fn test_fraction(&self) -> f64 {
        self.parse("test_fraction")
    }

    pub fn eval_rows(&self) -> usize {
        self.parse("eval_rows")
    }

    /// The spelling table the mode expects.
    pub fn table_for_mode(&self, plain: SpellingTable) -> SpellingTable {
        match self.mode() {
            EmbedMode::Shuffled => plain.shuffled(self.opt("shuffle_seed").unwrap_or(self.seed())),
            EmbedMode::FirstChar => plain.first_char(),
            _ => plain,
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let (d, heads) = (self.parse("d_model"), self.parse::<usize>("n_heads"));
        let activation: Activation = self.parse("activation");
        let mut m = ModelConfig::new(d, self.parse("n_layers"), heads, vocab_size, self.parse("seq_len"))
            .with_activation(activation);
        match self.parse::<usize>("n_kv_heads") {
            0 => {}
            n => m.n_kv_heads = n,
        }
        match self.parse::<usize>("ffn_hidden") {
            0 => {}
            n => m.ffn_hidden = n,
        }
        m.rope_base = self.parse("rope_base");
        m
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr_max: self.parse("lr_max"),
            warmup_steps: self.parse("warmup_steps"),
            final_lr_frac: self.parse("final_lr_frac"),
            beta1: self.parse("beta1"),
            beta2: self.parse("beta2"),
            eps: self.parse("eps"),
            weight_decay: self.parse("weight_decay"),
            batch_size: self.parse("batch_size"),
            seq_len: self.parse("seq_len"),
            token_budget: self.opt("token_budget"),
            chinchilla_multiplier: self.parse("chinchilla_multiplier"),
            seed: self.seed(),
            eval_every: self.parse("eval_every"),
        }
    }

    /// Every key in declaration order as a loadable config file, each line
    /// annotated with its source.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let (v, src) = &self.values[k.name];
            let kv = format!("{} = {}", k.name, v);
            let _ = writeln!(s, "{kv:<40} # {src}");
        }
        s
    }
}

/// Key reference for `--help`.
pub fn keys_help() -> String {
    let mut s = String::from("Config keys (key = value in --config files, or --set key=value):\n");
    for k in KEYS {
        let d = if k.default.is_empty() { "<empty>" } else { k.default };
        let _ = writeln!(s, "  {:<22} {}  [default: {}]", k.name, k.help, d);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        fs::write(&p, "# tiny\nseed = 3\nlr_max=0.01  # peak\n\nbatch_size = 8\n").unwrap();
        let cfg = RunConfig::resolve(Some(&p), &pairs(&[("seed", "9"), ("mode", "baseline")])).unwrap();
        assert_eq!((cfg.seed(), cfg.source("seed")), (9, Source::Flag));
        assert_eq!(cfg.train_config().lr_max, 0.01);
        assert_eq!(cfg.source("lr_max"), Source::File);
        assert_eq!(cfg.train_config().batch_size, 8);
        assert_eq!(cfg.mode(), EmbedMode::Baseline);
        assert_eq!(cfg.train_config().warmup_steps, 500);
        assert_eq!(cfg.source("warmup_steps"), Source::Default);
    }

    #[test]
    fn defaults_match_core() {
        let cfg = RunConfig::default();
        let t = cfg.train_config();
        assert_eq!(t, TrainConfig::default());
        let m = cfg.model_config(300);
        assert_eq!(m, ModelConfig::new(128, 4, 4, 300, 512));
    }

    #[test]
    fn overrides_of_derived_widths() {
        let cfg = RunConfig::resolve(None, &pairs(&[("n_kv_heads", "2"), ("ffn_hidden", "96"), ("activation", "gelu")]))
            .unwrap();
        let m = cfg.model_config(10);
        assert_eq!((m.n_kv_heads, m.ffn_hidden, m.activation), (2, 96, Activation::Gelu));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(RunConfig::resolve(None, &pairs(&[("lr", "1")])), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(
            RunConfig::resolve(None, &pairs(&[("mode", "bees")])),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            RunConfig::resolve(None, &pairs(&[("lr_max", "nan")])),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(parse_text("x", "seed 3"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(RunConfig::default().corpus(), Err(ConfigError::Missing("corpus"))));
    }

    #[test]
    fn echo_reloads_to_the_same_values() {
        let cfg = RunConfig::resolve(None, &pairs(&[("seed", "4"), ("token_budget", "1000")])).unwrap();
        let again = RunConfig::resolve(None, &parse_text("echo", &cfg.echo()).unwrap()).unwrap();
        for k in KEYS {
            assert_eq!(cfg.get(k.name), again.get(k.name));
        }
        assert!(cfg.echo().contains("seed = 4"));
    }

    #[test]
    fn help_lists_every_key() {
        let h = keys_help();
        assert!(KEYS.iter().all(|k| h.contains(k.name)));
    }
}
