//! Checkpoint directories.
//!
//! ```text
//! manifest.json   configs, mode, alpha, seed, step, tensor layout
//! tensors.bin     8-byte magic, then little-endian f32 tensors back to back
//! spelling.bin    vocab_size × 16 spelling bytes
//! tokenizer.*     the tokenizer in its native format (absent for bytes)
//! ```
//!
//! Tensor offsets in the manifest are byte offsets into `tensors.bin`,
//! counted from the start of the file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spellbee_core::beeembed::EmbedMode;
use spellbee_core::model::{tensor_specs, ModelConfig, Weights};
use spellbee_core::tokenspell::{SpellingTable, TableVariant, Vocabulary, SPELLING_WIDTH};
use spellbee_core::trainer::{OptimizerState, TrainConfig};
use spellbee_core::Tensor;

use crate::vocab_io::{load_vocab, save_vocab, VocabFormat};
use crate::FormatError;

pub const MAGIC: &[u8; 8] = b"SPBEECK1";
pub const FORMAT: &str = "spellbee-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub mode: EmbedMode,
    pub alpha: f64,
    pub seed: u64,
    pub step: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub tokenizer_format: String,
    pub tokenizer_file: Option<String>,
    pub table_variant: TableVariant,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
    pub has_optimizer: bool,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub step: u64,
    pub weights: Weights<f32>,
    pub optimizer: Option<OptimizerState<f32>>,
    pub vocab: Vocabulary,
    pub table: SpellingTable,
}

fn tokenizer_name(format: VocabFormat) -> Option<&'static str> {
    match format {
        VocabFormat::MiniBpe => Some("tokenizer.bpe"),
        VocabFormat::RankFile => Some("tokenizer.ranks"),
        VocabFormat::ByteFallback => None,
    }
}

pub fn save(dir: &Path, ck: &Checkpoint) -> Result<(), FormatError> {
    fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    let mut blob = MAGIC.to_vec();
    let mut entries = Vec::new();
    let mut push = |name: String, t: &Tensor<f32>| {
        entries.push(TensorEntry { name, shape: t.shape().to_vec(), offset: blob.len() as u64 });
        for x in t.data() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    };
    let names: Vec<String> = tensor_specs(&ck.model).into_iter().map(|(n, _)| n).collect();
    for (n, t) in names.iter().zip(ck.weights.tensors()) {
        push(n.clone(), t);
    }
    if let Some(opt) = &ck.optimizer {
        for (n, t) in names.iter().zip(&opt.m) {
            push(format!("adam.m.{n}"), t);
        }
        for (n, t) in names.iter().zip(&opt.v) {
            push(format!("adam.v.{n}"), t);
        }
    }
    let format = VocabFormat::from(ck.vocab.kind());
    let tokenizer_file = tokenizer_name(format).map(String::from);
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        mode: ck.weights.embed.mode,
        alpha: ck.weights.embed.alpha,
        seed: ck.seed,
        step: ck.step,
        model: ck.model.clone(),
        train: ck.train.clone(),
        tokenizer_format: format.to_string(),
        tokenizer_file: tokenizer_file.clone(),
        table_variant: ck.table.variant(),
        dtype: "f32-le".into(),
        tensors: entries,
        has_optimizer: ck.optimizer.is_some(),
    };
    let opt_step = ck.optimizer.as_ref().map_or(0, |o| o.step);
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| FormatError::io(&p, e))
    };
    let mut json = serde_json::to_string_pretty(&serde_json::json!({
        "manifest": manifest,
        "optimizer_step": opt_step,
    }))?;
    json.push('\n');
    write("manifest.json", json.as_bytes())?;
    write("tensors.bin", &blob)?;
    write("spelling.bin", &ck.table.to_bytes())?;
    if let Some(f) = tokenizer_file {
        save_vocab(&dir.join(f), &ck.vocab)?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct ManifestFile {
    manifest: Manifest,
    optimizer_step: u64,
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, FormatError> {
    Ok(read_manifest_file(dir)?.manifest)
}

fn read_manifest_file(dir: &Path) -> Result<ManifestFile, FormatError> {
    let p = dir.join("manifest.json");
    let text = fs::read_to_string(&p).map_err(|e| FormatError::io(&p, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    let m = &raw["manifest"];
    if m["format"] != FORMAT {
        return Err(FormatError::Invalid(format!("{} is not a spellbee checkpoint", p.display())));
    }
    if m["version"] != VERSION {
        return Err(FormatError::Invalid(format!(
            "checkpoint version {} is not supported (expected {VERSION})",
            m["version"]
        )));
    }
    Ok(serde_json::from_value(raw)?)
}

pub fn load(dir: &Path) -> Result<Checkpoint, FormatError> {
    let ManifestFile { manifest: m, optimizer_step } = read_manifest_file(dir)?;
    m.model.validate()?;
    let p = dir.join("tensors.bin");
    let blob = fs::read(&p).map_err(|e| FormatError::io(&p, e))?;
    if blob.len() < MAGIC.len() || &blob[..MAGIC.len()] != MAGIC {
        return Err(FormatError::Invalid(format!("{}: bad magic bytes", p.display())));
    }
    let mut tensors = Vec::with_capacity(m.tensors.len());
    for e in &m.tensors {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + 4 * n;
        if start < MAGIC.len() || end > blob.len() {
            return Err(FormatError::Invalid(format!("{}: truncated at tensor {}", p.display(), e.name)));
        }
        let data = blob[start..end].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        tensors.push(Tensor::new(&e.shape, data)?);
    }
    let specs = tensor_specs(&m.model);
    let k = specs.len();
    let expected = if m.has_optimizer { 3 * k } else { k };
    if tensors.len() != expected {
        return Err(FormatError::Invalid(format!("expected {expected} tensors, found {}", tensors.len())));
    }
    let mut rest = tensors.split_off(k);
    let weights = Weights::from_tensors(&m.model, tensors, m.alpha, m.mode)?;
    let optimizer = m.has_optimizer.then(|| {
        let v = rest.split_off(k);
        OptimizerState { m: rest, v, step: optimizer_step }
    });

    let format: VocabFormat = m.tokenizer_format.parse()?;
    let vocab = load_vocab(m.tokenizer_file.as_ref().map(|f| dir.join(f)).as_deref(), format)?;
    let p = dir.join("spelling.bin");
    let bytes = fs::read(&p).map_err(|e| FormatError::io(&p, e))?;
    if bytes.len() != vocab.len() * SPELLING_WIDTH {
        return Err(FormatError::Invalid(format!(
            "{}: {} bytes for a vocabulary of {}",
            p.display(),
            bytes.len(),
            vocab.len()
        )));
    }
    let rows = bytes.chunks_exact(SPELLING_WIDTH).map(|c| c.try_into().expect("exact chunks")).collect();
    let table = SpellingTable::from_rows(rows, m.table_variant);
    weights.embed.validate(&table)?;
    Ok(Checkpoint {
        model: m.model,
        train: m.train,
        seed: m.seed,
        step: m.step,
        weights,
        optimizer,
        vocab,
        table,
    })
}
