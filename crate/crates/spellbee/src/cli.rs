//! The `spellbee` command line.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error (bad flag,
//! subcommand, config key or value).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use spellbee_core::datapipe::{split_corpus, synth_spelling_corpus, tokenize_docs};
use spellbee_core::model::{count_params, Lm};
use spellbee_core::scaling::{compute_advantage, fit_shifted_power_law, sample_curve, FitSpace, ScalingPoint};
use spellbee_core::spellbench::{self, gen_benchmark, strawberry_probe, STRAWBERRY_ANSWER, STRAWBERRY_PROMPT};
use spellbee_core::tokenspell::{train_mini_bpe, variant_token_census, vocab_substring_matches, SpellingTable, Vocabulary};
use spellbee_core::trainer::{evaluate_loss, init_model, pack_rows, train, TrainInputs, TrainState};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{keys_help, split_pair, ConfigError, RunConfig, Source};
use crate::corpus::{read_corpus, read_words};
use crate::formats::{self, AdvantageRow, CurveRow, FitRow, MetricsWriter};
use crate::vocab_io::{detect_format, load_vocab, save_vocab, VocabFormat};
use crate::SAMPLE_WORDS;

#[derive(Parser, Debug)]
#[command(name = "spellbee", version, about = "Spelling bee embeddings: train, evaluate and analyze")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// key = value config file
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Embedding mode (config key `mode`)
    #[arg(long)]
    mode: Option<String>,
    /// Seed (config key `seed`)
    #[arg(long)]
    seed: Option<u64>,
    /// Corpus file or directory (config key `corpus`)
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Tokenizer file (config key `tokenizer`)
    #[arg(long, visible_alias = "vocab")]
    tokenizer: Option<PathBuf>,
    /// Output path (config key `out`)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train a model; writes metrics.csv, config.txt and checkpoint/ under `out`
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Mean next-token loss of a checkpoint on a corpus
    EvalLoss {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write the spelling benchmark as JSON lines
    GenBench {
        #[command(flatten)]
        common: Common,
        /// Word list, one per line (default: the bundled sample list)
        #[arg(long)]
        words: Option<PathBuf>,
    },
    /// Score a checkpoint on a benchmark file; writes the report CSV
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        bench: PathBuf,
        /// Only the first N tasks
        #[arg(long)]
        limit: Option<usize>,
        /// Per-task outputs as JSON lines
        #[arg(long)]
        outcomes: Option<PathBuf>,
    },
    /// Greedy completion of the strawberry letter-count prompt
    ProbeStrawberry {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Fit L(C) = a·C^(-b) + c per variant; writes fit.csv, advantage.csv, curve.csv under `out`
    FitScaling {
        #[command(flatten)]
        common: Common,
        /// CSV with columns flops,test_loss,variant
        #[arg(long)]
        points: PathBuf,
        /// Variant the advantages are measured against
        #[arg(long, default_value = "baseline")]
        baseline: String,
        /// Residual space: raw or log
        #[arg(long, default_value = "raw")]
        space: String,
        /// Points per sampled curve
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Count vocabulary tokens inside a word and census its surface variants
    AnalyzeVocab {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        word: String,
    },
    /// Write the 16-byte spelling table for the tokenizer and mode
    BuildTable {
        #[command(flatten)]
        common: Common,
    },
    /// Train a mini-BPE tokenizer on the corpus
    TrainTokenizer {
        #[command(flatten)]
        common: Common,
        /// Final vocabulary size, end-of-text token included
        #[arg(long, default_value_t = 2048)]
        vocab_size: usize,
        /// Train on at most this many corpus bytes
        #[arg(long, default_value_t = 3_000_000)]
        max_bytes: usize,
    },
    /// Write the synthetic spelling corpus, one document per line
    GenCorpus {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 120_000)]
        docs: usize,
    },
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Train { .. } => "train",
            Cmd::EvalLoss { .. } => "eval-loss",
            Cmd::GenBench { .. } => "gen-bench",
            Cmd::Bench { .. } => "bench",
            Cmd::ProbeStrawberry { .. } => "probe-strawberry",
            Cmd::FitScaling { .. } => "fit-scaling",
            Cmd::AnalyzeVocab { .. } => "analyze-vocab",
            Cmd::BuildTable { .. } => "build-table",
            Cmd::TrainTokenizer { .. } => "train-tokenizer",
            Cmd::GenCorpus { .. } => "gen-corpus",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Cmd::Train { common }
            | Cmd::EvalLoss { common, .. }
            | Cmd::GenBench { common, .. }
            | Cmd::Bench { common, .. }
            | Cmd::ProbeStrawberry { common, .. }
            | Cmd::FitScaling { common, .. }
            | Cmd::AnalyzeVocab { common, .. }
            | Cmd::BuildTable { common }
            | Cmd::TrainTokenizer { common, .. }
            | Cmd::GenCorpus { common, .. } => common,
        }
    }

    /// Output used when `out` is left at its default.
    fn default_out(&self) -> &'static str {
        match self {
            Cmd::Train { .. } => "run",
            Cmd::GenBench { .. } => "bench.jsonl",
            Cmd::FitScaling { .. } => "scaling",
            Cmd::BuildTable { .. } => "spelling.bin",
            Cmd::TrainTokenizer { .. } => "tokenizer.bpe",
            Cmd::GenCorpus { .. } => "corpus.txt",
            _ => "-",
        }
    }
}

fn resolve(common: &Common) -> Result<RunConfig, ConfigError> {
    let mut flags = Vec::new();
    for s in &common.set {
        let (k, v) = split_pair(s).ok_or_else(|| ConfigError::BadValue {
            key: "--set".into(),
            value: s.clone(),
            msg: "expected KEY=VALUE".into(),
        })?;
        flags.push((k.to_string(), v.to_string()));
    }
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    let named = [
        ("mode", common.mode.clone()),
        ("seed", common.seed.map(|s| s.to_string())),
        ("corpus", path(&common.corpus)),
        ("tokenizer", path(&common.tokenizer)),
        ("out", path(&common.out)),
    ];
    for (k, v) in named {
        if let Some(v) = v {
            flags.push((k.to_string(), v));
        }
    }
    RunConfig::resolve(common.config.as_deref(), &flags)
}

fn command() -> clap::Command {
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for n in names {
        cmd = cmd.mut_subcommand(n, |s| s.after_long_help(keys_help()));
    }
    cmd
}

/// Runs the command line and returns the process exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = command().try_get_matches_from(args).and_then(|m| Cli::from_arg_matches(&m));
    let cli = match parsed {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    let mut cfg = resolve(cmd.common())?;
    if cfg.source("out") == Source::Default {
        cfg.set("out", cmd.default_out(), Source::Default)?;
    }
    eprintln!("# spellbee {} (seed {})", cmd.name(), cfg.seed());
    eprint!("{}", cfg.echo());
    eprintln!("# {cmd:?}");
    match &cmd {
        Cmd::Train { .. } => cmd_train(&cfg),
        Cmd::EvalLoss { checkpoint, .. } => cmd_eval_loss(&cfg, checkpoint),
        Cmd::GenBench { words, .. } => cmd_gen_bench(&cfg, words.as_deref()),
        Cmd::Bench { checkpoint, bench, limit, outcomes, .. } => {
            cmd_bench(&cfg, checkpoint, bench, *limit, outcomes.as_deref())
        }
        Cmd::ProbeStrawberry { checkpoint, .. } => cmd_probe(checkpoint),
        Cmd::FitScaling { points, baseline, space, samples, .. } => {
            cmd_fit_scaling(&cfg, points, baseline, space, *samples)
        }
        Cmd::AnalyzeVocab { word, .. } => cmd_analyze_vocab(&cfg, word),
        Cmd::BuildTable { .. } => cmd_build_table(&cfg),
        Cmd::TrainTokenizer { vocab_size, max_bytes, .. } => cmd_train_tokenizer(&cfg, *vocab_size, *max_bytes),
        Cmd::GenCorpus { docs, .. } => cmd_gen_corpus(&cfg, *docs),
    }
}

fn vocab_from_config(cfg: &RunConfig) -> Result<Vocabulary> {
    let path = cfg.tokenizer();
    let format = match (cfg.tokenizer_format(), &path) {
        (Some(f), _) => f,
        (None, Some(p)) => detect_format(p)?,
        (None, None) => VocabFormat::ByteFallback,
    };
    Ok(load_vocab(path.as_deref(), format)?)
}

fn separator(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Option<u32>> {
    if !cfg.use_separator() {
        return Ok(None);
    }
    vocab
        .end_of_text()
        .map(Some)
        .ok_or_else(|| anyhow!("tokenizer has no end-of-text token; set separator = none"))
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let vocab = vocab_from_config(cfg)?;
    let sep = separator(cfg, &vocab)?;
    let docs = read_corpus(&cfg.corpus()?, cfg.doc_mode())?;
    let (train_docs, test_docs) = split_corpus(docs, cfg.test_fraction(), cfg.seed())?;
    let train_docs = tokenize_docs(&vocab, &train_docs)?;
    let test_docs = tokenize_docs(&vocab, &test_docs)?;

    let model = cfg.model_config(vocab.len());
    let tc = cfg.train_config();
    let mode = cfg.mode();
    let test_rows = pack_rows(&test_docs, tc.seq_len, sep, cfg.eval_rows())?;
    let table = cfg.table_for_mode(SpellingTable::from_vocab(&vocab));
    let weights = init_model::<f32>(&model, mode, &table, cfg.seed())?;
    let counts = count_params(&model, mode);
    eprintln!(
        "# params {} total, {} non-embedding; alpha {}; {} steps",
        counts.total,
        counts.non_embedding,
        weights.embed.alpha,
        tc.total_steps(counts.total)
    );

    let out = cfg.out();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.txt"), cfg.echo())?;
    let mut metrics = MetricsWriter::create(&out.join("metrics.csv"))?;
    let mut write_err = None;
    let inputs = TrainInputs { table: &table, train_docs: &train_docs, test_rows: &test_rows, separator: sep };
    let result = train(&model, &tc, weights, &inputs, |row| {
        if let Some(t) = row.test_loss {
            eprintln!("step {} tokens {} lr {:.3e} train {:.4} test {:.4}", row.step, row.tokens, row.lr, row.train_loss, t);
        }
        if write_err.is_none() {
            write_err = metrics.write(row).err();
        }
    });
    if let Some(e) = write_err {
        return Err(e.into());
    }
    let save = |state: TrainState<f32>| -> Result<()> {
        let ck = Checkpoint {
            model: model.clone(),
            train: tc.clone(),
            seed: cfg.seed(),
            step: state.metrics.len() as u64,
            weights: state.weights,
            optimizer: Some(state.optimizer),
            vocab: vocab.clone(),
            table: table.clone(),
        };
        Ok(checkpoint::save(&out.join("checkpoint"), &ck)?)
    };
    match result {
        Ok(state) => {
            let last = state.metrics.last().and_then(|r| r.test_loss);
            save(state)?;
            if let Some(l) = last {
                println!("final test loss {l}");
            }
            Ok(())
        }
        Err(f) => {
            save(*f.state)?;
            Err(anyhow!(f.error).context("training aborted; last good state saved to checkpoint/"))
        }
    }
}

fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    checkpoint::load(dir).with_context(|| format!("loading checkpoint {}", dir.display()))
}

fn cmd_eval_loss(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let ck = load_checkpoint(dir)?;
    let sep = separator(cfg, &ck.vocab)?;
    let docs = read_corpus(&cfg.corpus()?, cfg.doc_mode())?;
    let docs = tokenize_docs(&ck.vocab, &docs)?;
    let seq = ck.train.seq_len;
    let rows = pack_rows(&docs, seq, sep, cfg.eval_rows())?;
    let lm = Lm { config: &ck.model, weights: &ck.weights, table: &ck.table };
    let loss = evaluate_loss(&lm, &rows, seq, ck.train.batch_size)?;
    println!("loss {loss}");
    Ok(())
}

fn words(path: Option<&Path>) -> Result<Vec<String>> {
    match path {
        Some(p) => Ok(read_words(p)?),
        None => Ok(SAMPLE_WORDS.lines().map(str::trim).filter(|w| !w.is_empty()).map(String::from).collect()),
    }
}

fn cmd_gen_bench(cfg: &RunConfig, path: Option<&Path>) -> Result<()> {
    let tasks = gen_benchmark(&words(path)?, cfg.seed())?;
    formats::write_benchmark(&cfg.out(), &tasks)?;
    eprintln!("# wrote {} tasks to {}", tasks.len(), cfg.out().display());
    Ok(())
}

fn cmd_bench(cfg: &RunConfig, dir: &Path, bench: &Path, limit: Option<usize>, outcomes: Option<&Path>) -> Result<()> {
    let ck = load_checkpoint(dir)?;
    let mut tasks = formats::read_benchmark(bench)?;
    if let Some(n) = limit {
        tasks.truncate(n);
    }
    let lm = Lm { config: &ck.model, weights: &ck.weights, table: &ck.table };
    let report = spellbench::evaluate(&lm, &ck.vocab, &tasks)?;
    formats::with_output(&cfg.out(), |w| formats::write_report(w, &report.rows))?;
    if let Some(p) = outcomes {
        let mut text = String::new();
        for o in &report.outcomes {
            text.push_str(&serde_json::to_string(o)?);
            text.push('\n');
        }
        fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn cmd_probe(dir: &Path) -> Result<()> {
    let ck = load_checkpoint(dir)?;
    let lm = Lm { config: &ck.model, weights: &ck.weights, table: &ck.table };
    let out = strawberry_probe(&lm, &ck.vocab)?;
    println!("{STRAWBERRY_PROMPT}{out}");
    println!("correct: {}", spellbench::is_correct(&out, STRAWBERRY_ANSWER));
    Ok(())
}

fn cmd_fit_scaling(cfg: &RunConfig, points: &Path, baseline: &str, space: &str, samples: usize) -> Result<()> {
    let space = match space {
        "raw" => FitSpace::Raw,
        "log" => FitSpace::Log,
        _ => {
            return Err(ConfigError::BadValue { key: "--space".into(), value: space.into(), msg: "expected raw or log".into() }
                .into())
        }
    };
    let pts = formats::read_points(points)?;
    let mut by_variant: BTreeMap<&str, Vec<ScalingPoint>> = BTreeMap::new();
    for p in &pts {
        by_variant.entry(&p.variant).or_default().push(p.clone());
    }
    if !by_variant.contains_key(baseline) {
        bail!("no points for baseline variant `{baseline}`");
    }
    let (lo, hi) = pts.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), p| (lo.min(p.flops), hi.max(p.flops)));

    let mut fits = Vec::new();
    let mut curves = Vec::new();
    let mut base_fit = None;
    for (v, ps) in &by_variant {
        match fit_shifted_power_law(ps, space) {
            Ok(fit) => {
                if *v == baseline {
                    base_fit = Some(fit);
                }
                fits.push(FitRow::new(v, &fit, ps.len()));
                curves.extend(sample_curve(&fit, lo, hi, samples).into_iter().map(|(flops, loss)| CurveRow {
                    variant: v.to_string(),
                    flops,
                    loss,
                }));
            }
            Err(e) if *v == baseline => return Err(anyhow!(e).context(format!("fitting baseline `{baseline}`"))),
            Err(e) => eprintln!("# skipping fit for `{v}`: {e}"),
        }
    }
    let base_fit = base_fit.expect("baseline fitted above");
    let advantages: Vec<AdvantageRow> = pts
        .iter()
        .filter(|p| p.variant != baseline)
        .map(|p| AdvantageRow {
            variant: p.variant.clone(),
            flops: p.flops,
            test_loss: p.test_loss,
            advantage: compute_advantage(&base_fit, p.test_loss, p.flops).ok(),
        })
        .collect();

    let dir = cfg.out();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    formats::with_output(&dir.join("fit.csv"), |w| formats::write_fits(w, &fits))?;
    formats::with_output(&dir.join("advantage.csv"), |w| formats::write_advantages(w, &advantages))?;
    formats::with_output(&dir.join("curve.csv"), |w| formats::write_curves(w, &curves))?;
    formats::with_output(Path::new("-"), |w| formats::write_fits(w, &fits))?;
    Ok(())
}

fn cmd_analyze_vocab(cfg: &RunConfig, word: &str) -> Result<()> {
    let vocab = vocab_from_config(cfg)?;
    let matches = vocab_substring_matches(&vocab, word);
    println!("{} tokens occur in `{word}`", matches.len());
    for id in &matches {
        let bytes = vocab.token(*id).unwrap_or_default();
        println!("  {id}\t{}", bytes.escape_ascii());
    }
    let census = variant_token_census(&vocab, word);
    for v in &census.variants {
        match &v.tokens {
            Ok(t) => eprintln!("# {:?} -> {:?}", v.text, t),
            Err(e) => eprintln!("# {:?} -> not encodable: {e}", v.text),
        }
    }
    println!("{} distinct tokens across {} surface variants", census.distinct.len(), census.variants.len());
    let out = cfg.out();
    if out != Path::new("-") {
        formats::with_output(&out, |w| formats::write_census(w, &census))?;
    }
    Ok(())
}

fn cmd_build_table(cfg: &RunConfig) -> Result<()> {
    let vocab = vocab_from_config(cfg)?;
    let table = cfg.table_for_mode(SpellingTable::from_vocab(&vocab));
    let out = cfg.out();
    fs::write(&out, table.to_bytes()).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("# wrote {} rows ({:?}) to {}", table.len(), table.variant(), out.display());
    Ok(())
}

fn cmd_train_tokenizer(cfg: &RunConfig, vocab_size: usize, max_bytes: usize) -> Result<()> {
    if vocab_size < 258 {
        return Err(ConfigError::BadValue {
            key: "--vocab-size".into(),
            value: vocab_size.to_string(),
            msg: "must cover 256 bytes, one merge and the end-of-text token".into(),
        }
        .into());
    }
    let docs = read_corpus(&cfg.corpus()?, cfg.doc_mode())?;
    let mut text = Vec::new();
    for d in docs {
        if text.len() >= max_bytes {
            break;
        }
        text.extend_from_slice(&d);
        text.push(b'\n');
    }
    text.truncate(max_bytes);
    let trained = train_mini_bpe(&text, vocab_size - 1)?;
    let vocab = trained.vocab.with_end_of_text();
    save_vocab(&cfg.out(), &vocab)?;
    eprintln!("# wrote {} tokens to {}", vocab.len(), cfg.out().display());
    Ok(())
}

fn cmd_gen_corpus(cfg: &RunConfig, n: usize) -> Result<()> {
    let mut text = synth_spelling_corpus(cfg.seed(), n).join("\n");
    text.push('\n');
    let out = cfg.out();
    fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}
