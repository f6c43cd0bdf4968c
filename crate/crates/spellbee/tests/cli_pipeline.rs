use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use spellbee::checkpoint;
use spellbee::formats::{read_fits, read_metrics};

fn spellbee(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spellbee")).args(args).current_dir(dir).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = spellbee(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const TINY: &str = "\
# small enough for a test
d_model = 32
n_layers = 1
n_heads = 4
batch_size = 4
seq_len = 96
token_budget = 7680
warmup_steps = 4
lr_max = 0.003
eval_every = 5
";

fn setup(dir: &Path) {
    ok(dir, &["gen-corpus", "--docs", "1500", "--out", "corpus.txt"]);
    ok(dir, &["train-tokenizer", "--corpus", "corpus.txt", "--vocab-size", "384", "--out", "tok.bpe"]);
    fs::write(dir.join("tiny.cfg"), TINY).unwrap();
}

#[test]
fn train_then_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d);
    let base = ["--config", "tiny.cfg", "--corpus", "corpus.txt", "--tokenizer", "tok.bpe"];
    let train: Vec<&str> = ["train"].into_iter().chain(base).chain(["--mode", "bee", "--seed", "2"]).collect();
    ok(d, &train);

    let rows = read_metrics(&d.join("run/metrics.csv")).unwrap();
    assert_eq!(rows.len(), 20);
    for r in &rows {
        assert_eq!(r.tokens, r.step * 4 * 96);
        assert_eq!(r.test_loss.is_some(), r.step % 5 == 0);
    }
    let echoed = fs::read_to_string(d.join("run/config.txt")).unwrap();
    assert!(echoed.contains("seed = 2") && echoed.contains("mode = bee") && echoed.contains("# flag"));

    let ck = checkpoint::load(&d.join("run/checkpoint")).unwrap();
    assert_eq!((ck.step, ck.seed, ck.weights.embed.mode.name()), (20, 2, "bee"));
    assert_eq!(ck.vocab.len(), 384);

    let loss = ok(d, &["eval-loss", "--checkpoint", "run/checkpoint", "--corpus", "corpus.txt"]);
    let loss: f64 = loss.trim().strip_prefix("loss ").unwrap().parse().unwrap();
    assert!(loss.is_finite() && loss > 0.0);

    ok(d, &["gen-bench", "--seed", "1", "--out", "bench.jsonl"]);
    assert_eq!(fs::read_to_string(d.join("bench.jsonl")).unwrap().lines().count(), 5000);
    let report = ok(d, &["bench", "--checkpoint", "run/checkpoint", "--bench", "bench.jsonl", "--limit", "6"]);
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "kind,n,correct,accuracy,skipped");
    assert!(lines[4].starts_with("overall,"));
    let cols: Vec<&str> = lines[4].split(',').collect();
    let (n, skipped): (usize, usize) = (cols[1].parse().unwrap(), cols[4].parse().unwrap());
    assert_eq!(n + skipped, 6);

    let probe = ok(d, &["probe-strawberry", "--checkpoint", "run/checkpoint"]);
    assert!(probe.starts_with("The number of times the letter R occurs in strawberry is "));
    assert!(probe.contains("correct: "));
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d);
    fs::write(d.join("short.cfg"), format!("{TINY}token_budget = 1536\nmode = first-char\n")).unwrap();
    ok(d, &["train", "--config", "short.cfg", "--set", "token_budget=768", "--corpus", "corpus.txt", "--tokenizer", "tok.bpe"]);
    let ck = checkpoint::read_manifest(&d.join("run/checkpoint")).unwrap();
    assert_eq!(ck.step, 2);
    assert_eq!(ck.mode.name(), "first-char");
    assert_eq!(ck.table_variant, spellbee_core::tokenspell::TableVariant::FirstChar);
}

#[test]
fn non_finite_loss_keeps_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d);
    let out = spellbee(
        d,
        &["train", "--config", "tiny.cfg", "--set", "lr_max=1e30", "--set", "warmup_steps=0", "--corpus", "corpus.txt", "--tokenizer", "tok.bpe"],
    );
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
    let ck = checkpoint::read_manifest(&d.join("run/checkpoint")).unwrap();
    assert!(ck.step < 20);
}

#[test]
fn scaling_fit_from_points() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let mut csv = String::from("flops,test_loss,variant\n");
    for i in 0..8 {
        let c = 1e15 * 10f64.powf(0.5 * i as f64);
        csv += &format!("{c},{},baseline\n", 2e3 * c.powf(-0.25) + 2.0);
        csv += &format!("{c},{},bee\n", 2e3 * c.powf(-0.25) + 1.97);
    }
    fs::write(d.join("runs.csv"), csv).unwrap();
    let stdout = ok(d, &["fit-scaling", "--points", "runs.csv"]);
    assert!(stdout.starts_with("variant,a,b,c,"));
    let fits = read_fits(&d.join("scaling/fit.csv")).unwrap();
    let base = fits.iter().find(|f| f.variant == "baseline").unwrap();
    assert!((base.b - 0.25).abs() < 1e-3 && (base.c - 2.0).abs() < 1e-3, "{base:?}");
    let adv = fs::read_to_string(d.join("scaling/advantage.csv")).unwrap();
    assert_eq!(adv.lines().count(), 9);
    assert_eq!(fs::read_to_string(d.join("scaling/curve.csv")).unwrap().lines().count(), 201);

    let out = spellbee(d, &["fit-scaling", "--points", "runs.csv", "--baseline", "nope"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn vocab_tools() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    // ranks: the bytes, then a few merged tokens
    let mut ranks = String::new();
    let b64 = |s: &[u8]| {
        use base64::Engine;
        base64::engine::general_purpose::STANDARD.encode(s)
    };
    for b in 0..=255u8 {
        ranks += &format!("{} {}\n", b64(&[b]), b);
    }
    for (i, t) in ["pp", "le", "ap", "apple", " Apple", "pineapple"].iter().enumerate() {
        ranks += &format!("{} {}\n", b64(t.as_bytes()), 256 + i);
    }
    fs::write(d.join("v.ranks"), ranks).unwrap();
    let out = ok(d, &["analyze-vocab", "--vocab", "v.ranks", "--word", "apple", "--out", "census.csv"]);
    assert!(out.starts_with("3 tokens occur in `apple`"), "{out}");
    let census = fs::read_to_string(d.join("census.csv")).unwrap();
    assert!(census.starts_with("variant,token_count,token_ids\napple,1,259\n"), "{census}");

    ok(d, &["build-table", "--vocab", "v.ranks", "--mode", "first-char", "--out", "t.bin"]);
    let t = fs::read(d.join("t.bin")).unwrap();
    assert_eq!(t.len(), 263 * 16);
    assert_eq!(&t[259 * 16..260 * 16], b"a\0\0\0\0\0\0\0\0\0\0\0\0\0\0\0");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(spellbee(d, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(spellbee(d, &["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(spellbee(d, &["train", "--set", "no_such_key=1"]).status.code(), Some(2));
    assert_eq!(spellbee(d, &["train", "--mode", "honey"]).status.code(), Some(2));
    assert_eq!(spellbee(d, &["train"]).status.code(), Some(2), "missing corpus is a usage error");
    assert_eq!(spellbee(d, &["train", "--corpus", "missing.txt"]).status.code(), Some(1));
    assert_eq!(spellbee(d, &["--help"]).status.code(), Some(0));
    let help = spellbee(d, &["train", "--help"]);
    let help = String::from_utf8(help.stdout).unwrap();
    assert!(help.contains("lr_max") && help.contains("[default: 0.0007]"));
}
