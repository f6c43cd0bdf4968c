//! Letter counting, letter indexing and word reversal tasks with few-shot
//! prompts, plus the exact-match evaluator.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{generate_greedy, NextTokenModel};
use crate::tokenspell::Vocabulary;

pub const N_COUNT: usize = 2450;
pub const N_INDEX: usize = 2450;
pub const N_REVERSE: usize = 100;
pub const FEW_SHOT: usize = 3;
pub const MIN_ELIGIBLE: usize = 200;
pub const MAX_NEW_TOKENS: usize = 32;
pub const STRAWBERRY_PROMPT: &str = "The number of times the letter R occurs in strawberry is ";
pub const STRAWBERRY_ANSWER: &str = "3";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Count,
    Index,
    Reverse,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Count, TaskKind::Index, TaskKind::Reverse];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Count => "count",
            TaskKind::Index => "index",
            TaskKind::Reverse => "reverse",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpellingTask {
    pub kind: TaskKind,
    pub prompt: String,
    pub answer: String,
    pub word: String,
    /// The letter (count) or 1-based position (index); empty for reverse.
    pub meta: String,
}

pub fn ordinal(n: usize) -> Result<&'static str> {
    const WORDS: [&str; 10] = [
        "first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth",
    ];
    n.checked_sub(1)
        .and_then(|i| WORDS.get(i).copied())
        .ok_or_else(|| Error::Invalid(format!("no ordinal for {} (supported 1..=10)", n)))
}

/// Lowercased, de-duplicated, sorted ASCII-alphabetic words of 4–10 letters.
pub fn eligible_words<S: AsRef<str>>(words: &[S]) -> Vec<String> {
    let set: BTreeSet<String> = words
        .iter()
        .map(|w| w.as_ref().trim())
        .filter(|w| (4..=10).contains(&w.len()) && w.bytes().all(|b| b.is_ascii_alphabetic()))
        .map(|w| w.to_ascii_lowercase())
        .collect();
    set.into_iter().collect()
}

fn is_palindrome(w: &str) -> bool {
    w.bytes().eq(w.bytes().rev())
}

fn reversed(w: &str) -> String {
    w.chars().rev().collect()
}

/// The prompt text before the answer, and the answer, of one item.
fn item(kind: TaskKind, word: &str, meta: &str) -> Result<(String, String)> {
    Ok(match kind {
        TaskKind::Count => {
            let letter = meta.chars().next().ok_or_else(|| Error::Invalid(String::from("missing letter")))?;
            let n = word.chars().filter(|c| c.eq_ignore_ascii_case(&letter)).count();
            (
                format!("The number of times the letter {} occurs in {} is ", letter, word),
                format!("{}", n),
            )
        }
        TaskKind::Index => {
            let pos: usize = meta.parse().map_err(|_| Error::Invalid(format!("bad position `{}`", meta)))?;
            let c = word
                .chars()
                .nth(pos.wrapping_sub(1))
                .ok_or_else(|| Error::Invalid(format!("position {} outside `{}`", pos, word)))?;
            (
                format!("Q: What is the {} letter of the word '{}'? A: ", ordinal(pos)?, word),
                c.into(),
            )
        }
        TaskKind::Reverse => (format!("{} reversed is ", word), reversed(word)),
    })
}

fn draw_meta(kind: TaskKind, word: &str, rng: &mut ChaCha8Rng) -> String {
    match kind {
        TaskKind::Count => {
            let mut distinct: Vec<u8> = word.bytes().collect();
            distinct.sort_unstable();
            distinct.dedup();
            (distinct[rng.random_range(0..distinct.len())].to_ascii_uppercase() as char).into()
        }
        TaskKind::Index => format!("{}", rng.random_range(1..=word.len())),
        TaskKind::Reverse => String::new(),
    }
}

/// Builds one task: three solved examples of the same kind on other words,
/// one per line, followed by the unsolved query.
fn make_task(kind: TaskKind, word: &str, pool: &[&str], rng: &mut ChaCha8Rng) -> Result<SpellingTask> {
    let others: Vec<&str> = pool.iter().copied().filter(|w| *w != word).collect();
    let mut lines = Vec::with_capacity(FEW_SHOT + 1);
    for i in sample(rng, others.len(), FEW_SHOT).into_vec() {
        let w = others[i];
        let meta = draw_meta(kind, w, rng);
        let (q, a) = item(kind, w, &meta)?;
        lines.push(q + &a);
    }
    let meta = draw_meta(kind, word, rng);
    let (q, answer) = item(kind, word, &meta)?;
    lines.push(q);
    Ok(SpellingTask {
        kind,
        prompt: lines.join("\n"),
        answer,
        word: String::from(word),
        meta,
    })
}

/// 2450 count, 2450 index and 100 reverse tasks over the eligible words.
/// Reverse tasks never use palindromes.
pub fn gen_benchmark<S: AsRef<str>>(words: &[S], seed: u64) -> Result<Vec<SpellingTask>> {
    let words = eligible_words(words);
    if words.len() < MIN_ELIGIBLE {
        return Err(Error::Invalid(format!(
            "only {} eligible words; {} more needed (minimum {})",
            words.len(),
            MIN_ELIGIBLE - words.len(),
            MIN_ELIGIBLE
        )));
    }
    let all: Vec<&str> = words.iter().map(String::as_str).collect();
    let non_pal: Vec<&str> = all.iter().copied().filter(|w| !is_palindrome(w)).collect();
    if non_pal.len() <= FEW_SHOT {
        return Err(Error::Invalid(String::from("too few non-palindromic words")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tasks = Vec::with_capacity(N_COUNT + N_INDEX + N_REVERSE);
    for (kind, n, pool) in [
        (TaskKind::Count, N_COUNT, &all),
        (TaskKind::Index, N_INDEX, &all),
        (TaskKind::Reverse, N_REVERSE, &non_pal),
    ] {
        for _ in 0..n {
            let word = pool[rng.random_range(0..pool.len())];
            tasks.push(make_task(kind, word, pool, &mut rng)?);
        }
    }
    Ok(tasks)
}

/// Exact match after trimming whitespace, ignoring ASCII case.
pub fn is_correct(output: &str, answer: &str) -> bool {
    output.trim().eq_ignore_ascii_case(answer.trim())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindReport {
    /// A task kind, or `"overall"`.
    pub kind: String,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Tasks whose prompt did not fit the model context.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub task: usize,
    pub output: Option<String>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<KindReport>,
    pub outcomes: Vec<Outcome>,
}

/// Greedy-decodes every task (newline stop, 32-token cap) and scores it.
pub fn evaluate<M: NextTokenModel + ?Sized>(model: &M, vocab: &Vocabulary, tasks: &[SpellingTask]) -> Result<BenchReport> {
    let mut outcomes = Vec::with_capacity(tasks.len());
    for (i, t) in tasks.iter().enumerate() {
        let prompt = vocab.encode(t.prompt.as_bytes())?;
        if prompt.is_empty() || prompt.len() >= model.max_context() {
            outcomes.push(Outcome { task: i, output: None, correct: false });
            continue;
        }
        let out = generate_greedy(model, vocab, &prompt, MAX_NEW_TOKENS, b"\n")?;
        let correct = is_correct(&out, &t.answer);
        outcomes.push(Outcome { task: i, output: Some(out), correct });
    }
    let row = |name: &str, keep: &dyn Fn(TaskKind) -> bool| {
        let (mut n, mut correct, mut skipped) = (0, 0, 0);
        for o in &outcomes {
            if keep(tasks[o.task].kind) {
                match o.output {
                    None => skipped += 1,
                    Some(_) => {
                        n += 1;
                        correct += o.correct as usize;
                    }
                }
            }
        }
        KindReport {
            kind: String::from(name),
            n,
            correct,
            accuracy: if n > 0 { correct as f64 / n as f64 } else { 0.0 },
            skipped,
        }
    };
    let mut rows: Vec<KindReport> = TaskKind::ALL.iter().map(|&k| row(k.name(), &|x| x == k)).collect();
    rows.push(row("overall", &|_| true));
    Ok(BenchReport { rows, outcomes })
}

/// Greedy completion of the strawberry prompt.
pub fn strawberry_probe<M: NextTokenModel + ?Sized>(model: &M, vocab: &Vocabulary) -> Result<String> {
    let prompt = vocab.encode(STRAWBERRY_PROMPT.as_bytes())?;
    generate_greedy(model, vocab, &prompt, MAX_NEW_TOKENS, b"\n")
}
