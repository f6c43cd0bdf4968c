use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spellbee_core::model::NextTokenModel;
use spellbee_core::spellbench::{evaluate, gen_benchmark, SpellingTask, TaskKind};
use spellbee_core::tokenspell::Vocabulary;

fn words() -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut out: Vec<String> = (0..400)
        .map(|_| {
            let n = rng.random_range(2..13);
            (0..n).map(|_| (b'a' + rng.random_range(0..26u8)) as char).collect()
        })
        .collect();
    out.extend(["level", "racecar", "Banana", "strawberry", "it's", "noon"].map(String::from));
    out
}

const ORDINALS: [&str; 10] = ["first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth"];

/// Parses a solved or unsolved line back into (kind, word, meta, answer).
fn parse(line: &str) -> (TaskKind, String, String, String) {
    if let Some(rest) = line.strip_prefix("The number of times the letter ") {
        let (letter, rest) = rest.split_once(" occurs in ").unwrap();
        let (word, _) = rest.split_once(" is ").unwrap();
        let n = word.chars().filter(|c| c.to_ascii_uppercase().to_string() == letter).count();
        return (TaskKind::Count, word.into(), letter.into(), n.to_string());
    }
    if let Some(rest) = line.strip_prefix("Q: What is the ") {
        let (ord, rest) = rest.split_once(" letter of the word '").unwrap();
        let (word, _) = rest.split_once("'? A: ").unwrap();
        let pos = ORDINALS.iter().position(|o| *o == ord).unwrap() + 1;
        let c = word.chars().nth(pos - 1).unwrap().to_string();
        return (TaskKind::Index, word.into(), pos.to_string(), c);
    }
    let (word, _) = line.split_once(" reversed is ").unwrap();
    (TaskKind::Reverse, word.into(), String::new(), word.chars().rev().collect())
}

#[test]
fn structure_and_oracle_answers() {
    let tasks = gen_benchmark(&words(), 7).unwrap();
    let count = |k| tasks.iter().filter(|t| t.kind == k).count();
    assert_eq!((count(TaskKind::Count), count(TaskKind::Index), count(TaskKind::Reverse)), (2450, 2450, 100));
    for t in &tasks {
        assert!((4..=10).contains(&t.word.len()));
        let lines: Vec<&str> = t.prompt.split('\n').collect();
        assert_eq!(lines.len(), 4);
        let (kind, word, meta, answer) = parse(lines[3]);
        assert_eq!((kind, &word, &meta, &answer), (t.kind, &t.word, &t.meta, &t.answer));
        let mut shots = BTreeSet::new();
        for shot in &lines[..3] {
            let (k, w, _, a) = parse(shot);
            assert_eq!(k, t.kind);
            assert_ne!(w, t.word);
            assert!(shot.ends_with(&a), "{shot}");
            if k == TaskKind::Reverse {
                assert_ne!(w.chars().rev().collect::<String>(), w);
            }
            shots.insert(w);
        }
        assert_eq!(shots.len(), 3);
        if t.kind == TaskKind::Reverse {
            assert_ne!(t.answer, t.word);
        }
    }
    assert_eq!(tasks, gen_benchmark(&words(), 7).unwrap());
    assert_ne!(tasks, gen_benchmark(&words(), 8).unwrap());
}

#[test]
fn query_templates_are_exact() {
    let tasks = gen_benchmark(&words(), 1).unwrap();
    let by_kind = |k| tasks.iter().find(|t| t.kind == k).unwrap();
    let t = by_kind(TaskKind::Count);
    assert!(t.prompt.ends_with(&format!("The number of times the letter {} occurs in {} is ", t.meta, t.word)));
    let t = by_kind(TaskKind::Index);
    let pos: usize = t.meta.parse().unwrap();
    assert!(t.prompt.ends_with(&format!("Q: What is the {} letter of the word '{}'? A: ", ORDINALS[pos - 1], t.word)));
    let t = by_kind(TaskKind::Reverse);
    assert!(t.prompt.ends_with(&format!("{} reversed is ", t.word)));
}

/// Emits the gold answer with flipped case, then a newline.
struct Oracle<'a> {
    tasks: &'a [SpellingTask],
    vocab: &'a Vocabulary,
}

impl NextTokenModel for Oracle<'_> {
    fn max_context(&self) -> usize {
        4096
    }
    fn next_logits(&self, ctx: &[u32]) -> spellbee_core::Result<Vec<f64>> {
        let text = String::from_utf8(self.vocab.decode(ctx)?).unwrap();
        let t = self.tasks.iter().find(|t| text.starts_with(&t.prompt)).unwrap();
        let done = text.len() - t.prompt.len();
        let mut l = vec![0.0; 256];
        let b = t.answer.as_bytes().get(done).map_or(b'\n', |b| if b.is_ascii_lowercase() { b.to_ascii_uppercase() } else { *b });
        l[b as usize] = 1.0;
        Ok(l)
    }
}

/// Uniformly random digit, then newline.
struct Dice(std::cell::RefCell<ChaCha8Rng>);

impl NextTokenModel for Dice {
    fn max_context(&self) -> usize {
        4096
    }
    fn next_logits(&self, ctx: &[u32]) -> spellbee_core::Result<Vec<f64>> {
        let mut l = vec![0.0; 256];
        if (*ctx.last().unwrap() as u8).is_ascii_digit() {
            l[b'\n' as usize] = 1.0;
        } else {
            l[(b'0' + self.0.borrow_mut().random_range(0..10u8)) as usize] = 1.0;
        }
        Ok(l)
    }
}

#[test]
fn evaluator_scores() {
    let v = Vocabulary::byte_fallback();
    let tasks: Vec<SpellingTask> = gen_benchmark(&words(), 3).unwrap().into_iter().step_by(25).collect();
    let report = evaluate(&Oracle { tasks: &tasks, vocab: &v }, &v, &tasks).unwrap();
    for r in &report.rows {
        assert_eq!(r.accuracy, 1.0, "{r:?}");
    }
    let counts: Vec<SpellingTask> = gen_benchmark(&words(), 3).unwrap().into_iter().filter(|t| t.kind == TaskKind::Count).collect();
    let report = evaluate(&Dice(ChaCha8Rng::seed_from_u64(0).into()), &v, &counts).unwrap();
    let acc = report.rows[0].accuracy;
    assert!((acc - 0.1).abs() < 0.03, "{acc}");
}

struct Tiny;

impl NextTokenModel for Tiny {
    fn max_context(&self) -> usize {
        50
    }
    fn next_logits(&self, _: &[u32]) -> spellbee_core::Result<Vec<f64>> {
        Ok(vec![0.0; 256])
    }
}

#[test]
fn long_prompts_are_skipped() {
    let v = Vocabulary::byte_fallback();
    let tasks: Vec<SpellingTask> = gen_benchmark(&words(), 3).unwrap().into_iter().take(10).collect();
    let report = evaluate(&Tiny, &v, &tasks).unwrap();
    let overall = report.rows.last().unwrap();
    assert_eq!((overall.kind.as_str(), overall.n, overall.skipped), ("overall", 0, 10));
}
