//! CSV and JSON-lines files.
//!
//! | file            | columns                                          |
//! |-----------------|--------------------------------------------------|
//! | metrics         | `step,tokens,flops,lr,train_loss,test_loss`      |
//! | benchmark       | JSON lines `{kind, prompt, answer, word, meta}`  |
//! | bench report    | `kind,n,correct,accuracy,skipped`                |
//! | census          | `variant,token_count,token_ids`                  |
//! | scaling points  | `flops,test_loss,variant`                        |
//! | fit report      | `variant,a,b,c,residual,degenerate,space,points` |
//! | advantage       | `variant,flops,test_loss,advantage`              |
//! | sampled curve   | `variant,flops,loss`                             |
//!
//! A missing test loss is an empty field. Token ids are space separated.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use spellbee_core::scaling::{ScalingFit, ScalingPoint};
use spellbee_core::spellbench::{KindReport, SpellingTask};
use spellbee_core::tokenspell::Census;
use spellbee_core::trainer::MetricsRow;

use crate::FormatError;

fn create(path: &Path) -> Result<BufWriter<File>, FormatError> {
    File::create(path).map(BufWriter::new).map_err(|e| FormatError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, FormatError> {
    File::open(path).map(BufReader::new).map_err(|e| FormatError::io(path, e))
}

fn write_rows<W: Write, R: Serialize>(out: W, rows: impl IntoIterator<Item = R>) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn read_rows<R: io::Read, T: for<'de> Deserialize<'de>>(input: R) -> Result<Vec<T>, FormatError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    rdr.deserialize().map(|r| r.map_err(FormatError::from)).collect()
}

/// Streams metrics rows, flushing after each so a crashed run keeps its log.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl MetricsWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self, FormatError> {
        Ok(Self::new(create(path)?))
    }
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> Self {
        MetricsWriter { inner: csv::Writer::from_writer(out) }
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<(), FormatError> {
        self.inner.serialize(row)?;
        self.inner.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

pub fn write_metrics<W: Write>(out: W, rows: &[MetricsRow]) -> Result<(), FormatError> {
    write_rows(out, rows)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, FormatError> {
    read_rows(open(path)?)
}

pub fn write_benchmark(path: &Path, tasks: &[SpellingTask]) -> Result<(), FormatError> {
    let mut w = create(path)?;
    for t in tasks {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n").map_err(|e| FormatError::io(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

pub fn read_benchmark(path: &Path) -> Result<Vec<SpellingTask>, FormatError> {
    let mut tasks = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| FormatError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t = serde_json::from_str(&line).map_err(|e| FormatError::Line { line: i + 1, msg: e.to_string() })?;
        tasks.push(t);
    }
    Ok(tasks)
}

pub fn write_report<W: Write>(out: W, rows: &[KindReport]) -> Result<(), FormatError> {
    write_rows(out, rows)
}

#[derive(Serialize)]
struct CensusRow<'a> {
    variant: &'a str,
    token_count: Option<usize>,
    token_ids: String,
}

/// One row per variant plus a final `distinct` row with the union.
/// Variants that failed to encode have an empty count.
pub fn write_census<W: Write>(out: W, census: &Census) -> Result<(), FormatError> {
    let join = |ids: &mut dyn Iterator<Item = &u32>| ids.map(u32::to_string).collect::<Vec<_>>().join(" ");
    let mut rows: Vec<CensusRow> = census
        .variants
        .iter()
        .map(|v| match &v.tokens {
            Ok(t) => CensusRow { variant: &v.text, token_count: Some(t.len()), token_ids: join(&mut t.iter()) },
            Err(_) => CensusRow { variant: &v.text, token_count: None, token_ids: String::new() },
        })
        .collect();
    rows.push(CensusRow {
        variant: "distinct",
        token_count: Some(census.distinct.len()),
        token_ids: join(&mut census.distinct.iter()),
    });
    write_rows(out, rows)
}

pub fn read_points(path: &Path) -> Result<Vec<ScalingPoint>, FormatError> {
    let points: Vec<ScalingPoint> = read_rows(open(path)?)?;
    if points.is_empty() {
        return Err(FormatError::Invalid(format!("{}: no points", path.display())));
    }
    Ok(points)
}

pub fn write_points<W: Write>(out: W, points: &[ScalingPoint]) -> Result<(), FormatError> {
    write_rows(out, points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub variant: String,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub residual: f64,
    pub degenerate: bool,
    pub space: String,
    pub points: usize,
}

impl FitRow {
    pub fn new(variant: &str, fit: &ScalingFit, points: usize) -> Self {
        FitRow {
            variant: variant.into(),
            a: fit.a,
            b: fit.b,
            c: fit.c,
            residual: fit.residual,
            degenerate: fit.degenerate,
            space: format!("{:?}", fit.space).to_lowercase(),
            points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageRow {
    pub variant: String,
    pub flops: f64,
    pub test_loss: f64,
    /// Empty when the loss lies below the baseline asymptote.
    pub advantage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub variant: String,
    pub flops: f64,
    pub loss: f64,
}

pub fn write_fits<W: Write>(out: W, rows: &[FitRow]) -> Result<(), FormatError> {
    write_rows(out, rows)
}

pub fn read_fits(path: &Path) -> Result<Vec<FitRow>, FormatError> {
    read_rows(open(path)?)
}

pub fn write_advantages<W: Write>(out: W, rows: &[AdvantageRow]) -> Result<(), FormatError> {
    write_rows(out, rows)
}

pub fn write_curves<W: Write>(out: W, rows: &[CurveRow]) -> Result<(), FormatError> {
    write_rows(out, rows)
}

/// Writes to `path`, or standard output for `-`.
pub fn with_output<T>(
    path: &Path,
    f: impl FnOnce(&mut dyn Write) -> Result<T, FormatError>,
) -> Result<T, FormatError> {
    if path == Path::new("-") {
        let stdout = io::stdout();
        let mut lock = stdout.lock();
        f(&mut lock)
    } else {
        let mut w = create(path)?;
        let out = f(&mut w)?;
        w.flush().map_err(|e| FormatError::io(path, e))?;
        Ok(out)
    }
}
