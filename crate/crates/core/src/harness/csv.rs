//! Plain CSV outputs. Each file starts with a `# graphmeta <kind> v1`
//! comment line, then a header row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::train::RunRow;
use crate::error::{Error, Result};

pub const RUN_COLUMNS: [&str; 10] = [
    "episode",
    "steps",
    "support_loss_first",
    "support_loss_last",
    "ani_first",
    "ani_last",
    "query_loss",
    "query_accuracy",
    "p_final",
    "q_total",
];

pub const EVAL_COLUMNS: [&str; 3] = ["method", "task_index", "accuracy"];

pub const TIMING_COLUMNS: [&str; 3] = ["phase", "count", "seconds"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn run_row_fields(row: &RunRow) -> Vec<String> {
    vec![
        row.episode.to_string(),
        row.steps.to_string(),
        row.support_loss_first.to_string(),
        row.support_loss_last.to_string(),
        row.ani_first.to_string(),
        row.ani_last.to_string(),
        row.query_loss.to_string(),
        row.query_accuracy.to_string(),
        opt(row.p_final),
        opt(row.q_total),
    ]
}

/// Line-buffered CSV file, flushed after every row so a crashed run keeps
/// what it logged.
pub struct CsvWriter {
    path: PathBuf,
    out: BufWriter<File>,
    width: usize,
}

impl CsvWriter {
    pub fn create(path: &Path, kind: &str, columns: &[&str]) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = CsvWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            width: columns.len(),
        };
        w.line(&format!("# graphmeta {kind} v1"))?;
        w.line(&columns.join(","))?;
        Ok(w)
    }

    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) -> Result<()> {
        assert_eq!(fields.len(), self.width, "csv row width");
        let joined: Vec<&str> = fields.iter().map(AsRef::as_ref).collect();
        self.line(&joined.join(","))
    }
}

pub fn run_log(path: &Path) -> Result<CsvWriter> {
    CsvWriter::create(path, "run", &RUN_COLUMNS)
}

pub fn eval_log(path: &Path) -> Result<CsvWriter> {
    CsvWriter::create(path, "eval", &EVAL_COLUMNS)
}

pub fn write_eval_rows(w: &mut CsvWriter, method: &str, accuracies: &[f64]) -> Result<()> {
    for (i, a) in accuracies.iter().enumerate() {
        w.row(&[method.to_string(), i.to_string(), a.to_string()])?;
    }
    Ok(())
}

/// Wall-clock timings go in their own file so the other outputs stay
/// reproducible byte for byte.
pub fn write_timings(path: &Path, rows: &[(&str, usize, f64)]) -> Result<()> {
    let mut w = CsvWriter::create(path, "timings", &TIMING_COLUMNS)?;
    for (phase, count, secs) in rows {
        w.row(&[phase.to_string(), count.to_string(), format!("{secs:.3}")])?;
    }
    Ok(())
}

/// Parsed CSV body: header plus rows, comment lines dropped.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Format {
            file: path.to_path_buf(),
            line: 1,
            msg: "no header".into(),
        })?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}
