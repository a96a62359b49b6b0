//! Comma-separated learning-curve metrics.
//!
//! Header (fixed):
//!
//! ```text
//! variant,scenario,task_id,episode,step,episodic_return,hypernet_mse_dynamics,hypernet_mse_reward,hypernet_regularization,wall_clock_s
//! ```
//!
//! `episode` is 1-based, `step` counts steps completed in that episode and
//! `episodic_return` is the return accumulated so far (Kelvin-hours, never
//! positive). Hypernet columns are window means since the previous row and
//! are empty when the hypernet did not train in that window.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dyna::Variant;
use crate::envsim::Scenario;
use crate::error::{Error, Result};

pub const HEADER: &str = "variant,scenario,task_id,episode,step,episodic_return,hypernet_mse_dynamics,hypernet_mse_reward,hypernet_regularization,wall_clock_s";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub variant: Variant,
    pub scenario: Scenario,
    pub task_id: u8,
    pub episode: usize,
    pub step: usize,
    pub episodic_return: f64,
    pub hypernet_mse_dynamics: Option<f64>,
    pub hypernet_mse_reward: Option<f64>,
    pub hypernet_regularization: Option<f64>,
    pub wall_clock_s: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_line(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            self.variant,
            self.scenario,
            self.task_id,
            self.episode,
            self.step,
            self.episodic_return,
            opt(self.hypernet_mse_dynamics),
            opt(self.hypernet_mse_reward),
            opt(self.hypernet_regularization),
            self.wall_clock_s
        )
        .unwrap();
        s
    }

    /// (task, episode, step) ordering key.
    pub fn position(&self) -> (u8, usize, usize) {
        (self.task_id, self.episode, self.step)
    }
}

pub fn render(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

/// Append-only metrics file. The header is written on creation.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{HEADER}").map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out,
        })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.out, "{}", row.to_line()).map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn parse(text: &str) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Metrics {
            line: 1,
            detail: e.to_string(),
        })?
        .clone();
    if header.iter().collect::<Vec<_>>().join(",") != HEADER {
        return Err(Error::Metrics {
            line: 1,
            detail: "unexpected header".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let bad = |detail: String| Error::Metrics { line, detail };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 10 {
            return Err(bad(format!("expected 10 fields, found {}", rec.len())));
        }
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .parse::<f64>()
                .map_err(|e| bad(format!("field {k}: {e}")))
        };
        let opt_num = |k: usize| -> Result<Option<f64>> {
            if rec[k].is_empty() {
                Ok(None)
            } else {
                num(k).map(Some)
            }
        };
        let int = |k: usize| -> Result<usize> {
            rec[k]
                .parse::<usize>()
                .map_err(|e| bad(format!("field {k}: {e}")))
        };
        rows.push(MetricsRow {
            variant: rec[0].parse().map_err(|e: Error| bad(e.to_string()))?,
            scenario: rec[1].parse().map_err(|e: Error| bad(e.to_string()))?,
            task_id: rec[2]
                .parse()
                .map_err(|e: std::num::ParseIntError| bad(format!("field 2: {e}")))?,
            episode: int(3)?,
            step: int(4)?,
            episodic_return: num(5)?,
            hypernet_mse_dynamics: opt_num(6)?,
            hypernet_mse_reward: opt_num(7)?,
            hypernet_regularization: opt_num(8)?,
            wall_clock_s: num(9)?,
        });
    }
    Ok(rows)
}

pub fn load(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(ep: usize, step: usize, ret: f64, mse: Option<f64>) -> MetricsRow {
        MetricsRow {
            variant: Variant::Mbrl,
            scenario: Scenario::AprilLike,
            task_id: 2,
            episode: ep,
            step,
            episodic_return: ret,
            hypernet_mse_dynamics: mse,
            hypernet_mse_reward: mse.map(|m| m / 3.0),
            hypernet_regularization: None,
            wall_clock_s: 0.0,
        }
    }

    #[test]
    fn render_then_parse() {
        let rows = vec![
            row(1, 96, -12.125, Some(0.1)),
            row(1, 192, -30.0 / 7.0, None),
        ];
        let text = render(&rows);
        assert!(text.starts_with(HEADER));
        assert_eq!(parse(&text).unwrap(), rows);
    }

    #[test]
    fn reports_first_bad_line() {
        let mut text = render(&[row(1, 96, -1.0, None), row(1, 192, -2.0, None)]);
        text.push_str("mbrl,april_like,2,1,288,oops,,,,0\n");
        text.push_str("garbage\n");
        match parse(&text) {
            Err(Error::Metrics { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse("a,b\n1,2\n"),
            Err(Error::Metrics { line: 1, .. })
        ));
    }
}
