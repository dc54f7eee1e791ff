//! Per-iteration traces produced by every optimizer run.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardChoice {
    Fallback,
    Learned,
}

impl fmt::Display for GuardChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GuardChoice::Fallback => "fallback",
            GuardChoice::Learned => "learned",
        })
    }
}

/// One row of a run trace. Row `k` describes the iterate after `k` steps;
/// `alpha`, `direction_norm` and `sample_size` belong to the step that
/// produced it, and are zero / empty on row 0.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub losses: Vec<f64>,
    pub direction_norm: f64,
    pub alpha: f64,
    pub sample_size: Option<usize>,
    pub guard: Option<GuardChoice>,
    pub criticality: Option<f64>,
    pub iterate: Option<Vec<f64>>,
}

impl TraceRow {
    pub fn initial(losses: Vec<f64>, iterate: Option<Vec<f64>>) -> Self {
        TraceRow {
            k: 0,
            losses,
            direction_norm: 0.0,
            alpha: 0.0,
            sample_size: None,
            guard: None,
            criticality: None,
            iterate,
        }
    }

    pub fn max_loss(&self) -> f64 {
        self.losses.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<TraceRow>,
    pub final_x: Vec<f64>,
}

pub const CSV_SCHEMA_VERSION: u32 = 1;

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

impl RunRecord {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn final_losses(&self) -> Option<&[f64]> {
        self.rows.last().map(|r| r.losses.as_slice())
    }

    /// Rows strictly increasing in `k`, with one loss per objective.
    pub fn validate(&self, objectives: usize) -> Result<()> {
        for (i, r) in self.rows.iter().enumerate() {
            if r.losses.len() != objectives {
                return Err(Error::shape("run record", format!("row {i} has {} losses", r.losses.len())));
            }
            if i > 0 && r.k <= self.rows[i - 1].k {
                return Err(Error::invalid(format!("row {i} does not increase k")));
            }
        }
        Ok(())
    }

    /// Writes the trace as CSV. Floats carry 17 significant digits.
    pub fn write_csv(&self, out: &mut dyn Write, objectives: usize) -> Result<()> {
        let mut header = vec!["k".to_owned()];
        header.extend((0..objectives).map(|i| format!("loss_{i}")));
        header.extend(["direction_norm", "alpha", "sample_size", "guard_choice", "criticality"].map(String::from));
        let dim = self.rows.iter().find_map(|r| r.iterate.as_ref().map(Vec::len));
        if let Some(n) = dim {
            header.extend((0..n).map(|j| format!("x_{j}")));
        }
        writeln!(out, "{}", header.join(","))?;
        for r in &self.rows {
            let mut cells = vec![r.k.to_string()];
            cells.extend(r.losses.iter().map(|v| num(*v)));
            cells.push(num(r.direction_norm));
            cells.push(num(r.alpha));
            cells.push(r.sample_size.map(|s| s.to_string()).unwrap_or_default());
            cells.push(r.guard.map(|g| g.to_string()).unwrap_or_default());
            cells.push(r.criticality.map(num).unwrap_or_default());
            if dim.is_some() {
                match &r.iterate {
                    Some(x) => cells.extend(x.iter().map(|v| num(*v))),
                    None => cells.extend(std::iter::repeat_n(String::new(), dim.unwrap_or(0))),
                }
            }
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut rec = RunRecord::default();
        rec.rows.push(TraceRow::initial(vec![1.0, 0.5], Some(vec![0.1])));
        rec.rows.push(TraceRow {
            k: 1,
            losses: vec![0.5, 0.25],
            direction_norm: 2.0,
            alpha: 0.1,
            sample_size: Some(32),
            guard: Some(GuardChoice::Learned),
            criticality: None,
            iterate: Some(vec![0.2]),
        });
        rec.validate(2).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf, 2).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,loss_0,loss_1,direction_norm,alpha,sample_size,guard_choice,criticality,x_0");
        assert!(lines[2].starts_with("1,5.0000000000000000e-1,"));
        assert!(lines[2].contains(",32,learned,,"));
    }

    #[test]
    fn rejects_non_increasing_rows() {
        let mut rec = RunRecord::default();
        rec.rows.push(TraceRow::initial(vec![1.0], None));
        rec.rows.push(TraceRow::initial(vec![1.0], None));
        assert!(rec.validate(1).is_err());
    }
}
