//! Result table: one row per (sweep value, algorithm).

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::config::SweepVariable;
use crate::pipeline::Algorithm;

pub const HEADER: &str =
    "sweep_var,sweep_value,algorithm,trials,aer_mean,aer_se,nnmse_mean,nnmse_se,nser_mean,nser_se,nmse_g_mean,nmse_g_se,undefined_trials,wall_s";

const N_FIELDS: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub sweep_var: SweepVariable,
    pub sweep_value: f64,
    pub algorithm: Algorithm,
    pub trials: u64,
    pub aer_mean: f64,
    pub aer_se: f64,
    pub nnmse_mean: f64,
    pub nnmse_se: f64,
    pub nser_mean: f64,
    pub nser_se: f64,
    pub nmse_g_mean: f64,
    pub nmse_g_se: f64,
    pub undefined_trials: u64,
    pub wall_s: f64,
}

impl SweepRow {
    fn floats(&self) -> [f64; 9] {
        [
            self.aer_mean,
            self.aer_se,
            self.nnmse_mean,
            self.nnmse_se,
            self.nser_mean,
            self.nser_se,
            self.nmse_g_mean,
            self.nmse_g_se,
            self.wall_s,
        ]
    }

    /// Field-wise equality where NaN equals NaN.
    pub fn same_as(&self, other: &SweepRow) -> bool {
        self.sweep_var == other.sweep_var
            && self.algorithm == other.algorithm
            && self.trials == other.trials
            && self.undefined_trials == other.undefined_trials
            && self.sweep_value.to_bits() == other.sweep_value.to_bits()
            && self.floats().iter().zip(other.floats()).all(|(a, b)| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()))
    }
}

/// `Debug` formatting of `f64` is the shortest string that parses back to the same value.
fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn record(r: &SweepRow) -> [String; N_FIELDS] {
    [
        r.sweep_var.name().to_string(),
        fmt_f64(r.sweep_value),
        r.algorithm.name().to_string(),
        r.trials.to_string(),
        fmt_f64(r.aer_mean),
        fmt_f64(r.aer_se),
        fmt_f64(r.nnmse_mean),
        fmt_f64(r.nnmse_se),
        fmt_f64(r.nser_mean),
        fmt_f64(r.nser_se),
        fmt_f64(r.nmse_g_mean),
        fmt_f64(r.nmse_g_se),
        r.undefined_trials.to_string(),
        fmt_f64(r.wall_s),
    ]
}

fn write_rows<W: Write>(rows: &[SweepRow], sink: W) -> csv::Result<W> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
    w.write_record(HEADER.split(','))?;
    for r in rows {
        w.write_record(record(r))?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

/// Renders rows in the order given.
pub fn format_csv(rows: &[SweepRow]) -> String {
    let bytes = write_rows(rows, Vec::new()).expect("writing to memory cannot fail");
    String::from_utf8(bytes).expect("fields are ASCII")
}

pub fn write_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let io = |source| Error::Io { path: path.to_path_buf(), source };
    let file = std::fs::File::create(path).map_err(io)?;
    let mut file = write_rows(rows, file).map_err(|e| io(e.into()))?;
    file.flush().map_err(io)
}

/// Parses text produced by [`format_csv`]. Line numbers in errors are 1-based.
pub fn parse_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let mut records = reader.records();
    let header_ok = match records.next() {
        Some(Ok(h)) => h.iter().eq(HEADER.split(',')),
        _ => false,
    };
    if !header_ok {
        return Err(Error::Parse { line: 1, message: "missing or wrong header".into() });
    }
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let err = |message: String| Error::Parse { line, message };
        if rec.len() != N_FIELDS {
            return Err(err(format!("expected {N_FIELDS} fields, found {}", rec.len())));
        }
        let f = |i: usize| &rec[i];
        let float = |i: usize| f(i).parse::<f64>().map_err(|e| err(format!("field {}: {e}", i + 1)));
        let int = |i: usize| f(i).parse::<u64>().map_err(|e| err(format!("field {}: {e}", i + 1)));
        rows.push(SweepRow {
            sweep_var: f(0).parse().map_err(err)?,
            sweep_value: float(1)?,
            algorithm: f(2).parse().map_err(err)?,
            trials: int(3)?,
            aer_mean: float(4)?,
            aer_se: float(5)?,
            nnmse_mean: float(6)?,
            nnmse_se: float(7)?,
            nser_mean: float(8)?,
            nser_se: float(9)?,
            nmse_g_mean: float(10)?,
            nmse_g_se: float(11)?,
            undefined_trials: int(12)?,
            wall_s: float(13)?,
        });
    }
    Ok(rows)
}
