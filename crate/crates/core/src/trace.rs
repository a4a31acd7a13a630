//! Per-iteration run records and their CSV form.
//!
//! Column order is fixed:
//! `k, evals, wall_ns, psi, psi_gap, norm_gap, grad_psi_norm, z_err, v_err, diverged`.
//! Floats are written with 17 significant digits so a parse of the emitted
//! text gives back the same bits.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::SolverState;

pub const CSV_COLUMNS: [&str; 10] = [
    "k",
    "evals",
    "wall_ns",
    "psi",
    "psi_gap",
    "norm_gap",
    "grad_psi_norm",
    "z_err",
    "v_err",
    "diverged",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Zoba,
    HfZoba,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Zoba => "zoba",
            Algorithm::HfZoba => "hfzoba",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zoba" => Ok(Algorithm::Zoba),
            "hfzoba" => Ok(Algorithm::HfZoba),
            other => Err(Error::config(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Quality metrics of one iterate, computed outside the evaluation budget.
/// Unknown quantities are NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub psi: f64,
    pub psi_gap: f64,
    pub norm_gap: f64,
    pub grad_psi_norm: f64,
    pub z_err: f64,
    pub v_err: f64,
}

impl Metrics {
    pub const UNKNOWN: Metrics = Metrics {
        psi: f64::NAN,
        psi_gap: f64::NAN,
        norm_gap: f64::NAN,
        grad_psi_norm: f64::NAN,
        z_err: f64::NAN,
        v_err: f64::NAN,
    };
}

/// Row `k` describes iterate `x_k` (the point iteration `k` was evaluated at)
/// together with the cumulative evaluations spent once iteration `k` finished.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub evals: u64,
    pub wall_ns: u64,
    pub metrics: Metrics,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub instance_id: Option<String>,
    pub params: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub meta: RunMeta,
    pub rows: Vec<TraceRow>,
    /// Iterations actually performed.
    pub iterations: usize,
    pub evaluations: u64,
    pub diverged: bool,
    /// Metrics at the last iterate `x_K`; `None` after divergence.
    pub final_metrics: Option<Metrics>,
    pub final_state: SolverState,
}

fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

pub fn write_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Csv(e.to_string());
    w.write_record(CSV_COLUMNS).map_err(err)?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.k.to_string(),
            r.evals.to_string(),
            r.wall_ns.to_string(),
            fmt_float(m.psi),
            fmt_float(m.psi_gap),
            fmt_float(m.norm_gap),
            fmt_float(m.grad_psi_norm),
            fmt_float(m.z_err),
            fmt_float(m.v_err),
            u8::from(r.diverged).to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

pub fn to_csv_string(rows: &[TraceRow]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv output is ascii")
}

pub fn parse_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    if headers.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(Error::Csv(format!("unexpected header {headers:?}")));
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |i: usize| Error::Csv(format!("row {line}: bad `{}` value {:?}", CSV_COLUMNS[i], field(i)));
        let int = |i: usize| field(i).parse::<u64>().map_err(|_| bad(i));
        let float = |i: usize| field(i).parse::<f64>().map_err(|_| bad(i));
        rows.push(TraceRow {
            k: int(0)? as usize,
            evals: int(1)?,
            wall_ns: int(2)?,
            metrics: Metrics {
                psi: float(3)?,
                psi_gap: float(4)?,
                norm_gap: float(5)?,
                grad_psi_norm: float(6)?,
                z_err: float(7)?,
                v_err: float(8)?,
            },
            diverged: match field(9) {
                "0" => false,
                "1" => true,
                _ => return Err(bad(9)),
            },
        });
    }
    Ok(rows)
}
