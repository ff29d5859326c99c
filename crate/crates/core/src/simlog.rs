//! Uniform-grid trajectory record and its CSV form.
//!
//! Columns, in order: `t`, `x_p_*`, `x_m_*`, `x_d_*`, `u_*`, `u_sat_*`,
//! `du_*`, `theta_err_norm`, `lyapunov`, `phase`. Numbers are written with 17
//! significant digits so a log read back is bit-identical to the one written.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numeric::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Msac,
    Mpc,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Msac => "MSAC",
            Phase::Mpc => "MPC",
        })
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "MSAC" => Ok(Phase::Msac),
            "MPC" => Ok(Phase::Mpc),
            other => Err(Error::MalformedLog(format!("unknown phase tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub x_p: Vector,
    pub x_m: Vector,
    pub x_d: Vector,
    /// Commanded input.
    pub u: Vector,
    /// Input after saturation, i.e. what the plant receives.
    pub u_sat: Vector,
    /// Saturation deficit `u_sat - u`.
    pub du: Vector,
    /// `‖Θ̂_a − Θ_a‖_F`, oracle diagnostic.
    pub theta_err: f64,
    /// Lyapunov value; NaN where it is undefined (MPC rows).
    pub lyapunov: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    n_x: usize,
    n_u: usize,
    rows: Vec<LogRow>,
}

/// Fixed-width scientific formatting with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

impl SimLog {
    pub fn new(n_x: usize, n_u: usize) -> Self {
        Self {
            n_x,
            n_u,
            rows: Vec::new(),
        }
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn rows(&self) -> &[LogRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn first(&self) -> Option<&LogRow> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&LogRow> {
        self.rows.last()
    }

    pub fn push(&mut self, row: LogRow) -> Result<()> {
        check_len("log x_p", self.n_x, row.x_p.len())?;
        check_len("log x_m", self.n_x, row.x_m.len())?;
        check_len("log x_d", self.n_x, row.x_d.len())?;
        check_len("log u", self.n_u, row.u.len())?;
        check_len("log u_sat", self.n_u, row.u_sat.len())?;
        check_len("log du", self.n_u, row.du.len())?;
        if let Some(last) = self.rows.last() {
            if !(row.t > last.t) {
                return Err(Error::MalformedLog(format!(
                    "time must increase strictly: {} after {}",
                    row.t, last.t
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    /// Uniform step of the log, if it has at least two rows.
    pub fn step(&self) -> Option<f64> {
        match self.rows.as_slice() {
            [a, b, ..] => Some(b.t - a.t),
            _ => None,
        }
    }

    pub fn column_count(&self) -> usize {
        1 + 3 * self.n_x + 3 * self.n_u + 3
    }

    pub fn header(&self) -> Vec<String> {
        let mut cols = vec!["t".to_string()];
        for (name, n) in [
            ("x_p", self.n_x),
            ("x_m", self.n_x),
            ("x_d", self.n_x),
            ("u", self.n_u),
            ("u_sat", self.n_u),
            ("du", self.n_u),
        ] {
            cols.extend((1..=n).map(|i| format!("{name}_{i}")));
        }
        cols.extend(["theta_err_norm", "lyapunov", "phase"].map(String::from));
        cols
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(self.header())?;
        let mut record = Vec::with_capacity(self.column_count());
        for row in &self.rows {
            record.clear();
            record.push(fmt_f64(row.t));
            for v in [&row.x_p, &row.x_m, &row.x_d, &row.u, &row.u_sat, &row.du] {
                record.extend(v.iter().map(|&x| fmt_f64(x)));
            }
            record.push(fmt_f64(row.theta_err));
            record.push(fmt_f64(row.lyapunov));
            record.push(row.phase.to_string());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(BufWriter::new(File::create(path)?))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().from_reader(input);
        let header = r.headers()?.clone();
        let count = |prefix: &str| {
            header
                .iter()
                .filter(|h| {
                    h.strip_prefix(prefix)
                        .is_some_and(|rest| rest.chars().all(|c| c.is_ascii_digit()))
                })
                .count()
        };
        let mut log = SimLog::new(count("x_p_"), count("u_"));
        let expected = log.header();
        if header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::MalformedLog(format!(
                "unexpected header {:?}",
                header.iter().collect::<Vec<_>>()
            )));
        }
        let (n_x, n_u) = (log.n_x, log.n_u);
        for (line, record) in r.records().enumerate() {
            let record = record?;
            let num = |i: usize| -> Result<f64> {
                record[i].parse::<f64>().map_err(|e| {
                    Error::MalformedLog(format!("row {}, column {}: {e}", line + 2, i + 1))
                })
            };
            let vec_at = |start: usize, n: usize| -> Result<Vector> {
                Ok(Vector::from_vec((start..start + n).map(num).collect::<Result<_>>()?))
            };
            let mut c = 1;
            let mut take = |n: usize| {
                let s = c;
                c += n;
                vec_at(s, n)
            };
            let x_p = take(n_x)?;
            let x_m = take(n_x)?;
            let x_d = take(n_x)?;
            let u = take(n_u)?;
            let u_sat = take(n_u)?;
            let du = take(n_u)?;
            let base = 1 + 3 * n_x + 3 * n_u;
            log.push(LogRow {
                t: num(0)?,
                x_p,
                x_m,
                x_d,
                u,
                u_sat,
                du,
                theta_err: num(base)?,
                lyapunov: num(base + 1)?,
                phase: record[base + 2].parse()?,
            })?;
        }
        Ok(log)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(File::open(path)?)
    }
}
