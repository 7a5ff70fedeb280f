use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::sim::RunResult;

pub const CSV_HEADER: [&str; 8] = [
    "scheme",
    "u_tot",
    "avg_power",
    "emp_err_trace",
    "avg_P_trace",
    "diverged",
    "iterations",
    "seed",
];

/// One grid point as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub scheme: String,
    pub u_tot: f64,
    pub avg_power: f64,
    pub emp_err_trace: f64,
    #[serde(rename = "avg_P_trace")]
    pub avg_p_trace: f64,
    pub diverged: bool,
    pub iterations: usize,
    pub seed: u64,
}

/// `%.{digits}g`: fixed or scientific notation, whichever is shorter, with
/// trailing zeros removed.
pub fn format_sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn parse_float(s: &str) -> Result<f64> {
    match s {
        "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse().map_err(|_| Error::Parse(format!("bad number {s:?}"))),
    }
}

pub fn result_rows(result: &RunResult) -> Vec<CsvRow> {
    result
        .grid
        .iter()
        .map(|g| CsvRow {
            scheme: result.scheme.name().to_string(),
            u_tot: g.u_tot,
            avg_power: g.avg_power,
            emp_err_trace: g.emp_err_trace,
            avg_p_trace: g.avg_p_trace,
            diverged: g.diverged,
            iterations: g.iterations,
            seed: result.seed,
        })
        .collect()
}

/// Writes the header and one line per grid point.
pub fn write_results<W: Write>(result: &RunResult, out: W) -> std::io::Result<()> {
    write_rows(&result_rows(result), out)
}

pub fn write_rows<W: Write>(rows: &[CsvRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.scheme.clone(),
            format_sig(r.u_tot, 12),
            format_sig(r.avg_power, 12),
            format_sig(r.emp_err_trace, 12),
            format_sig(r.avg_p_trace, 12),
            r.diverged.to_string(),
            r.iterations.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()
}

pub fn emit_results(result: &RunResult, path: &Path) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io)?;
    write_results(result, std::io::BufWriter::new(file)).map_err(io)
}

/// Parses text written by [`write_results`].
pub fn parse_results(text: &str) -> Result<Vec<CsvRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::Parse(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Parse(format!("unexpected header {header:?}")));
    }
    reader
        .records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            let field = |k: usize| rec.get(k).ok_or_else(|| Error::Parse("short row".into()));
            Ok(CsvRow {
                scheme: field(0)?.to_string(),
                u_tot: parse_float(field(1)?)?,
                avg_power: parse_float(field(2)?)?,
                emp_err_trace: parse_float(field(3)?)?,
                avg_p_trace: parse_float(field(4)?)?,
                diverged: field(5)?
                    .parse()
                    .map_err(|_| Error::Parse("bad diverged flag".into()))?,
                iterations: field(6)?
                    .parse()
                    .map_err(|_| Error::Parse("bad iteration count".into()))?,
                seed: field(7)?.parse().map_err(|_| Error::Parse("bad seed".into()))?,
            })
        })
        .collect()
}
