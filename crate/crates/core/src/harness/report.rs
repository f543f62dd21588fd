//! Metrics records, CSV output and plot-data files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "snr_db,ber,mse,bits,errors,seconds,seed,config";

/// Result of one SNR point.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub snr_db: f64,
    pub ber: f64,
    /// Channel-estimate MSE per subcarrier; NaN when no estimate is formed.
    pub mse: f64,
    pub bits: u64,
    pub errors: u64,
    pub seconds: f64,
    pub seed: u64,
    /// Configuration digest.
    pub config: String,
    /// Whether the bit-error floor was reached (otherwise the bit cap ended
    /// the point).
    pub error_floor_hit: bool,
    /// Diagnostic of a point abandoned on a non-finite detector state.
    pub failure: Option<String>,
}

/// CSV text; floats use the shortest exact decimal form.
pub fn to_csv(records: &[MetricsRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.snr_db, r.ber, r.mse, r.bits, r.errors, r.seconds, r.seed, r.config
        ));
    }
    s
}

fn field<T: std::str::FromStr>(tok: &str, line: usize, name: &str) -> Result<T> {
    tok.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad {name} `{tok}`"),
    })
}

/// Parses CSV written by [`to_csv`]. The floor and failure flags are not
/// part of the format and come back as `errors > 0` and `None`.
pub fn parse_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header `{CSV_HEADER}`"),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let line = i + 1;
            let t: Vec<&str> = l.split(',').collect();
            if t.len() != 8 {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected 8 fields, found {}", t.len()),
                });
            }
            let errors: u64 = field(t[4], line, "errors")?;
            Ok(MetricsRecord {
                snr_db: field(t[0], line, "snr_db")?,
                ber: field(t[1], line, "ber")?,
                mse: field(t[2], line, "mse")?,
                bits: field(t[3], line, "bits")?,
                errors,
                seconds: field(t[5], line, "seconds")?,
                seed: field(t[6], line, "seed")?,
                config: t[7].trim().to_string(),
                error_floor_hit: errors > 0,
                failure: None,
            })
        })
        .collect()
}

/// Writes `<out>.csv` plus `<out>_ber.dat` / `<out>_mse.dat` with two
/// whitespace-separated columns, skipping NaN values. Returns the written
/// paths.
pub fn emit_report(records: &[MetricsRecord], out: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to report".into()));
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let csv = out.with_extension("csv");
    fs::write(&csv, to_csv(records))?;
    let mut written = vec![csv];
    let stem = out.with_extension("");
    for (name, pick) in [
        (
            "ber",
            (|r: &MetricsRecord| r.ber) as fn(&MetricsRecord) -> f64,
        ),
        ("mse", |r| r.mse),
    ] {
        let rows: Vec<String> = records
            .iter()
            .filter(|r| !pick(r).is_nan())
            .map(|r| format!("{} {}\n", r.snr_db, pick(r)))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let path = PathBuf::from(format!("{}_{name}.dat", stem.display()));
        fs::write(&path, format!("# snr_db {name}\n{}", rows.concat()))?;
        written.push(path);
    }
    Ok(written)
}
