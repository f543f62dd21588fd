//! JSON-lines dataset files for the two trainers.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::config::{expand_path, DatasetKind};
use super::sim::{
    detection_problem, pilot_observation, sample_rng, DetectionProblem, Receiver, Setup,
};
use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::estimation::{ls_estimate, ChannelPair};
use crate::numerics::stack_real;
use crate::C64;

/// One CE-NET sample: real-form LS estimate, true response and true taps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelPairRecord {
    pub snr_db: f64,
    pub ls: Vec<f64>,
    pub truth: Vec<f64>,
    pub taps: Vec<[f64; 2]>,
}

/// One OAMP-NET sample, stored as the receiver sees it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub snr_db: f64,
    pub sigma2: f64,
    pub y: Vec<[f64; 2]>,
    pub taps: Vec<[f64; 2]>,
    pub q_prev: Vec<[f64; 2]>,
    pub u: Vec<[f64; 2]>,
}

fn pack<'a>(v: impl IntoIterator<Item = &'a C64>) -> Vec<[f64; 2]> {
    v.into_iter().map(|z| [z.re, z.im]).collect()
}

fn unpack(v: &[[f64; 2]]) -> DVector<C64> {
    DVector::from_iterator(v.len(), v.iter().map(|p| C64::new(p[0], p[1])))
}

impl ChannelPairRecord {
    pub fn pair(&self) -> ChannelPair {
        ChannelPair {
            ls: DVector::from_column_slice(&self.ls),
            truth: DVector::from_column_slice(&self.truth),
        }
    }
}

impl From<&DetectionProblem> for DetectionRecord {
    fn from(p: &DetectionProblem) -> Self {
        Self {
            snr_db: p.snr_db,
            sigma2: p.sigma2,
            y: pack(p.y.iter()),
            taps: pack(p.taps.taps()),
            q_prev: pack(p.q_prev.iter()),
            u: pack(p.u.iter()),
        }
    }
}

impl DetectionRecord {
    pub fn problem(&self) -> Result<DetectionProblem> {
        Ok(DetectionProblem {
            snr_db: self.snr_db,
            sigma2: self.sigma2,
            y: unpack(&self.y),
            taps: ChannelRealization::new(unpack(&self.taps).iter().copied().collect())?,
            q_prev: unpack(&self.q_prev),
            u: unpack(&self.u),
        })
    }
}

fn channel_record(setup: &Setup, snr_db: f64, index: u64, seed: u64) -> Result<ChannelPairRecord> {
    let mut rng = sample_rng(seed, index);
    let (y, h) = pilot_observation(setup, snr_db, &mut rng)?;
    Ok(ChannelPairRecord {
        snr_db,
        ls: ls_estimate(&y, &setup.pattern)?
            .real_form()
            .as_slice()
            .to_vec(),
        truth: stack_real(&h.frequency_response(setup.n())?)
            .as_slice()
            .to_vec(),
        taps: pack(h.taps()),
    })
}

fn write_lines<T: Serialize>(path: &Path, items: impl Iterator<Item = Result<T>>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, &item?)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `count` samples of `kind`; sample `i` draws from
/// `sample_rng(seed, i)`. A `{snr}` in `path` produces one file per SNR
/// point, otherwise one file cycles through the grid. Detection samples
/// take their taps from the receiver that `rx_for` returns for their SNR.
pub fn gen_dataset(
    setup: &Setup,
    rx_for: &dyn Fn(f64) -> Result<Receiver>,
    kind: DatasetKind,
    count: usize,
    seed: u64,
    path: &str,
) -> Result<Vec<PathBuf>> {
    if count == 0 {
        return Err(Error::InvalidArgument(
            "dataset needs at least one sample".into(),
        ));
    }
    if path.is_empty() {
        return Err(Error::Config("dataset path is empty".into()));
    }
    let grid = &setup.cfg.snr_db;
    let receivers = match kind {
        DatasetKind::DetectionPairs => grid
            .iter()
            .map(|&s| rx_for(s))
            .collect::<Result<Vec<_>>>()?,
        DatasetKind::ChannelPairs => Vec::new(),
    };
    let rx_at = |s: f64| &receivers[grid.iter().position(|&g| g == s).expect("grid point")];
    let per_file: Vec<(PathBuf, Vec<f64>)> = if path.contains("{snr}") {
        grid.iter()
            .map(|&s| (expand_path(path, s), vec![s; count]))
            .collect()
    } else {
        vec![(
            PathBuf::from(path),
            (0..count).map(|i| grid[i % grid.len()]).collect(),
        )]
    };
    for (file, snrs) in &per_file {
        let indexed = snrs.iter().enumerate().map(|(i, &s)| (i as u64, s));
        match kind {
            DatasetKind::ChannelPairs => write_lines(
                file,
                indexed.map(|(i, s)| channel_record(setup, s, i, seed)),
            )?,
            DatasetKind::DetectionPairs => write_lines(
                file,
                indexed.map(|(i, s)| {
                    Ok(DetectionRecord::from(&detection_problem(
                        setup,
                        rx_at(s),
                        s,
                        &mut sample_rng(seed, i),
                    )?))
                }),
            )?,
        }
    }
    Ok(per_file.into_iter().map(|(p, _)| p).collect())
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_channel_pairs(path: &Path) -> Result<Vec<ChannelPairRecord>> {
    read_lines(path)
}

pub fn read_detection_records(path: &Path) -> Result<Vec<DetectionRecord>> {
    read_lines(path)
}

/// Splits off the trailing `fraction` (at least one sample) for validation.
pub fn split_validation<T>(mut items: Vec<T>, fraction: f64) -> Result<(Vec<T>, Vec<T>)> {
    if items.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two samples to split".into(),
        ));
    }
    let n_valid = ((items.len() as f64 * fraction).round() as usize).clamp(1, items.len() - 1);
    let valid = items.split_off(items.len() - n_valid);
    Ok((items, valid))
}
