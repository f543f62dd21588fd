//! Flat `key = value` configuration shared by every CLI subcommand.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::channel::{ChannelKind, ChannelModel};
use crate::detection::{LinearSolver, NoiseConvention, OampConfig};
use crate::error::{Error, Result};
use crate::modem::PilotArrangement;
use crate::numerics::Modulation;

/// Every recognized key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    (
        "channel",
        "urban16",
        "channel profile: sui3 | exp | urban16",
    ),
    ("exp_taps", "3", "tap count of the exp profile"),
    (
        "exp_decay",
        "1",
        "decay constant (samples) of the exp profile",
    ),
    (
        "urban16_decay",
        "2",
        "decay constant (samples) of the urban16 profile",
    ),
    ("modulation", "qam16", "qpsk | qam16 | qam64"),
    ("pilots", "continuous", "continuous | comb16"),
    ("subcarriers", "64", "block length N"),
    ("snr", "25", "comma-separated SNR grid in dB"),
    (
        "chain",
        "cenet_oamp",
        "ls_ofdm | lmmse_ofdm | ls_oamp | lmmse_oamp | cenet_oamp | ai_receiver | lowbound_cp",
    ),
    (
        "csi",
        "estimated",
        "estimated | perfect channel knowledge at the detector",
    ),
    ("layers", "10", "OAMP iterations / OAMP-NET layers"),
    ("damping", "0.5", "OAMP damping in (0, 1]"),
    ("floor", "1e-9", "variance floor of the detectors"),
    (
        "noise_convention",
        "verbatim",
        "verbatim | per_real_dim noise term in the residual variance",
    ),
    ("solver", "spectral", "spectral | direct linear stage"),
    ("min_errors", "1000", "bit errors required per SNR point"),
    ("min_bits", "0", "bits required per SNR point"),
    (
        "max_bits",
        "10000000",
        "hard cap on simulated bits per SNR point",
    ),
    (
        "batch_frames",
        "64",
        "frames simulated between stop-rule checks",
    ),
    ("seed", "1", "master seed"),
    (
        "cenet",
        "",
        "CE-NET parameter file; `{snr}` expands to the SNR point",
    ),
    (
        "oampnet",
        "",
        "OAMP-NET parameter file; `{snr}` expands to the SNR point",
    ),
    ("comb_blocks", "4", "blocks per frame with comb pilots"),
    (
        "covariance_samples",
        "10000",
        "channel draws for the LMMSE covariance",
    ),
    (
        "timing",
        "off",
        "on | off: record wall time (off keeps output byte-stable)",
    ),
    ("mode", "ber", "ber | mse sweep"),
    (
        "mse_samples",
        "2000",
        "channel estimates per point in mse mode",
    ),
    (
        "kind",
        "channel_pairs",
        "dataset kind: channel_pairs | detection_pairs",
    ),
    (
        "count",
        "10000",
        "dataset samples (per SNR point with a `{snr}` path)",
    ),
    (
        "dataset",
        "",
        "dataset file; `{snr}` expands to the SNR point",
    ),
    (
        "valid_fraction",
        "0.1",
        "trailing fraction of a dataset held out for validation",
    ),
    ("lr", "0.001", "Adam learning rate"),
    ("epochs", "10", "training epochs"),
    ("batch", "50", "training mini-batch size"),
    (
        "fd_step",
        "1e-4",
        "finite-difference step of the OAMP-NET trainer",
    ),
    (
        "train_csi",
        "perfect",
        "perfect | estimated CSI in detection datasets",
    ),
    ("out", "", "output path; `{snr}` expands to the SNR point"),
];

/// Keys that do not influence simulated values and are left out of the
/// digest.
const UNDIGESTED: &[&str] = &["out", "timing"];

macro_rules! text_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
        pub enum $name { $($variant),+ }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($name::$variant => $text),+ })
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($name), " `{}`"), other
                    ))),
                }
            }
        }
    };
}

text_enum!(Chain {
    LsOfdm => "ls_ofdm",
    LmmseOfdm => "lmmse_ofdm",
    LsOamp => "ls_oamp",
    LmmseOamp => "lmmse_oamp",
    CenetOamp => "cenet_oamp",
    AiReceiver => "ai_receiver",
    LowboundCp => "lowbound_cp",
});

text_enum!(Csi {
    Estimated => "estimated",
    Perfect => "perfect",
});

text_enum!(Mode {
    Ber => "ber",
    Mse => "mse",
});

text_enum!(DatasetKind {
    ChannelPairs => "channel_pairs",
    DetectionPairs => "detection_pairs",
});

/// Channel estimator of a chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    Ls,
    Lmmse,
    CeNet,
}

/// Detector of a chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Detector {
    OneTap,
    Oamp,
    OampNet,
    LowBound,
}

impl Chain {
    pub fn estimator(self) -> Option<Estimator> {
        match self {
            Chain::LsOfdm | Chain::LsOamp => Some(Estimator::Ls),
            Chain::LmmseOfdm | Chain::LmmseOamp => Some(Estimator::Lmmse),
            Chain::CenetOamp | Chain::AiReceiver => Some(Estimator::CeNet),
            Chain::LowboundCp => None,
        }
    }

    pub fn detector(self) -> Detector {
        match self {
            Chain::LsOfdm | Chain::LmmseOfdm => Detector::OneTap,
            Chain::LsOamp | Chain::LmmseOamp | Chain::CenetOamp => Detector::Oamp,
            Chain::AiReceiver => Detector::OampNet,
            Chain::LowboundCp => Detector::LowBound,
        }
    }
}

/// Parsed configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub channel: ChannelKind,
    pub exp_taps: usize,
    pub exp_decay: f64,
    pub urban16_decay: f64,
    pub modulation: Modulation,
    pub pilots: PilotArrangement,
    pub subcarriers: usize,
    pub snr_db: Vec<f64>,
    pub chain: Chain,
    pub csi: Csi,
    pub layers: usize,
    pub damping: f64,
    pub floor: f64,
    pub noise_convention: NoiseConvention,
    pub solver: LinearSolver,
    pub min_errors: u64,
    pub min_bits: u64,
    pub max_bits: u64,
    pub batch_frames: usize,
    pub seed: u64,
    pub cenet: String,
    pub oampnet: String,
    pub comb_blocks: usize,
    pub covariance_samples: usize,
    pub timing: bool,
    pub mode: Mode,
    pub mse_samples: usize,
    pub kind: DatasetKind,
    pub count: usize,
    pub dataset: String,
    pub valid_fraction: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub fd_step: f64,
    pub train_csi: Csi,
    pub out: String,
}

impl Default for SimConfig {
    fn default() -> Self {
        let mut cfg = Self::blank();
        for (k, v, _) in KEYS {
            cfg.set(k, v).expect("defaults parse");
        }
        cfg
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("bad value `{value}` for `{key}`: {e}")))
}

fn parse_switch(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!(
            "bad value `{other}` for `{key}`: expected on | off"
        ))),
    }
}

impl SimConfig {
    fn blank() -> Self {
        Self {
            channel: ChannelKind::Urban16,
            exp_taps: 0,
            exp_decay: 0.0,
            urban16_decay: 0.0,
            modulation: Modulation::Qpsk,
            pilots: PilotArrangement::Continuous,
            subcarriers: 0,
            snr_db: Vec::new(),
            chain: Chain::LsOfdm,
            csi: Csi::Estimated,
            layers: 0,
            damping: 0.0,
            floor: 0.0,
            noise_convention: NoiseConvention::Verbatim,
            solver: LinearSolver::Spectral,
            min_errors: 0,
            min_bits: 0,
            max_bits: 0,
            batch_frames: 0,
            seed: 0,
            cenet: String::new(),
            oampnet: String::new(),
            comb_blocks: 0,
            covariance_samples: 0,
            timing: false,
            mode: Mode::Ber,
            mse_samples: 0,
            kind: DatasetKind::ChannelPairs,
            count: 0,
            dataset: String::new(),
            valid_fraction: 0.0,
            lr: 0.0,
            epochs: 0,
            batch: 0,
            fd_step: 0.0,
            train_csi: Csi::Perfect,
            out: String::new(),
        }
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "channel" => self.channel = v.parse()?,
            "exp_taps" => self.exp_taps = parse(key, v)?,
            "exp_decay" => self.exp_decay = parse(key, v)?,
            "urban16_decay" => self.urban16_decay = parse(key, v)?,
            "modulation" => self.modulation = v.parse()?,
            "pilots" => self.pilots = v.parse()?,
            "subcarriers" => self.subcarriers = parse(key, v)?,
            "snr" => {
                self.snr_db = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "chain" => self.chain = v.parse()?,
            "csi" => self.csi = v.parse()?,
            "layers" => self.layers = parse(key, v)?,
            "damping" => self.damping = parse(key, v)?,
            "floor" => self.floor = parse(key, v)?,
            "noise_convention" => {
                self.noise_convention = match v {
                    "verbatim" => NoiseConvention::Verbatim,
                    "per_real_dim" => NoiseConvention::PerRealDimension,
                    other => {
                        return Err(Error::Config(format!("unknown noise_convention `{other}`")))
                    }
                }
            }
            "solver" => {
                self.solver = match v {
                    "spectral" => LinearSolver::Spectral,
                    "direct" => LinearSolver::Direct,
                    other => return Err(Error::Config(format!("unknown solver `{other}`"))),
                }
            }
            "min_errors" => self.min_errors = parse(key, v)?,
            "min_bits" => self.min_bits = parse(key, v)?,
            "max_bits" => self.max_bits = parse::<f64>(key, v)? as u64,
            "batch_frames" => self.batch_frames = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "cenet" => self.cenet = v.to_string(),
            "oampnet" => self.oampnet = v.to_string(),
            "comb_blocks" => self.comb_blocks = parse(key, v)?,
            "covariance_samples" => self.covariance_samples = parse(key, v)?,
            "timing" => self.timing = parse_switch(key, v)?,
            "mode" => self.mode = v.parse()?,
            "mse_samples" => self.mse_samples = parse(key, v)?,
            "kind" => self.kind = v.parse()?,
            "count" => self.count = parse(key, v)?,
            "dataset" => self.dataset = v.to_string(),
            "valid_fraction" => self.valid_fraction = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "fd_step" => self.fd_step = parse(key, v)?,
            "train_csi" => self.train_csi = v.parse()?,
            "out" => self.out = v.to_string(),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Current value of `key` in canonical text form.
    pub fn get(&self, key: &str) -> Result<String> {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        Ok(match key {
            "channel" => self.channel.to_string(),
            "exp_taps" => self.exp_taps.to_string(),
            "exp_decay" => self.exp_decay.to_string(),
            "urban16_decay" => self.urban16_decay.to_string(),
            "modulation" => self.modulation.to_string(),
            "pilots" => self.pilots.to_string(),
            "subcarriers" => self.subcarriers.to_string(),
            "snr" => join(&self.snr_db),
            "chain" => self.chain.to_string(),
            "csi" => self.csi.to_string(),
            "layers" => self.layers.to_string(),
            "damping" => self.damping.to_string(),
            "floor" => self.floor.to_string(),
            "noise_convention" => match self.noise_convention {
                NoiseConvention::Verbatim => "verbatim".into(),
                NoiseConvention::PerRealDimension => "per_real_dim".into(),
            },
            "solver" => match self.solver {
                LinearSolver::Spectral => "spectral".into(),
                LinearSolver::Direct => "direct".into(),
            },
            "min_errors" => self.min_errors.to_string(),
            "min_bits" => self.min_bits.to_string(),
            "max_bits" => self.max_bits.to_string(),
            "batch_frames" => self.batch_frames.to_string(),
            "seed" => self.seed.to_string(),
            "cenet" => self.cenet.clone(),
            "oampnet" => self.oampnet.clone(),
            "comb_blocks" => self.comb_blocks.to_string(),
            "covariance_samples" => self.covariance_samples.to_string(),
            "timing" => if self.timing { "on" } else { "off" }.into(),
            "mode" => self.mode.to_string(),
            "mse_samples" => self.mse_samples.to_string(),
            "kind" => self.kind.to_string(),
            "count" => self.count.to_string(),
            "dataset" => self.dataset.clone(),
            "valid_fraction" => self.valid_fraction.to_string(),
            "lr" => self.lr.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch" => self.batch.to_string(),
            "fd_step" => self.fd_step.to_string(),
            "train_csi" => self.train_csi.to_string(),
            "out" => self.out.clone(),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        })
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a
    /// comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected `key = value`, got `{raw}`"),
            })?;
            self.set(k, v).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_text(&fs::read_to_string(path)?)
    }

    /// All keys in table order, one `key = value` per line.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|(k, _, _)| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }

    /// First 16 hex digits of the SHA-256 of the canonical text, excluding
    /// keys that only affect where or how output is written.
    pub fn digest(&self) -> String {
        let canonical: String = KEYS
            .iter()
            .filter(|(k, _, _)| !UNDIGESTED.contains(k))
            .map(|(k, _, _)| format!("{k}={}\n", self.get(k).expect("known key")))
            .collect();
        Sha256::digest(canonical.as_bytes())
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.snr_db.is_empty() {
            return fail("SNR grid is empty".into());
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return fail("SNR values must be finite".into());
        }
        if self.subcarriers == 0 {
            return fail("subcarriers must be positive".into());
        }
        if self.max_bits == 0 || self.batch_frames == 0 {
            return fail("budget must be positive".into());
        }
        if self.min_errors > 0 && self.max_bits == 0 {
            return fail("max_bits must be positive".into());
        }
        if self.pilots == PilotArrangement::Comb && self.comb_blocks == 0 {
            return fail("comb_blocks must be positive".into());
        }
        if !(0.0..1.0).contains(&self.valid_fraction) {
            return fail(format!(
                "valid_fraction must lie in [0, 1), got {}",
                self.valid_fraction
            ));
        }
        self.oamp()?.validate()?;
        self.channel_model()?;
        Ok(())
    }

    pub fn channel_model(&self) -> Result<ChannelModel> {
        match self.channel {
            ChannelKind::Sui3 => Ok(ChannelModel::sui3()),
            ChannelKind::Exp => ChannelModel::exponential(self.exp_taps, self.exp_decay),
            ChannelKind::Urban16 => ChannelModel::urban16(self.urban16_decay),
        }
    }

    pub fn oamp(&self) -> Result<OampConfig> {
        Ok(OampConfig {
            layers: self.layers,
            damping: self.damping,
            floor: self.floor,
            noise_convention: self.noise_convention,
            solver: self.solver,
        })
    }
}

/// Expands `{snr}` in a path template.
pub fn expand_path(template: &str, snr_db: f64) -> PathBuf {
    PathBuf::from(template.replace("{snr}", &snr_db.to_string()))
}
