//! Frame-level link simulation, sweeps and sample generators.
//!
//! Trial `t` of a run draws everything from `trial_rng(seed, t)`, so the same
//! channels, payloads and noise shapes recur at every SNR point and in every
//! chain. Trials run in fixed-size batches; the stop rule is only evaluated
//! between batches, which keeps results independent of the worker count.

use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{expand_path, Csi, DatasetKind, Detector, Estimator, Mode, SimConfig};
use super::report::MetricsRecord;
use crate::channel::{
    apply_channel, noise_from_snr, sample_channel, ChannelModel, ChannelRealization,
};
use crate::detection::{
    cancel_ibi, cancel_ibi_with_pilots, oamp_detect, oamp_net_forward, reconstruct_prev_block,
    OampConfig, OampNetParams, TrainingSample,
};
use crate::error::{Error, Result};
use crate::estimation::{
    freq_to_taps, lmmse_weights, ls_estimate, sample_covariance, CeNetParams, ChannelPair,
    FreqChannelEstimate, LmmseWeights,
};
use crate::modem::{
    bit_errors, build_frame, ls_ofdm_detect, ml_lowbound_detect, transmit_with_cp,
    PilotArrangement, PilotPattern,
};
use crate::numerics::{stack_real, unstack_real, Constellation, DftOperator};
use crate::C64;

/// Stream reserved for the LMMSE covariance draws.
const COVARIANCE_STREAM: u64 = u64::MAX;

/// Independent generator for trial (or sample) `stream` under `seed`.
pub fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// First stream of training samples; frames use streams below it.
pub const SAMPLE_STREAM_BASE: u64 = 1 << 62;

/// Generator for training sample `index`, disjoint from every trial stream.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    trial_rng(seed, SAMPLE_STREAM_BASE + index)
}

/// Static per-run objects derived from a configuration.
pub struct Setup {
    pub cfg: SimConfig,
    pub model: ChannelModel,
    pub constellation: Constellation,
    pub pattern: PilotPattern,
    pub dft: DftOperator,
    pub oamp: OampConfig,
    covariance: OnceLock<DMatrix<C64>>,
}

impl Setup {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let model = cfg.channel_model()?;
        if model.len() > cfg.subcarriers {
            return Err(Error::ChannelTooLong {
                taps: model.len(),
                block: cfg.subcarriers,
            });
        }
        Ok(Self {
            constellation: Constellation::new(cfg.modulation),
            pattern: PilotPattern::new(cfg.pilots, cfg.subcarriers)?,
            dft: DftOperator::new(cfg.subcarriers)?,
            oamp: cfg.oamp()?,
            model,
            cfg,
            covariance: OnceLock::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.cfg.subcarriers
    }

    /// Taps kept when converting a frequency estimate to the time domain:
    /// the model's maximum delay spread.
    pub fn tap_count(&self) -> usize {
        self.model.len()
    }

    /// Sample covariance of the channel frequency response, drawn once per
    /// setup from a dedicated stream.
    pub fn covariance(&self) -> Result<&DMatrix<C64>> {
        if let Some(r) = self.covariance.get() {
            return Ok(r);
        }
        let mut rng = trial_rng(self.cfg.seed, COVARIANCE_STREAM);
        let r = sample_covariance(
            &self.model,
            self.n(),
            self.cfg.covariance_samples.max(1),
            &mut rng,
        )?;
        Ok(self.covariance.get_or_init(|| r))
    }

    /// LMMSE weights at `snr_db`. The pilot symbols have unit energy and the
    /// noise is set relative to the received energy, so `sigma2 / E_s` is
    /// `10^(-snr/10)` for every realization.
    pub fn lmmse(&self, snr_db: f64) -> Result<LmmseWeights> {
        lmmse_weights(self.covariance()?, 10f64.powf(-snr_db / 10.0), 1.0)
    }

    fn random_bits<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<u8> {
        (0..count).map(|_| rng.random_range(0..2u8)).collect()
    }

    /// A random block as the transmitter would send it: all data with
    /// continuous pilots, pilots plus data with comb pilots.
    fn random_block<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<C64>> {
        let bits = self.random_bits(self.pattern.block_capacity(&self.constellation), rng);
        let data = self.constellation.modulate(&bits)?;
        Ok(match self.pattern.arrangement() {
            PilotArrangement::Continuous => DVector::from_vec(data),
            PilotArrangement::Comb => self.assemble(&data),
        })
    }

    /// Comb block from data symbols in data-subcarrier order.
    fn assemble(&self, data: &[C64]) -> DVector<C64> {
        let mut u = DVector::from_element(self.n(), C64::new(0.0, 0.0));
        for &k in self.pattern.pilot_indices() {
            u[k] = self.pattern.pilot_symbol(k);
        }
        for (&k, &s) in self.pattern.data_indices().iter().zip(data) {
            u[k] = s;
        }
        u
    }

    fn pilot_block(&self) -> DVector<C64> {
        DVector::from_vec(self.pattern.pilot_symbols())
    }
}

/// Learned parameters and estimator state for one SNR point.
#[derive(Clone, Debug)]
pub struct Receiver {
    pub estimator: Option<Estimator>,
    pub detector: Detector,
    pub csi: Csi,
    pub lmmse: Option<LmmseWeights>,
    pub cenet: Option<CeNetParams>,
    pub oampnet: Option<OampNetParams>,
}

impl Receiver {
    /// Receiver for the configured chain, loading parameter files for
    /// learned stages.
    pub fn for_point(setup: &Setup, snr_db: f64) -> Result<Self> {
        let cfg = &setup.cfg;
        let estimate = cfg.csi == Csi::Estimated || cfg.mode == Mode::Mse;
        let mut rx = Self::new(cfg.chain.estimator(), cfg.chain.detector(), cfg.csi);
        if estimate && rx.detector != Detector::LowBound {
            rx.load_estimator(setup, snr_db)?;
        }
        if rx.detector == Detector::OampNet && cfg.mode == Mode::Ber {
            rx.oampnet = Some(OampNetParams::load(&required(
                &cfg.oampnet,
                "oampnet",
                snr_db,
            )?)?);
        }
        Ok(rx)
    }

    /// Receiver that produces detection datasets: the chain's estimator
    /// under `train_csi`, with plain OAMP as detector.
    pub fn for_dataset(setup: &Setup, snr_db: f64) -> Result<Self> {
        let cfg = &setup.cfg;
        let mut rx = Self::new(cfg.chain.estimator(), Detector::Oamp, cfg.train_csi);
        if cfg.train_csi == Csi::Estimated && cfg.kind == DatasetKind::DetectionPairs {
            rx.load_estimator(setup, snr_db)?;
        }
        Ok(rx)
    }

    fn load_estimator(&mut self, setup: &Setup, snr_db: f64) -> Result<()> {
        match self.estimator {
            Some(Estimator::Lmmse) => self.lmmse = Some(setup.lmmse(snr_db)?),
            Some(Estimator::CeNet) => {
                self.cenet = Some(CeNetParams::load(&required(
                    &setup.cfg.cenet,
                    "cenet",
                    snr_db,
                )?)?)
            }
            _ => {}
        }
        Ok(())
    }

    /// Receiver with explicit parts; used by training and experiments.
    pub fn new(estimator: Option<Estimator>, detector: Detector, csi: Csi) -> Self {
        Self {
            estimator,
            detector,
            csi,
            lmmse: None,
            cenet: None,
            oampnet: None,
        }
    }

    /// Frequency estimate from a received block in frequency domain.
    pub fn estimate(&self, setup: &Setup, y_freq: &DVector<C64>) -> Result<FreqChannelEstimate> {
        let ls = ls_estimate(y_freq, &setup.pattern)?;
        match self.estimator {
            None | Some(Estimator::Ls) => Ok(ls),
            Some(Estimator::Lmmse) => Ok(self
                .lmmse
                .as_ref()
                .ok_or(Error::Config("LMMSE weights missing".into()))?
                .apply(&ls)),
            Some(Estimator::CeNet) => self
                .cenet
                .as_ref()
                .ok_or(Error::Config("CE-NET parameters missing".into()))?
                .estimate(&ls),
        }
    }

    fn detect_oamp(
        &self,
        setup: &Setup,
        sys: &crate::numerics::RealLinearSystem,
    ) -> Result<DVector<f64>> {
        let det = match self.detector {
            Detector::OampNet => {
                let p = self
                    .oampnet
                    .as_ref()
                    .ok_or(Error::Config("OAMP-NET parameters missing".into()))?;
                oamp_net_forward(sys, p, &setup.oamp, &setup.constellation)?
            }
            _ => oamp_detect(sys, &setup.oamp, &setup.constellation)?,
        };
        Ok(det.u_hat)
    }
}

fn required(template: &str, key: &str, snr_db: f64) -> Result<std::path::PathBuf> {
    if template.is_empty() {
        return Err(Error::Config(format!(
            "chain needs a `{key}` parameter file"
        )));
    }
    let path = expand_path(template, snr_db);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    Ok(path)
}

/// Outcome of one simulated frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameOutcome {
    pub bits: u64,
    pub errors: u64,
    /// Sum of per-block channel-estimate MSEs and the block count.
    pub mse_sum: f64,
    pub mse_blocks: u64,
}

fn taps_for(
    setup: &Setup,
    rx: &Receiver,
    est: Option<&FreqChannelEstimate>,
    truth: &ChannelRealization,
) -> Result<ChannelRealization> {
    match est {
        Some(e) if rx.csi == Csi::Estimated => freq_to_taps(e, setup.tap_count(), &setup.dft),
        _ => Ok(truth.clone()),
    }
}

/// Simulates frame `trial` at `snr_db`.
pub fn simulate_frame(
    setup: &Setup,
    rx: &Receiver,
    snr_db: f64,
    trial: u64,
) -> Result<FrameOutcome> {
    let mut rng = trial_rng(setup.cfg.seed, trial);
    match setup.pattern.arrangement() {
        PilotArrangement::Continuous => continuous_frame(setup, rx, snr_db, &mut rng),
        PilotArrangement::Comb => comb_frame(setup, rx, snr_db, &mut rng),
    }
}

fn continuous_frame(
    setup: &Setup,
    rx: &Receiver,
    snr_db: f64,
    rng: &mut ChaCha8Rng,
) -> Result<FrameOutcome> {
    let n = setup.n();
    let c = &setup.constellation;
    let h = sample_channel(&setup.model, rng);
    let prev = setup.dft.inverse(&setup.random_block(rng)?);
    let bits = setup.random_bits(setup.pattern.block_capacity(c), rng);
    let frame = build_frame(&bits, &setup.pattern, c, &setup.dft)?;
    let sigma2 = noise_from_snr(snr_db, &h, n)?;
    let truth = h.frequency_response(n)?;
    let pilot_signal = &frame.blocks[0].signal;
    let mut out = FrameOutcome {
        bits: bits.len() as u64,
        ..Default::default()
    };
    if rx.detector == Detector::LowBound {
        let y = transmit_with_cp(frame.q(), &h, sigma2, rng)?;
        let decided = ml_lowbound_detect(setup.dft.forward(&y).as_slice(), truth.as_slice(), c)?;
        out.errors = bit_errors(&bits, &decided)? as u64;
        return Ok(out);
    }
    let y_p = apply_channel(pilot_signal, &prev, &h, sigma2, rng)?;
    let y_d = apply_channel(frame.q(), pilot_signal, &h, sigma2, rng)?;
    let est = match rx.csi {
        Csi::Estimated => {
            let e = rx.estimate(setup, &setup.dft.forward(&y_p))?;
            out.mse_sum = e.mse(&truth);
            out.mse_blocks = 1;
            Some(e)
        }
        Csi::Perfect => None,
    };
    let decided = match rx.detector {
        Detector::OneTap => {
            let h_hat = est.as_ref().map_or(&truth, |e| &e.h);
            ls_ofdm_detect(setup.dft.forward(&y_d).as_slice(), h_hat.as_slice(), c)?.bits
        }
        _ => {
            let taps = taps_for(setup, rx, est.as_ref(), &h)?;
            let sys = cancel_ibi(&y_d, &taps, pilot_signal, &setup.dft, sigma2)?;
            c.demodulate_real(&rx.detect_oamp(setup, &sys)?)
        }
    };
    out.errors = bit_errors(&bits, &decided)? as u64;
    Ok(out)
}

fn comb_frame(
    setup: &Setup,
    rx: &Receiver,
    snr_db: f64,
    rng: &mut ChaCha8Rng,
) -> Result<FrameOutcome> {
    let n = setup.n();
    let c = &setup.constellation;
    let data_idx = setup.pattern.data_indices();
    let cap = setup.pattern.block_capacity(c);
    let bits = setup.random_bits(cap * setup.cfg.comb_blocks, rng);
    let frame = build_frame(&bits, &setup.pattern, c, &setup.dft)?;
    let mut out = FrameOutcome {
        bits: bits.len() as u64,
        ..Default::default()
    };
    // The frame starts after silence; later blocks see the tail of their
    // predecessor through the current block's channel.
    let mut prev_true = DVector::zeros(n);
    let mut prev_hat = DVector::zeros(n);
    for (b, block) in frame.blocks.iter().enumerate() {
        let h = sample_channel(&setup.model, rng);
        let sigma2 = noise_from_snr(snr_db, &h, n)?;
        let truth = h.frequency_response(n)?;
        let sent = &bits[b * cap..(b + 1) * cap];
        let decided = if rx.detector == Detector::LowBound {
            let y = setup
                .dft
                .forward(&transmit_with_cp(&block.signal, &h, sigma2, rng)?);
            let y_d: Vec<C64> = data_idx.iter().map(|&k| y[k]).collect();
            let h_d: Vec<C64> = data_idx.iter().map(|&k| truth[k]).collect();
            ml_lowbound_detect(&y_d, &h_d, c)?
        } else {
            let y = apply_channel(&block.signal, &prev_true, &h, sigma2, rng)?;
            let y_freq = setup.dft.forward(&y);
            let est = match rx.csi {
                Csi::Estimated => {
                    let e = rx.estimate(setup, &y_freq)?;
                    out.mse_sum += e.mse(&truth);
                    out.mse_blocks += 1;
                    Some(e)
                }
                Csi::Perfect => None,
            };
            match rx.detector {
                Detector::OneTap => {
                    let h_hat = est.as_ref().map_or(&truth, |e| &e.h);
                    let y_d: Vec<C64> = data_idx.iter().map(|&k| y_freq[k]).collect();
                    let h_d: Vec<C64> = data_idx.iter().map(|&k| h_hat[k]).collect();
                    ls_ofdm_detect(&y_d, &h_d, c)?.bits
                }
                _ => {
                    let taps = taps_for(setup, rx, est.as_ref(), &h)?;
                    let sys = cancel_ibi_with_pilots(
                        &y,
                        &taps,
                        &prev_hat,
                        &setup.dft,
                        sigma2,
                        &setup.pattern,
                    )?;
                    let u_hat = rx.detect_oamp(setup, &sys)?;
                    let symbols: Vec<C64> = unstack_real(&u_hat)
                        .iter()
                        .map(|z| c.slice_symbol(*z))
                        .collect();
                    prev_hat = reconstruct_prev_block(&setup.assemble(&symbols), &setup.dft)?;
                    c.demodulate(&symbols)
                }
            }
        };
        out.errors += bit_errors(sent, &decided)? as u64;
        prev_true = block.signal.clone();
    }
    Ok(out)
}

/// Simulates one SNR point until the budget is met. A non-finite detector
/// state marks the record failed instead of aborting.
pub fn run_point(setup: &Setup, rx: &Receiver, snr_db: f64) -> Result<MetricsRecord> {
    let cfg = &setup.cfg;
    let start = Instant::now();
    let mut total = FrameOutcome::default();
    let mut failure = None;
    let mut next: u64 = 0;
    let batch = cfg.batch_frames as u64;
    'outer: loop {
        let results: Vec<Result<FrameOutcome>> = (next..next + batch)
            .into_par_iter()
            .map(|t| simulate_frame(setup, rx, snr_db, t))
            .collect();
        next += batch;
        for r in results {
            match r {
                Ok(o) => {
                    total.bits += o.bits;
                    total.errors += o.errors;
                    total.mse_sum += o.mse_sum;
                    total.mse_blocks += o.mse_blocks;
                }
                Err(e @ Error::NonFinite { .. }) => {
                    log::warn!("SNR {snr_db} dB: {e}; point marked failed");
                    failure = Some(e.to_string());
                    break 'outer;
                }
                Err(e) => return Err(e),
            }
        }
        let floors_met = total.errors >= cfg.min_errors && total.bits >= cfg.min_bits;
        if floors_met {
            break;
        }
        if total.bits >= cfg.max_bits {
            log::info!(
                "SNR {snr_db} dB: bit cap {} reached with {} errors",
                cfg.max_bits,
                total.errors
            );
            break;
        }
    }
    Ok(MetricsRecord {
        snr_db,
        ber: if total.bits > 0 {
            total.errors as f64 / total.bits as f64
        } else {
            f64::NAN
        },
        mse: if total.mse_blocks > 0 {
            total.mse_sum / total.mse_blocks as f64
        } else {
            f64::NAN
        },
        bits: total.bits,
        errors: total.errors,
        seconds: if cfg.timing {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        },
        seed: cfg.seed,
        config: cfg.digest(),
        error_floor_hit: total.errors >= cfg.min_errors,
        failure,
    })
}

/// Mean channel-estimate MSE over `samples` independent pilot observations.
pub fn channel_mse(
    setup: &Setup,
    rx: &Receiver,
    snr_db: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let errs: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, i);
            let (y, h) = pilot_observation(setup, snr_db, &mut rng)?;
            Ok(rx
                .estimate(setup, &y)?
                .mse(&h.frequency_response(setup.n())?))
        })
        .collect::<Result<_>>()?;
    Ok(errs.iter().sum::<f64>() / samples.max(1) as f64)
}

/// Runs every SNR point of the configuration.
pub fn run_sweep(setup: &Setup) -> Result<Vec<MetricsRecord>> {
    let cfg = &setup.cfg;
    let mut records = Vec::with_capacity(cfg.snr_db.len());
    for &snr in &cfg.snr_db {
        let rx = Receiver::for_point(setup, snr)?;
        let record = match cfg.mode {
            Mode::Ber => run_point(setup, &rx, snr)?,
            Mode::Mse => {
                let start = Instant::now();
                let mse = channel_mse(setup, &rx, snr, cfg.mse_samples, cfg.seed)?;
                MetricsRecord {
                    snr_db: snr,
                    ber: f64::NAN,
                    mse,
                    bits: 0,
                    errors: 0,
                    seconds: if cfg.timing {
                        start.elapsed().as_secs_f64()
                    } else {
                        0.0
                    },
                    seed: cfg.seed,
                    config: cfg.digest(),
                    error_floor_hit: false,
                    failure: None,
                }
            }
        };
        log::info!(
            "{} SNR {snr} dB: ber {:.3e} mse {:.3e} ({} errors / {} bits)",
            cfg.chain,
            record.ber,
            record.mse,
            record.errors,
            record.bits
        );
        records.push(record);
    }
    Ok(records)
}

/// Received pilot-bearing block in frequency domain and the true channel.
///
/// Continuous pilots: the pilot block after a random data block. Comb
/// pilots: a block with random data after a random block.
pub fn pilot_observation<R: Rng + ?Sized>(
    setup: &Setup,
    snr_db: f64,
    rng: &mut R,
) -> Result<(DVector<C64>, ChannelRealization)> {
    let n = setup.n();
    let h = sample_channel(&setup.model, rng);
    let prev = setup.dft.inverse(&setup.random_block(rng)?);
    let current = match setup.pattern.arrangement() {
        PilotArrangement::Continuous => setup.pilot_block(),
        PilotArrangement::Comb => setup.random_block(rng)?,
    };
    let sigma2 = noise_from_snr(snr_db, &h, n)?;
    let y = apply_channel(&setup.dft.inverse(&current), &prev, &h, sigma2, rng)?;
    Ok((setup.dft.forward(&y), h))
}

/// CE-NET training pair from one pilot observation.
pub fn channel_pair<R: Rng + ?Sized>(
    setup: &Setup,
    snr_db: f64,
    rng: &mut R,
) -> Result<ChannelPair> {
    let (y, h) = pilot_observation(setup, snr_db, rng)?;
    Ok(ChannelPair {
        ls: ls_estimate(&y, &setup.pattern)?.real_form(),
        truth: stack_real(&h.frequency_response(setup.n())?),
    })
}

/// `count` channel pairs at `snr_db` from streams `0..count` of `seed`.
pub fn channel_pairs(
    setup: &Setup,
    snr_db: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<ChannelPair>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| channel_pair(setup, snr_db, &mut sample_rng(seed, i)))
        .collect()
}

/// A detection problem as the receiver sees it.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionProblem {
    pub snr_db: f64,
    pub sigma2: f64,
    /// Received block (time domain).
    pub y: DVector<C64>,
    /// Taps the receiver uses for cancellation and detection.
    pub taps: ChannelRealization,
    /// Known previous block signal.
    pub q_prev: DVector<C64>,
    /// Transmitted frequency symbols of the whole block.
    pub u: DVector<C64>,
}

impl DetectionProblem {
    /// Real system and the transmitted unknowns in real form.
    pub fn training_sample(&self, setup: &Setup) -> Result<TrainingSample> {
        let (sys, u) = match setup.pattern.arrangement() {
            PilotArrangement::Continuous => (
                cancel_ibi(&self.y, &self.taps, &self.q_prev, &setup.dft, self.sigma2)?,
                self.u.clone(),
            ),
            PilotArrangement::Comb => (
                cancel_ibi_with_pilots(
                    &self.y,
                    &self.taps,
                    &self.q_prev,
                    &setup.dft,
                    self.sigma2,
                    &setup.pattern,
                )?,
                DVector::from_iterator(
                    setup.pattern.data_indices().len(),
                    setup.pattern.data_indices().iter().map(|&k| self.u[k]),
                ),
            ),
        };
        Ok(TrainingSample {
            sys,
            u: stack_real(&u),
        })
    }
}

/// One detection problem. The previous block is known to the receiver: the
/// pilot block with continuous pilots, a random block with comb pilots.
/// With estimated CSI the taps come from `rx`'s estimator applied to the
/// pilot observation.
pub fn detection_problem<R: Rng + ?Sized>(
    setup: &Setup,
    rx: &Receiver,
    snr_db: f64,
    rng: &mut R,
) -> Result<DetectionProblem> {
    let n = setup.n();
    let h = sample_channel(&setup.model, rng);
    let prev = setup.dft.inverse(&setup.random_block(rng)?);
    let u = setup.random_block(rng)?;
    let sigma2 = noise_from_snr(snr_db, &h, n)?;
    let (y, q_prev, pilot_freq) = match setup.pattern.arrangement() {
        PilotArrangement::Continuous => {
            let pilot = setup.dft.inverse(&setup.pilot_block());
            let y_p = apply_channel(&pilot, &prev, &h, sigma2, rng)?;
            let y_d = apply_channel(&setup.dft.inverse(&u), &pilot, &h, sigma2, rng)?;
            (y_d, pilot, setup.dft.forward(&y_p))
        }
        PilotArrangement::Comb => {
            let y = apply_channel(&setup.dft.inverse(&u), &prev, &h, sigma2, rng)?;
            let f = setup.dft.forward(&y);
            (y, prev, f)
        }
    };
    let taps = match rx.csi {
        Csi::Perfect => h,
        Csi::Estimated => freq_to_taps(
            &rx.estimate(setup, &pilot_freq)?,
            setup.tap_count(),
            &setup.dft,
        )?,
    };
    Ok(DetectionProblem {
        snr_db,
        sigma2,
        y,
        taps,
        q_prev,
        u,
    })
}

/// `count` training samples at `snr_db` from streams `0..count` of `seed`.
pub fn detection_samples(
    setup: &Setup,
    rx: &Receiver,
    snr_db: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<TrainingSample>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            detection_problem(setup, rx, snr_db, &mut sample_rng(seed, i))?.training_sample(setup)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Chain;

    fn setup(text: &str) -> Setup {
        Setup::new(SimConfig::from_text(text).unwrap()).unwrap()
    }

    #[test]
    fn lowbound_without_noise_is_error_free() {
        for pilots in ["continuous", "comb16"] {
            let s = setup(&format!("chain = lowbound_cp\npilots = {pilots}\nsnr = 300\nmax_bits = 20000\nbatch_frames = 8"));
            let rx = Receiver::for_point(&s, 300.0).unwrap();
            let rec = run_point(&s, &rx, 300.0).unwrap();
            assert_eq!(rec.errors, 0);
            assert!(rec.bits >= 20_000);
            assert!(!rec.error_floor_hit);
        }
    }

    #[test]
    fn perfect_csi_oamp_is_clean_at_high_snr() {
        let s = setup("chain = ls_oamp\ncsi = perfect\nmodulation = qpsk\nchannel = sui3\nsnr = 60\nmax_bits = 4096\nbatch_frames = 4\nlayers = 4");
        let rx = Receiver::for_point(&s, 60.0).unwrap();
        let rec = run_point(&s, &rx, 60.0).unwrap();
        assert_eq!(rec.errors, 0);
        assert!(rec.mse.is_nan());
    }

    #[test]
    fn comb_oamp_with_feedback_is_clean_at_high_snr() {
        let s = setup("chain = ls_oamp\ncsi = perfect\npilots = comb16\nmodulation = qpsk\nchannel = sui3\nsnr = 60\nmax_bits = 4000\nbatch_frames = 4\nlayers = 4");
        let rx = Receiver::for_point(&s, 60.0).unwrap();
        assert_eq!(run_point(&s, &rx, 60.0).unwrap().errors, 0);
    }

    #[test]
    fn frames_are_reproducible() {
        let s = setup("chain = lmmse_ofdm\nchannel = sui3\nsnr = 10\ncovariance_samples = 2000");
        let rx = Receiver::for_point(&s, 10.0).unwrap();
        assert_eq!(
            simulate_frame(&s, &rx, 10.0, 7).unwrap(),
            simulate_frame(&s, &rx, 10.0, 7).unwrap()
        );
        assert_ne!(
            simulate_frame(&s, &rx, 10.0, 7).unwrap(),
            simulate_frame(&s, &rx, 10.0, 8).unwrap()
        );
    }

    #[test]
    fn stop_rule_honours_error_floor() {
        let s =
            setup("chain = ls_ofdm\nchannel = sui3\nsnr = 10\nmin_errors = 500\nbatch_frames = 16");
        let rx = Receiver::for_point(&s, 10.0).unwrap();
        let rec = run_point(&s, &rx, 10.0).unwrap();
        assert!(rec.errors >= 500 && rec.error_floor_hit);
        assert!(rec.errors <= rec.bits);
        assert!(rec.mse.is_finite());
    }

    #[test]
    fn learned_chain_needs_parameter_files() {
        let s = setup("chain = ai_receiver\ncenet = /nonexistent/{snr}.txt");
        assert!(matches!(
            Receiver::for_point(&s, 25.0),
            Err(Error::MissingFile(_))
        ));
        let s = setup("chain = cenet_oamp");
        assert!(matches!(
            Receiver::for_point(&s, 25.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn noiseless_continuous_ls_matches_pilot_division() {
        // without IBI and noise the pilot LS is exact only under a CP; here the
        // random predecessor leaves a residual, which must vanish for a
        // single-tap channel
        let s = setup("channel = exp\nexp_taps = 1\nchain = ls_ofdm\nsnr = 300");
        let mut rng = trial_rng(1, 0);
        let (y, h) = pilot_observation(&s, 300.0, &mut rng).unwrap();
        let est = ls_estimate(&y, &s.pattern).unwrap();
        assert!((est.h - h.frequency_response(64).unwrap()).camax() < 1e-9);
    }

    #[test]
    fn detection_samples_have_grid_symbols_and_exact_model() {
        let s = setup("channel = sui3\nmodulation = qam16\nsnr = 300");
        let rx = Receiver::new(None, Detector::Oamp, Csi::Perfect);
        for pilots in [PilotArrangement::Continuous, PilotArrangement::Comb] {
            let mut cfg = s.cfg.clone();
            cfg.pilots = pilots;
            let s = Setup::new(cfg).unwrap();
            for t in detection_samples(&s, &rx, 300.0, 5, 3).unwrap() {
                assert!(t.u.iter().all(|x| s.constellation.on_grid(*x, 1e-12)));
                assert!((&t.sys.h * &t.u - &t.sys.y).amax() < 1e-6);
            }
        }
        assert_eq!(Chain::AiReceiver.detector(), Detector::OampNet);
    }
}
