//! Pilot-based channel estimation: LS, LMMSE and the CE-NET refinement
//! layer, plus conversion of frequency estimates to time-domain taps.
//!
//! Frequency responses use the unnormalized DFT convention of
//! [`ChannelRealization::frequency_response`], so with a cyclic prefix the LS
//! estimate `Y_p(k) / X_p(k)` equals `H(k)` in the absence of noise.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{sample_channel, ChannelModel, ChannelRealization};
use crate::error::{check_len, Error, Result};
use crate::modem::{PilotArrangement, PilotPattern};
use crate::numerics::{embed_matrix, stack_real, unstack_real, DftOperator};
use crate::optim::Adam;
use crate::C64;

/// Per-subcarrier channel estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct FreqChannelEstimate {
    pub h: DVector<C64>,
}

impl FreqChannelEstimate {
    pub fn new(h: DVector<C64>) -> Self {
        Self { h }
    }

    pub fn from_real(v: &DVector<f64>) -> Self {
        Self { h: unstack_real(v) }
    }

    /// `[Re H; Im H]`.
    pub fn real_form(&self) -> DVector<f64> {
        stack_real(&self.h)
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    /// Mean squared error per subcarrier against the true response.
    pub fn mse(&self, truth: &DVector<C64>) -> f64 {
        (&self.h - truth).norm_squared() / truth.len() as f64
    }
}

/// LS estimate from the received pilot block in frequency domain.
///
/// Comb pilots are interpolated linearly in frequency between neighbouring
/// pilots; subcarriers beyond the last pilot repeat its value.
pub fn ls_estimate(y_p: &DVector<C64>, pattern: &PilotPattern) -> Result<FreqChannelEstimate> {
    let n = pattern.size();
    check_len("received pilot block", n, y_p.len())?;
    let idx = pattern.pilot_indices();
    let mut at_pilots = Vec::with_capacity(idx.len());
    for &k in idx {
        let x = pattern.pilot_symbol(k);
        if x.norm_sqr() == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "zero pilot symbol on subcarrier {k}"
            )));
        }
        at_pilots.push(y_p[k] / x);
    }
    let h = match pattern.arrangement() {
        PilotArrangement::Continuous => DVector::from_vec(at_pilots),
        PilotArrangement::Comb => {
            let mut h = DVector::from_element(n, C64::new(0.0, 0.0));
            for k in 0..n {
                let right = idx.partition_point(|&p| p <= k);
                h[k] = if right == 0 {
                    at_pilots[0]
                } else if right == idx.len() {
                    at_pilots[idx.len() - 1]
                } else {
                    let (k0, k1) = (idx[right - 1], idx[right]);
                    let t = (k - k0) as f64 / (k1 - k0) as f64;
                    at_pilots[right - 1] * (1.0 - t) + at_pilots[right] * t
                };
            }
            h
        }
    };
    Ok(FreqChannelEstimate { h })
}

/// Analytic frequency covariance `E{H H^H}` of a power-delay profile.
pub fn frequency_covariance(model: &ChannelModel, n: usize) -> Result<DMatrix<C64>> {
    if model.len() > n {
        return Err(Error::ChannelTooLong {
            taps: model.len(),
            block: n,
        });
    }
    let profile = model.power_profile();
    Ok(DMatrix::from_fn(n, n, |m, k| {
        let lag = (m + n - k) % n;
        profile
            .iter()
            .enumerate()
            .map(|(i, p)| {
                C64::from_polar(
                    *p,
                    -2.0 * std::f64::consts::PI * ((lag * i) % n) as f64 / n as f64,
                )
            })
            .sum()
    }))
}

/// Sample covariance of `count` simulated frequency responses.
pub fn sample_covariance<R: Rng + ?Sized>(
    model: &ChannelModel,
    n: usize,
    count: usize,
    rng: &mut R,
) -> Result<DMatrix<C64>> {
    if count == 0 {
        return Err(Error::InvalidArgument(
            "covariance needs at least one sample".into(),
        ));
    }
    const CHUNK: usize = 1024;
    let mut acc = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
    let mut done = 0;
    while done < count {
        let m = CHUNK.min(count - done);
        let mut cols = DMatrix::from_element(n, m, C64::new(0.0, 0.0));
        for j in 0..m {
            let h = sample_channel(model, rng).frequency_response(n)?;
            cols.set_column(j, &h);
        }
        acc += &cols * cols.adjoint();
        done += m;
    }
    Ok(acc / C64::new(count as f64, 0.0))
}

/// LMMSE weight matrix in complex and real-embedded form.
#[derive(Clone, Debug)]
pub struct LmmseWeights {
    pub w: DMatrix<C64>,
    /// `[[Re W, -Im W], [Im W, Re W]]`.
    pub w_real: DMatrix<f64>,
}

impl LmmseWeights {
    pub fn apply(&self, ls: &FreqChannelEstimate) -> FreqChannelEstimate {
        FreqChannelEstimate { h: &self.w * &ls.h }
    }
}

/// `W = R_HH (R_HH + (sigma2 / es) I)^{-1}`.
///
/// The cross-covariance between the channel and its LS estimate equals
/// `R_HH` because the LS error is independent of the channel.
pub fn lmmse_weights(r_hh: &DMatrix<C64>, sigma2: f64, es: f64) -> Result<LmmseWeights> {
    let n = r_hh.nrows();
    check_len("covariance columns", n, r_hh.ncols())?;
    if !(sigma2 >= 0.0) || !(es > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need sigma2 >= 0 and es > 0, got {sigma2}, {es}"
        )));
    }
    let ratio = sigma2 / es;
    let mut m = r_hh.clone();
    for i in 0..n {
        m[(i, i)] += C64::new(ratio, 0.0);
    }
    let chol = m.cholesky().ok_or(Error::Singular("LMMSE covariance"))?;
    let l = chol.l_dirty();
    let diag: Vec<f64> = (0..n).map(|i| l[(i, i)].norm_sqr()).collect();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0f64), |(a, b), &d| (a.min(d), b.max(d)));
    if !(lo > hi * 1e-13) {
        return Err(Error::Singular("LMMSE covariance"));
    }
    // W^H = M^{-1} R for Hermitian M and R.
    let w = chol.solve(r_hh).adjoint();
    let w_real = embed_matrix(&w);
    Ok(LmmseWeights { w, w_real })
}

/// One affine layer `weight * x + bias` acting on `[Re H_LS; Im H_LS]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CeNetParams {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Training example for CE-NET: real-form LS estimate and true response.
#[derive(Clone, Debug)]
pub struct ChannelPair {
    pub ls: DVector<f64>,
    pub truth: DVector<f64>,
}

/// Weight copied from the real LMMSE matrix, zero bias.
pub fn ce_net_init(w: &LmmseWeights) -> CeNetParams {
    CeNetParams {
        weight: w.w_real.clone(),
        bias: DVector::zeros(w.w_real.nrows()),
    }
}

/// `p.weight * x + p.bias`.
pub fn ce_net_forward(p: &CeNetParams, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("CE-NET input", p.weight.ncols(), x.len())?;
    Ok(&p.weight * x + &p.bias)
}

impl CeNetParams {
    /// Subcarrier count `N` (the layer is `2N x 2N`).
    pub fn subcarriers(&self) -> usize {
        self.weight.nrows() / 2
    }

    pub fn estimate(&self, ls: &FreqChannelEstimate) -> Result<FreqChannelEstimate> {
        Ok(FreqChannelEstimate::from_real(&ce_net_forward(
            self,
            &ls.real_form(),
        )?))
    }

    /// Mean per-sample squared error over `pairs`, summed in slice order.
    pub fn loss(&self, pairs: &[ChannelPair]) -> f64 {
        let mut total = 0.0;
        for chunk in pairs.chunks(256) {
            let (x, t) = stack_pairs(chunk);
            let mut pred = &self.weight * x;
            for mut col in pred.column_iter_mut() {
                col += &self.bias;
            }
            total += (pred - t).norm_squared();
        }
        total / pairs.len() as f64
    }

    /// Batch loss and its gradient with respect to weight and bias.
    pub fn loss_gradient(&self, batch: &[ChannelPair]) -> (f64, DMatrix<f64>, DVector<f64>) {
        let (x, t) = stack_pairs(batch);
        let mut err = &self.weight * &x - t;
        for mut col in err.column_iter_mut() {
            col += &self.bias;
        }
        let scale = 2.0 / batch.len() as f64;
        let loss = err.norm_squared() / batch.len() as f64;
        let g_w = &err * x.transpose() * scale;
        let g_b = err.column_sum() * scale;
        (loss, g_w, g_b)
    }

    /// Text form: a `CENET v1 N=<N>` header, `weight` followed by `2N` rows,
    /// then `bias` followed by one row. Values use 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = format!("CENET v1 N={}\nweight\n", self.subcarriers());
        for r in 0..self.weight.nrows() {
            push_row(&mut s, self.weight.row(r).iter().copied());
        }
        s.push_str("bias\n");
        push_row(&mut s, self.bias.iter().copied());
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty file".into(),
        })?;
        let n = parse_header(header, "CENET v1 N=")?;
        let dim = 2 * n;
        expect_marker(lines.next(), "weight")?;
        let mut weight = DMatrix::zeros(dim, dim);
        for r in 0..dim {
            let row = parse_row(lines.next(), dim)?;
            weight.set_row(r, &nalgebra::RowDVector::from_vec(row));
        }
        expect_marker(lines.next(), "bias")?;
        let bias = DVector::from_vec(parse_row(lines.next(), dim)?);
        Ok(Self { weight, bias })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_text(&fs::read_to_string(path)?)
    }
}

fn stack_pairs(pairs: &[ChannelPair]) -> (DMatrix<f64>, DMatrix<f64>) {
    let dim = pairs[0].ls.len();
    let mut x = DMatrix::zeros(dim, pairs.len());
    let mut t = DMatrix::zeros(dim, pairs.len());
    for (j, p) in pairs.iter().enumerate() {
        x.set_column(j, &p.ls);
        t.set_column(j, &p.truth);
    }
    (x, t)
}

pub(crate) fn push_row(s: &mut String, values: impl Iterator<Item = f64>) {
    let row: Vec<String> = values.map(|v| format!("{v:.16e}")).collect();
    s.push_str(&row.join(" "));
    s.push('\n');
}

pub(crate) fn parse_header(line: &str, prefix: &str) -> Result<usize> {
    line.trim()
        .strip_prefix(prefix)
        .and_then(|rest| rest.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
        .ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("expected `{prefix}<n>` header, got `{line}`"),
        })
}

fn expect_marker(line: Option<(usize, &str)>, marker: &str) -> Result<()> {
    match line {
        Some((_, l)) if l.trim() == marker => Ok(()),
        Some((i, l)) => Err(Error::Parse {
            line: i + 1,
            msg: format!("expected `{marker}`, got `{l}`"),
        }),
        None => Err(Error::Parse {
            line: 0,
            msg: format!("missing `{marker}` section"),
        }),
    }
}

pub(crate) fn parse_floats(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("bad number `{tok}`: {e}"),
            })
        })
        .collect()
}

fn parse_row(line: Option<(usize, &str)>, dim: usize) -> Result<Vec<f64>> {
    let (i, l) = line.ok_or(Error::Parse {
        line: 0,
        msg: "unexpected end of file".into(),
    })?;
    let row = parse_floats(l, i + 1)?;
    if row.len() != dim {
        return Err(Error::Parse {
            line: i + 1,
            msg: format!("expected {dim} values, found {}", row.len()),
        });
    }
    Ok(row)
}

/// CE-NET training hyper-parameters.
#[derive(Clone, Debug)]
pub struct CeTrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for CeTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 50,
            epochs: 20,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<P> {
    /// Parameters with the lowest validation loss seen, initialization included.
    pub params: P,
    pub initial_loss: f64,
    pub best_loss: f64,
    pub history: Vec<EpochLog>,
}

/// Consecutive epochs above `DIVERGENCE_FACTOR` times the initial validation
/// loss that abort training.
pub const DIVERGENCE_PATIENCE: usize = 3;
pub const DIVERGENCE_FACTOR: f64 = 10.0;

/// Tracks the best validation loss and the divergence rule shared by both
/// trainers.
pub(crate) struct Monitor {
    initial: f64,
    best: f64,
    strikes: usize,
}

impl Monitor {
    pub(crate) fn new(initial: f64) -> Self {
        Self {
            initial,
            best: initial,
            strikes: 0,
        }
    }

    /// Returns `Ok(true)` when `loss` improves on the best so far. A zero
    /// initial loss has no relative scale, so then only non-finite losses
    /// count against it.
    pub(crate) fn observe(&mut self, epoch: usize, loss: f64) -> Result<bool> {
        if !loss.is_finite() || (self.initial > 0.0 && loss > DIVERGENCE_FACTOR * self.initial) {
            self.strikes += 1;
            if self.strikes >= DIVERGENCE_PATIENCE || !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss,
                    initial: self.initial,
                });
            }
        } else {
            self.strikes = 0;
        }
        if loss < self.best {
            self.best = loss;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    pub(crate) fn best(&self) -> f64 {
        self.best
    }
}

/// Trains CE-NET with Adam on mini-batches, shuffled per epoch.
pub fn ce_net_train(
    init: &CeNetParams,
    train: &[ChannelPair],
    valid: &[ChannelPair],
    cfg: &CeTrainConfig,
) -> Result<TrainOutcome<CeNetParams>> {
    if train.is_empty() || valid.is_empty() {
        return Err(Error::InvalidArgument(
            "CE-NET training needs non-empty train and validation sets".into(),
        ));
    }
    let dim = init.weight.ncols();
    for p in train.iter().chain(valid) {
        check_len("CE-NET sample", dim, p.ls.len())?;
        check_len("CE-NET target", dim, p.truth.len())?;
    }
    let batch = cfg.batch.max(1);
    let mut params = init.clone();
    let mut best = init.clone();
    let initial_loss = init.loss(valid);
    let mut monitor = Monitor::new(initial_loss);
    let mut adam_w = Adam::new(params.weight.len(), cfg.lr);
    let mut adam_b = Adam::new(params.bias.len(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut scratch = Vec::with_capacity(batch);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        let mut batches = 0;
        for idx in order.chunks(batch) {
            scratch.clear();
            scratch.extend(idx.iter().map(|&i| train[i].clone()));
            let (loss, g_w, g_b) = params.loss_gradient(&scratch);
            adam_w.step(params.weight.as_mut_slice(), g_w.as_slice());
            adam_b.step(params.bias.as_mut_slice(), g_b.as_slice());
            train_loss += loss;
            batches += 1;
        }
        let valid_loss = params.loss(valid);
        let entry = EpochLog {
            epoch,
            train_loss: train_loss / batches as f64,
            valid_loss,
        };
        log::debug!(
            "ce-net epoch {epoch}: train {:.4e} valid {valid_loss:.4e}",
            entry.train_loss
        );
        history.push(entry);
        if monitor.observe(epoch, valid_loss)? {
            best = params.clone();
        }
    }
    Ok(TrainOutcome {
        params: best,
        initial_loss,
        best_loss: monitor.best(),
        history,
    })
}

/// Time-domain taps from a frequency estimate: the first `i_max` samples of
/// the inverse DFT `h = F^H H / sqrt(N)`. Later samples are dropped.
pub fn freq_to_taps(
    est: &FreqChannelEstimate,
    i_max: usize,
    dft: &DftOperator,
) -> Result<ChannelRealization> {
    let n = dft.size();
    check_len("frequency estimate", n, est.len())?;
    if i_max == 0 || i_max > n {
        return Err(Error::InvalidArgument(format!(
            "tap count {i_max} outside 1..={n}"
        )));
    }
    let scale = 1.0 / (n as f64).sqrt();
    let fh = dft.adjoint();
    let taps = (0..i_max)
        .map(|i| {
            fh.row(i)
                .iter()
                .zip(est.h.iter())
                .map(|(a, b)| a * b)
                .sum::<C64>()
                * scale
        })
        .collect();
    ChannelRealization::new(taps)
}
