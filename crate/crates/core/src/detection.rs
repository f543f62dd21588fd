//! Inter-block interference cancellation, the OAMP detector and OAMP-NET.
//!
//! Both detectors act on the real-valued system `y = H u + w` produced by
//! [`cancel_ibi`]. They share one layer implementation; OAMP-NET differs only
//! in the per-layer scalars `(lambda, gamma)` and in having no damping, so
//! all-ones parameters reproduce OAMP with `beta = 1` bit for bit.
//!
//! Per layer `l`, starting from `u_1 = 0`:
//!
//! ```text
//! e      = y - H u_l
//! v2     = max((|e|^2 - M s2) / tr(H^T H), eps)
//! P_hat  = v2 H^T (v2 H H^T + (s2 / 2) I)^-1,   P = n / tr(P_hat H) P_hat
//! r      = u_l + lambda P e
//! tau2   = max(tr(D D^T) v2 / n + gamma^2 tr(P P^T) s2 / (2n), eps),  D = I - gamma P H
//! u_l+1  = E{u | r, tau2}
//! ```
//!
//! where `M` and `n` are the row and column counts of `H` and `s2` is the
//! complex noise power. OAMP replaces `v2` in `P_hat` and `tau2` by the
//! damped `(1 - beta) v2_{l-1} + beta v2_l` with `v2_0 = 0`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{build_matrices, convolve_block, ChannelRealization};
use crate::error::{check_len, Error, Result};
use crate::estimation::{parse_floats, parse_header, push_row, EpochLog, Monitor, TrainOutcome};
use crate::modem::PilotPattern;
use crate::numerics::{
    posterior_mean_unchecked, real_decompose, Constellation, DftOperator, RealLinearSystem,
};
use crate::optim::Adam;
use crate::C64;

/// Effective frequency-domain channel `J F^H` of a CP-free block.
pub fn effective_channel(h_hat: &ChannelRealization, dft: &DftOperator) -> Result<DMatrix<C64>> {
    let m = build_matrices(h_hat, dft.size())?;
    Ok(m.j * dft.adjoint())
}

/// Removes the previous-block tail `A q_prev` and returns the real system
/// `y - A q_prev = J F^H u + w'` built from the estimated taps.
pub fn cancel_ibi(
    y: &DVector<C64>,
    h_hat: &ChannelRealization,
    q_prev_hat: &DVector<C64>,
    dft: &DftOperator,
    sigma2: f64,
) -> Result<RealLinearSystem> {
    let n = dft.size();
    check_len("received block", n, y.len())?;
    let tail = convolve_block(&DVector::zeros(n), q_prev_hat, h_hat)?;
    real_decompose(&effective_channel(h_hat, dft)?, &(y - tail), sigma2)
}

/// [`cancel_ibi`] for blocks with embedded pilots: the known pilot columns
/// are subtracted as well, leaving the data subcarriers (in the order of
/// [`PilotPattern::data_indices`]) as the only unknowns.
pub fn cancel_ibi_with_pilots(
    y: &DVector<C64>,
    h_hat: &ChannelRealization,
    q_prev_hat: &DVector<C64>,
    dft: &DftOperator,
    sigma2: f64,
    pattern: &PilotPattern,
) -> Result<RealLinearSystem> {
    let n = dft.size();
    check_len("received block", n, y.len())?;
    check_len("pilot pattern size", n, pattern.size())?;
    let tail = convolve_block(&DVector::zeros(n), q_prev_hat, h_hat)?;
    let h = effective_channel(h_hat, dft)?;
    let mut y_hat = y - tail;
    for &k in pattern.pilot_indices() {
        y_hat -= h.column(k) * pattern.pilot_symbol(k);
    }
    let data = pattern.data_indices();
    let h_d = DMatrix::from_fn(n, data.len(), |r, c| h[(r, data[c])]);
    real_decompose(&h_d, &y_hat, sigma2)
}

/// Time signal of a previous block from its (decided or known) symbols.
pub fn reconstruct_prev_block(u_prev: &DVector<C64>, dft: &DftOperator) -> Result<DVector<C64>> {
    check_len("previous block", dft.size(), u_prev.len())?;
    Ok(dft.inverse(u_prev))
}

/// Noise term used in the `v2` update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NoiseConvention {
    /// `M * sigma2`, as printed.
    #[default]
    Verbatim,
    /// `M * sigma2 / 2`, the expected residual power of `M` real dimensions.
    PerRealDimension,
}

/// How the per-layer linear stage is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LinearSolver {
    /// One SVD per system; every layer is then a pair of matrix-vector
    /// products.
    #[default]
    Spectral,
    /// Explicit `P_hat` per layer via a Cholesky solve.
    Direct,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OampConfig {
    pub layers: usize,
    /// OAMP damping `beta` in `(0, 1]`; unused by OAMP-NET.
    pub damping: f64,
    /// Floor applied to `v2` and `tau2`.
    pub floor: f64,
    pub noise_convention: NoiseConvention,
    pub solver: LinearSolver,
}

impl Default for OampConfig {
    fn default() -> Self {
        Self {
            layers: 10,
            damping: 0.5,
            floor: 1e-9,
            noise_convention: NoiseConvention::Verbatim,
            solver: LinearSolver::Spectral,
        }
    }
}

impl OampConfig {
    pub fn with_layers(layers: usize) -> Self {
        Self {
            layers,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::InvalidArgument("need at least one layer".into()));
        }
        if !(self.floor > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "floor must be positive, got {}",
                self.floor
            )));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        Ok(())
    }
}

/// Per-layer record of the detector state.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    pub v2: f64,
    /// Variance actually fed to `P` and `tau2` (damped for OAMP).
    pub v2_smooth: f64,
    pub tau2: f64,
    /// `tr(P H)`; equals the unknown count by construction.
    pub trace_ph: f64,
    pub r: DVector<f64>,
    /// `u_{l+1}`.
    pub u_next: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct Detection {
    /// Soft estimate `u_{L+1}` in real form.
    pub u_hat: DVector<f64>,
    pub trace: Vec<LayerTrace>,
}

impl Detection {
    /// Hard bit decisions on `u_hat`.
    pub fn bits(&self, c: &Constellation) -> Vec<u8> {
        c.demodulate_real(&self.u_hat)
    }
}

/// Diagonal loading of the LMMSE inner matrix: `sigma2 / 2`, or `floor` for a
/// noiseless system.
fn loading(sigma2: f64, floor: f64) -> f64 {
    if sigma2 > 0.0 {
        sigma2 / 2.0
    } else {
        floor
    }
}

/// LMMSE matrix `P_hat = v2 H^T (v2 H H^T + (sigma2/2) I)^-1` and its
/// normalized form `P = n / tr(P_hat H) P_hat`.
pub fn lmmse_matrix(
    h: &DMatrix<f64>,
    v2: f64,
    sigma2: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    lmmse_matrix_loaded(h, v2, loading(sigma2, OampConfig::default().floor))
}

fn lmmse_matrix_loaded(
    h: &DMatrix<f64>,
    v2: f64,
    load: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(v2 > 0.0) {
        return Err(Error::NonPositiveVariance(v2));
    }
    let rows = h.nrows();
    let mut inner = h * h.transpose() * v2;
    for i in 0..rows {
        inner[(i, i)] += load;
    }
    let chol = inner
        .cholesky()
        .ok_or(Error::Singular("OAMP inner matrix"))?;
    // P_hat^T = inner^-1 (v2 H) since inner is symmetric.
    let p_hat = chol.solve(&(h * v2)).transpose();
    let tr = (&p_hat * h).trace();
    if !(tr > 0.0) || !tr.is_finite() {
        return Err(Error::Singular("OAMP normalization"));
    }
    let p = &p_hat * (h.ncols() as f64 / tr);
    Ok((p_hat, p))
}

/// Output of one linear stage.
struct LinearStage {
    pe: DVector<f64>,
    trace_bb: f64,
    trace_pp: f64,
    trace_ph: f64,
}

enum Route {
    Spectral {
        /// `V^T`, `k x n`.
        vt: DMatrix<f64>,
        s: DVector<f64>,
        /// `U^T y`.
        uty: DVector<f64>,
        /// Energy of `y` outside the column space of `H`.
        y_perp: f64,
    },
    Direct,
}

/// A system with its solver-specific factorization, reusable across
/// parameter settings.
pub struct PreparedSystem {
    sys: RealLinearSystem,
    route: Route,
    trace_hth: f64,
}

impl PreparedSystem {
    pub fn new(sys: RealLinearSystem, solver: LinearSolver) -> Result<Self> {
        let trace_hth = sys.h.norm_squared();
        if !(trace_hth > 0.0) || !trace_hth.is_finite() {
            return Err(Error::Singular("channel matrix"));
        }
        let route = match solver {
            LinearSolver::Direct => Route::Direct,
            LinearSolver::Spectral => {
                let svd = sys.h.clone().svd(true, true);
                let u = svd.u.ok_or(Error::Singular("SVD"))?;
                let vt = svd.v_t.ok_or(Error::Singular("SVD"))?;
                let uty = u.tr_mul(&sys.y);
                let y_perp = (sys.y.norm_squared() - uty.norm_squared()).max(0.0);
                Route::Spectral {
                    vt,
                    s: svd.singular_values,
                    uty,
                    y_perp,
                }
            }
        };
        Ok(Self {
            sys,
            route,
            trace_hth,
        })
    }

    pub fn system(&self) -> &RealLinearSystem {
        &self.sys
    }

    /// `|y - H u|^2` and, for the direct route, the residual itself.
    fn residual(&self, u: &DVector<f64>) -> (f64, Option<DVector<f64>>) {
        match &self.route {
            Route::Direct => {
                let e = &self.sys.y - &self.sys.h * u;
                (e.norm_squared(), Some(e))
            }
            Route::Spectral { vt, s, uty, y_perp } => {
                let proj = uty - (vt * u).component_mul(s);
                (proj.norm_squared() + y_perp, None)
            }
        }
    }

    fn linear_stage(
        &self,
        u: &DVector<f64>,
        e: Option<DVector<f64>>,
        v2: f64,
        load: f64,
        gamma: f64,
    ) -> Result<LinearStage> {
        let n = self.sys.cols() as f64;
        match &self.route {
            Route::Direct => {
                let (_, p) = lmmse_matrix_loaded(&self.sys.h, v2, load)?;
                let ph = &p * &self.sys.h;
                let mut b = -(&ph * gamma);
                for i in 0..b.nrows() {
                    b[(i, i)] += 1.0;
                }
                Ok(LinearStage {
                    pe: &p * e.expect("direct residual"),
                    trace_bb: b.norm_squared(),
                    trace_pp: p.norm_squared(),
                    trace_ph: ph.trace(),
                })
            }
            Route::Spectral { vt, s, uty, .. } => {
                let k = s.len();
                let d: Vec<f64> = s
                    .iter()
                    .map(|&si| v2 * si * si / (v2 * si * si + load))
                    .collect();
                let sum_d: f64 = d.iter().sum();
                if !(sum_d > 0.0) || !sum_d.is_finite() {
                    return Err(Error::Singular("OAMP normalization"));
                }
                let c = n / sum_d;
                let proj = uty - (vt * u).component_mul(s);
                let mut w = DVector::zeros(k);
                let mut sum_g2 = 0.0;
                let mut trace_bb = n - k as f64;
                for i in 0..k {
                    let g = v2 * s[i] / (v2 * s[i] * s[i] + load);
                    w[i] = c * g * proj[i];
                    sum_g2 += g * g;
                    let b = 1.0 - gamma * c * d[i];
                    trace_bb += b * b;
                }
                Ok(LinearStage {
                    pe: vt.tr_mul(&w),
                    trace_bb,
                    trace_pp: c * c * sum_g2,
                    trace_ph: c * sum_d,
                })
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Variant<'a> {
    Oamp { beta: f64 },
    Net(&'a OampNetParams),
}

impl Variant<'_> {
    fn scalars(&self, layer: usize) -> (f64, f64) {
        match self {
            Variant::Oamp { .. } => (1.0, 1.0),
            Variant::Net(p) => (p.lambdas[layer], p.gammas[layer]),
        }
    }
}

fn finite(x: f64, layer: usize, what: &'static str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite {
            layer: layer + 1,
            what,
        })
    }
}

/// Runs layers `from..cfg.layers` starting from `u` (and, for OAMP, the
/// previous raw variance `prev_v2`).
#[allow(clippy::too_many_arguments)]
fn run_layers(
    prep: &PreparedSystem,
    cfg: &OampConfig,
    alphabet: &[f64],
    variant: Variant<'_>,
    from: usize,
    mut u: DVector<f64>,
    mut prev_v2: f64,
    mut trace: Option<&mut Vec<LayerTrace>>,
) -> Result<DVector<f64>> {
    let sigma2 = prep.sys.sigma2;
    let rows = prep.sys.rows() as f64;
    let n = prep.sys.cols() as f64;
    let noise = match cfg.noise_convention {
        NoiseConvention::Verbatim => rows * sigma2,
        NoiseConvention::PerRealDimension => rows * sigma2 / 2.0,
    };
    let load = loading(sigma2, cfg.floor);
    for l in from..cfg.layers {
        let (lambda, gamma) = variant.scalars(l);
        let (res2, e) = prep.residual(&u);
        let v2 = finite(((res2 - noise) / prep.trace_hth).max(cfg.floor), l, "v2")?;
        let v2_used = match variant {
            Variant::Oamp { beta } => (1.0 - beta) * prev_v2 + beta * v2,
            Variant::Net(_) => v2,
        };
        prev_v2 = v2;
        let stage = prep.linear_stage(&u, e, v2_used, load, gamma)?;
        let r = &u + stage.pe * lambda;
        let tau2 =
            stage.trace_bb / n * v2_used + gamma * gamma * stage.trace_pp / (2.0 * n) * sigma2;
        let tau2 = finite(tau2, l, "tau2")?.max(cfg.floor);
        let next = r.map(|x| posterior_mean_unchecked(x, tau2, alphabet));
        if r.iter().any(|x| !x.is_finite()) || next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                layer: l + 1,
                what: "r",
            });
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(LayerTrace {
                v2,
                v2_smooth: v2_used,
                tau2,
                trace_ph: stage.trace_ph,
                r,
                u_next: next.clone(),
            });
        }
        u = next;
    }
    Ok(u)
}

fn detect(
    prep: &PreparedSystem,
    cfg: &OampConfig,
    c: &Constellation,
    variant: Variant<'_>,
) -> Result<Detection> {
    cfg.validate()?;
    let mut trace = Vec::with_capacity(cfg.layers);
    let u0 = DVector::zeros(prep.sys.cols());
    let u_hat = run_layers(
        prep,
        cfg,
        c.real_alphabet(),
        variant,
        0,
        u0,
        0.0,
        Some(&mut trace),
    )?;
    Ok(Detection { u_hat, trace })
}

/// OAMP with damping `cfg.damping`.
pub fn oamp_detect(
    sys: &RealLinearSystem,
    cfg: &OampConfig,
    c: &Constellation,
) -> Result<Detection> {
    oamp_detect_prepared(&PreparedSystem::new(sys.clone(), cfg.solver)?, cfg, c)
}

pub fn oamp_detect_prepared(
    prep: &PreparedSystem,
    cfg: &OampConfig,
    c: &Constellation,
) -> Result<Detection> {
    detect(prep, cfg, c, Variant::Oamp { beta: cfg.damping })
}

/// OAMP-NET forward pass; `params` must have `cfg.layers` layers.
pub fn oamp_net_forward(
    sys: &RealLinearSystem,
    params: &OampNetParams,
    cfg: &OampConfig,
    c: &Constellation,
) -> Result<Detection> {
    oamp_net_forward_prepared(
        &PreparedSystem::new(sys.clone(), cfg.solver)?,
        params,
        cfg,
        c,
    )
}

pub fn oamp_net_forward_prepared(
    prep: &PreparedSystem,
    params: &OampNetParams,
    cfg: &OampConfig,
    c: &Constellation,
) -> Result<Detection> {
    check_len("OAMP-NET layers", cfg.layers, params.layers())?;
    detect(prep, cfg, c, Variant::Net(params))
}

/// Per-layer OAMP-NET scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct OampNetParams {
    pub lambdas: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl OampNetParams {
    pub fn ones(layers: usize) -> Self {
        Self {
            lambdas: vec![1.0; layers],
            gammas: vec![1.0; layers],
        }
    }

    pub fn layers(&self) -> usize {
        self.lambdas.len()
    }

    fn flat(&self) -> Vec<f64> {
        self.lambdas.iter().chain(&self.gammas).copied().collect()
    }

    fn set_flat(&mut self, v: &[f64]) {
        let l = self.layers();
        self.lambdas.copy_from_slice(&v[..l]);
        self.gammas.copy_from_slice(&v[l..]);
    }

    /// `OAMPNET v1 L=<L>`, then `lambda:` and `gamma:` lines.
    pub fn to_text(&self) -> String {
        let mut s = format!("OAMPNET v1 L={}\nlambda: ", self.layers());
        push_row(&mut s, self.lambdas.iter().copied());
        s.push_str("gamma: ");
        push_row(&mut s, self.gammas.iter().copied());
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
        let layers = parse_header(header, "OAMPNET v1 L=")?;
        let mut field = |key: &str| -> Result<Vec<f64>> {
            let (i, line) = lines.next().ok_or(Error::Parse {
                line: 0,
                msg: format!("missing `{key}` line"),
            })?;
            let rest = line.trim().strip_prefix(key).ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected `{key}`"),
            })?;
            let v = parse_floats(rest, i + 1)?;
            if v.len() != layers || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected {layers} finite values"),
                });
            }
            Ok(v)
        };
        let lambdas = field("lambda:")?;
        let gammas = field("gamma:")?;
        Ok(Self { lambdas, gammas })
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

/// A detection problem with its transmitted symbols in real form.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub sys: RealLinearSystem,
    pub u: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct OampTrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Central finite-difference step.
    pub fd_step: f64,
}

impl Default for OampTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 32,
            epochs: 10,
            seed: 1,
            fd_step: 1e-4,
        }
    }
}

struct PreparedSample {
    prep: PreparedSystem,
    u: DVector<f64>,
}

fn sample_loss(
    s: &PreparedSample,
    p: &OampNetParams,
    cfg: &OampConfig,
    alphabet: &[f64],
) -> Result<f64> {
    let u0 = DVector::zeros(s.prep.sys.cols());
    let out = run_layers(&s.prep, cfg, alphabet, Variant::Net(p), 0, u0, 0.0, None)?;
    Ok((out - &s.u).norm_squared())
}

/// Loss and central-difference gradient for one sample. Perturbing layer `l`
/// leaves layers before it unchanged, so each evaluation restarts from the
/// cached input of layer `l`.
fn sample_gradient(
    s: &PreparedSample,
    p: &OampNetParams,
    cfg: &OampConfig,
    alphabet: &[f64],
    h: f64,
) -> Result<(f64, Vec<f64>)> {
    let layers = p.layers();
    let mut trace = Vec::with_capacity(layers);
    let u0 = DVector::zeros(s.prep.sys.cols());
    let out = run_layers(
        &s.prep,
        cfg,
        alphabet,
        Variant::Net(p),
        0,
        u0.clone(),
        0.0,
        Some(&mut trace),
    )?;
    let loss = (out - &s.u).norm_squared();
    let mut grad = vec![0.0; 2 * layers];
    let mut q = p.clone();
    for l in 0..layers {
        let start = if l == 0 {
            u0.clone()
        } else {
            trace[l - 1].u_next.clone()
        };
        for which in 0..2 {
            let base = if which == 0 {
                p.lambdas[l]
            } else {
                p.gammas[l]
            };
            let mut eval = |value: f64| -> Result<f64> {
                if which == 0 {
                    q.lambdas[l] = value;
                } else {
                    q.gammas[l] = value;
                }
                let u = run_layers(
                    &s.prep,
                    cfg,
                    alphabet,
                    Variant::Net(&q),
                    l,
                    start.clone(),
                    0.0,
                    None,
                )?;
                Ok((u - &s.u).norm_squared())
            };
            let plus = eval(base + h)?;
            let minus = eval(base - h)?;
            grad[which * layers + l] = (plus - minus) / (2.0 * h);
            if which == 0 {
                q.lambdas[l] = base;
            } else {
                q.gammas[l] = base;
            }
        }
    }
    Ok((loss, grad))
}

fn mean_loss(
    samples: &[PreparedSample],
    p: &OampNetParams,
    cfg: &OampConfig,
    alphabet: &[f64],
) -> Result<f64> {
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| sample_loss(s, p, cfg, alphabet))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / samples.len() as f64)
}

/// Trains the `2L` OAMP-NET scalars with Adam on the squared error of
/// `u_{L+1}`, using finite-difference gradients.
pub fn oamp_net_train(
    init: &OampNetParams,
    train: &[TrainingSample],
    valid: &[TrainingSample],
    cfg: &OampConfig,
    c: &Constellation,
    hyper: &OampTrainConfig,
) -> Result<TrainOutcome<OampNetParams>> {
    cfg.validate()?;
    check_len("OAMP-NET layers", cfg.layers, init.layers())?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::InvalidArgument(
            "OAMP-NET training needs non-empty train and validation sets".into(),
        ));
    }
    let prepare = |set: &[TrainingSample]| -> Result<Vec<PreparedSample>> {
        set.par_iter()
            .map(|s| {
                check_len("training symbols", s.sys.cols(), s.u.len())?;
                Ok(PreparedSample {
                    prep: PreparedSystem::new(s.sys.clone(), cfg.solver)?,
                    u: s.u.clone(),
                })
            })
            .collect()
    };
    let train = prepare(train)?;
    let valid = prepare(valid)?;
    let alphabet = c.real_alphabet();
    let mut params = init.clone();
    let mut best = init.clone();
    let initial_loss = mean_loss(&valid, init, cfg, alphabet)?;
    let mut monitor = Monitor::new(initial_loss);
    let mut adam = Adam::new(2 * init.layers(), hyper.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(hyper.epochs);
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        let mut batches = 0;
        for idx in order.chunks(hyper.batch.max(1)) {
            let parts: Vec<(f64, Vec<f64>)> = idx
                .par_iter()
                .map(|&i| sample_gradient(&train[i], &params, cfg, alphabet, hyper.fd_step))
                .collect::<Result<_>>()?;
            let mut grad = vec![0.0; 2 * params.layers()];
            let mut loss = 0.0;
            for (l, g) in &parts {
                loss += l;
                for (acc, gi) in grad.iter_mut().zip(g) {
                    *acc += gi;
                }
            }
            let scale = 1.0 / parts.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            let mut flat = params.flat();
            adam.step(&mut flat, &grad);
            params.set_flat(&flat);
            train_loss += loss * scale;
            batches += 1;
        }
        let valid_loss = mean_loss(&valid, &params, cfg, alphabet)?;
        let entry = EpochLog {
            epoch,
            train_loss: train_loss / batches as f64,
            valid_loss,
        };
        log::debug!(
            "oamp-net epoch {epoch}: train {:.4e} valid {valid_loss:.4e}",
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
