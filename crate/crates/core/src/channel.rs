//! Tapped-delay-line Rayleigh channels and the CP-free block propagation
//! model.
//!
//! Without a cyclic prefix the received block is
//!
//! ```text
//! y = J q + A q_prev + w,      J = C - A
//! ```
//!
//! where `C` is the circulant matrix of the taps, `A` holds the wrapped
//! (upper-right) part of `C` that in a CP system would come from the prefix,
//! and `q_prev` is the preceding time-domain block.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, Error, Result};
use crate::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChannelKind {
    /// Three paths at samples 0, 4, 10 with 0, -5, -10 dB.
    Sui3,
    /// Exponential power-delay profile on consecutive taps.
    Exp,
    /// 16 exponentially decaying taps on delays 0..=15, standing in for a
    /// typical-urban WINNER II channel with a 16-sample maximum delay.
    Urban16,
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelKind::Sui3 => "sui3",
            ChannelKind::Exp => "exp",
            ChannelKind::Urban16 => "urban16",
        })
    }
}

impl FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sui3" | "sui" => Ok(ChannelKind::Sui3),
            "exp" | "exponential" => Ok(ChannelKind::Exp),
            "urban16" | "winner2" | "winnerii" => Ok(ChannelKind::Urban16),
            other => Err(Error::Config(format!("unknown channel `{other}`"))),
        }
    }
}

/// Default decay constant (in samples) of the urban16 profile.
pub const URBAN16_DEFAULT_DECAY: f64 = 4.0;

/// Average power-delay profile of a tapped-delay-line channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelModel {
    kind: ChannelKind,
    delays: Vec<usize>,
    /// Linear average tap powers summing to one.
    powers: Vec<f64>,
}

impl ChannelModel {
    pub fn sui3() -> Self {
        Self::from_db(ChannelKind::Sui3, vec![0, 4, 10], &[0.0, -5.0, -10.0])
    }

    /// `taps` consecutive taps with powers proportional to `exp(-i / decay)`.
    pub fn exponential(taps: usize, decay: f64) -> Result<Self> {
        Self::exp_profile(ChannelKind::Exp, taps, decay)
    }

    pub fn urban16(decay: f64) -> Result<Self> {
        Self::exp_profile(ChannelKind::Urban16, 16, decay)
    }

    /// Flat (one-tap) Rayleigh channel.
    pub fn single_tap() -> Self {
        Self::exp_profile(ChannelKind::Exp, 1, 1.0).expect("valid profile")
    }

    fn exp_profile(kind: ChannelKind, taps: usize, decay: f64) -> Result<Self> {
        if taps == 0 {
            return Err(Error::Config("channel needs at least one tap".into()));
        }
        if !(decay > 0.0) {
            return Err(Error::Config(format!(
                "decay must be positive, got {decay}"
            )));
        }
        let raw: Vec<f64> = (0..taps).map(|i| (-(i as f64) / decay).exp()).collect();
        Ok(Self::normalized(kind, (0..taps).collect(), raw))
    }

    fn from_db(kind: ChannelKind, delays: Vec<usize>, db: &[f64]) -> Self {
        let raw = db.iter().map(|d| 10f64.powf(d / 10.0)).collect();
        Self::normalized(kind, delays, raw)
    }

    fn normalized(kind: ChannelKind, delays: Vec<usize>, raw: Vec<f64>) -> Self {
        let total: f64 = raw.iter().sum();
        Self {
            kind,
            delays,
            powers: raw.into_iter().map(|p| p / total).collect(),
        }
    }

    pub fn kind(&self) -> ChannelKind {
        self.kind
    }

    pub fn delays(&self) -> &[usize] {
        &self.delays
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    /// Channel length `I`: taps span delays `0..I`.
    pub fn len(&self) -> usize {
        self.delays.iter().max().map_or(0, |d| d + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    /// Average power of every tap position `0..I`, zero where no path exists.
    pub fn power_profile(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.len()];
        for (&d, &pw) in self.delays.iter().zip(&self.powers) {
            p[d] += pw;
        }
        p
    }
}

/// One draw of the channel impulse response `h[0..I]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    taps: Vec<C64>,
}

impl ChannelRealization {
    pub fn new(taps: Vec<C64>) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::InvalidArgument(
                "channel needs at least one tap".into(),
            ));
        }
        if taps.iter().any(|t| !t.re.is_finite() || !t.im.is_finite()) {
            return Err(Error::InvalidArgument("non-finite channel tap".into()));
        }
        Ok(Self { taps })
    }

    pub fn taps(&self) -> &[C64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    fn check_fits(&self, n: usize) -> Result<()> {
        if self.taps.len() > n {
            Err(Error::ChannelTooLong {
                taps: self.taps.len(),
                block: n,
            })
        } else {
            Ok(())
        }
    }

    /// Per-subcarrier response `H(k) = sum_i h_i exp(-j 2 pi k i / N)`.
    ///
    /// This is the unnormalized DFT of the zero-padded taps, i.e. the diagonal
    /// of `F C F^H`, so that LS estimates and `Y(k) / H(k)` equalization work
    /// directly with it.
    pub fn frequency_response(&self, n: usize) -> Result<DVector<C64>> {
        self.check_fits(n)?;
        Ok(DVector::from_fn(n, |k, _| {
            self.taps
                .iter()
                .enumerate()
                .map(|(i, h)| {
                    h * C64::from_polar(
                        1.0,
                        -2.0 * std::f64::consts::PI * ((k * i) % n) as f64 / n as f64,
                    )
                })
                .sum()
        }))
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t.norm_sqr()).sum()
    }
}

/// Draws independent circular Gaussian taps following the model's profile.
/// Delays without a path are exact zeros.
pub fn sample_channel<R: Rng + ?Sized>(model: &ChannelModel, rng: &mut R) -> ChannelRealization {
    let mut taps = vec![C64::new(0.0, 0.0); model.len()];
    for (&d, &p) in model.delays.iter().zip(&model.powers) {
        let s = (p / 2.0).sqrt();
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        taps[d] += C64::new(s * re, s * im);
    }
    ChannelRealization { taps }
}

/// The `C`, `A` and `J = C - A` matrices of one realization.
#[derive(Clone, Debug)]
pub struct ChannelMatrices {
    pub c: DMatrix<C64>,
    pub a: DMatrix<C64>,
    pub j: DMatrix<C64>,
}

pub fn build_matrices(h: &ChannelRealization, n: usize) -> Result<ChannelMatrices> {
    h.check_fits(n)?;
    let taps = h.taps();
    let zero = C64::new(0.0, 0.0);
    let c = DMatrix::from_fn(n, n, |r, col| {
        let lag = (r + n - col) % n;
        taps.get(lag).copied().unwrap_or(zero)
    });
    // The wrapped entries (column right of the diagonal) form A.
    let a = DMatrix::from_fn(n, n, |r, col| if col > r { c[(r, col)] } else { zero });
    let j = &c - &a;
    Ok(ChannelMatrices { c, a, j })
}

/// Noiseless CP-free block output `J q + A q_prev`, computed as the tail of
/// the linear convolution of `[q_prev, q]` with the taps.
pub fn convolve_block(
    q: &DVector<C64>,
    q_prev: &DVector<C64>,
    h: &ChannelRealization,
) -> Result<DVector<C64>> {
    let n = q.len();
    check_len("previous block", n, q_prev.len())?;
    h.check_fits(n)?;
    let taps = h.taps();
    Ok(DVector::from_fn(n, |t, _| {
        taps.iter()
            .enumerate()
            .map(|(i, hi)| {
                let x = if i <= t { q[t - i] } else { q_prev[n + t - i] };
                hi * x
            })
            .sum()
    }))
}

/// Noiseless output `C q` of a system with a sufficient cyclic prefix.
pub fn circular_convolve(q: &DVector<C64>, h: &ChannelRealization) -> Result<DVector<C64>> {
    convolve_block(q, q, h)
}

/// Adds `CN(0, sigma2)` noise in place.
pub fn add_noise<R: Rng + ?Sized>(y: &mut DVector<C64>, sigma2: f64, rng: &mut R) {
    let s = (sigma2 / 2.0).sqrt();
    for v in y.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *v += C64::new(s * re, s * im);
    }
}

/// `y = J q + A q_prev + w` with `w ~ CN(0, sigma2 I)`.
pub fn apply_channel<R: Rng + ?Sized>(
    q: &DVector<C64>,
    q_prev: &DVector<C64>,
    h: &ChannelRealization,
    sigma2: f64,
    rng: &mut R,
) -> Result<DVector<C64>> {
    if !(sigma2 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise variance {sigma2} < 0"
        )));
    }
    let mut y = convolve_block(q, q_prev, h)?;
    add_noise(&mut y, sigma2, rng);
    Ok(y)
}

/// Average per-sample energy of `s = J F^H u` for unit-energy i.i.d. symbols:
/// `||J||_F^2 / N`.
pub fn signal_energy(h: &ChannelRealization, n: usize) -> Result<f64> {
    h.check_fits(n)?;
    let total: f64 = h
        .taps()
        .iter()
        .enumerate()
        .map(|(i, t)| t.norm_sqr() * (n - i) as f64)
        .sum();
    Ok(total / n as f64)
}

/// Noise variance that puts the receive SNR `E_s / sigma2` at `snr_db`.
pub fn noise_from_snr(snr_db: f64, h: &ChannelRealization, n: usize) -> Result<f64> {
    if !snr_db.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "SNR {snr_db} dB is not finite"
        )));
    }
    Ok(signal_energy(h, n)? * 10f64.powf(-snr_db / 10.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::dft_matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<C64> {
        DVector::from_fn(n, |_, _| {
            c(rng.sample(StandardNormal), rng.sample(StandardNormal))
        })
    }

    fn mean_tap_powers(model: &ChannelModel, draws: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut acc = vec![0.0; model.len()];
        for _ in 0..draws {
            let h = sample_channel(model, &mut rng);
            for (a, t) in acc.iter_mut().zip(h.taps()) {
                *a += t.norm_sqr();
            }
        }
        acc.iter().map(|a| a / draws as f64).collect()
    }

    #[test]
    fn sui3_support_and_power_ratios() {
        let model = ChannelModel::sui3();
        assert_eq!(model.len(), 11);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let h = sample_channel(&model, &mut rng);
            for (i, t) in h.taps().iter().enumerate() {
                assert_eq!(*t != c(0.0, 0.0), [0, 4, 10].contains(&i), "tap {i}");
            }
        }
        let p = mean_tap_powers(&model, 100_000, 4);
        assert!((p[4] / p[0] / 10f64.powf(-0.5) - 1.0).abs() < 0.03);
        assert!((p[10] / p[0] / 0.1 - 1.0).abs() < 0.03);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 0.02);
    }

    #[test]
    fn single_tap_unit_mean_power() {
        let p = mean_tap_powers(&ChannelModel::single_tap(), 100_000, 5);
        assert!((p[0] - 1.0).abs() < 0.02);
    }

    #[test]
    fn exponential_profile_ratio() {
        let decay = 3.0;
        let model = ChannelModel::exponential(5, decay).unwrap();
        let p = mean_tap_powers(&model, 100_000, 6);
        let target = (-1.0 / decay).exp();
        for i in 0..4 {
            assert!((p[i + 1] / p[i] / target - 1.0).abs() < 0.05, "tap {i}");
        }
        assert!(ChannelModel::exponential(0, 1.0).is_err());
        assert!(ChannelModel::urban16(-1.0).is_err());
        assert_eq!(
            ChannelModel::urban16(URBAN16_DEFAULT_DECAY).unwrap().len(),
            16
        );
    }

    #[test]
    fn matrices_single_tap() {
        let h = ChannelRealization::new(vec![c(1.0, 0.0)]).unwrap();
        let m = build_matrices(&h, 4).unwrap();
        assert_eq!(m.c, DMatrix::identity(4, 4));
        assert_eq!(m.j, DMatrix::identity(4, 4));
        assert!(m.a.iter().all(|z| *z == c(0.0, 0.0)));
    }

    #[test]
    fn matrices_two_taps() {
        let (h0, h1) = (c(0.8, 0.1), c(-0.3, 0.4));
        let h = ChannelRealization::new(vec![h0, h1]).unwrap();
        let m = build_matrices(&h, 4).unwrap();
        for r in 0..4 {
            for col in 0..4 {
                let a_expect = if (r, col) == (0, 3) { h1 } else { c(0.0, 0.0) };
                assert_eq!(m.a[(r, col)], a_expect);
            }
            assert_eq!(m.c[(r, r)], h0);
            if r < 3 {
                assert_eq!(m.c[(r + 1, r)], h1);
            }
        }
        assert_eq!(m.c[(0, 3)], h1);
    }

    #[test]
    fn matrices_decomposition_and_band_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = ChannelModel::urban16(4.0).unwrap();
        for n in [16, 20, 64] {
            let h = sample_channel(&model, &mut rng);
            let m = build_matrices(&h, n).unwrap();
            assert_eq!(m.c, &m.a + &m.j);
            let i = h.len();
            let structural = (0..n)
                .flat_map(|r| (0..n).map(move |col| (r, col)))
                .filter(|&(r, col)| col > r && (r + n - col) % n < i)
                .count();
            assert_eq!(structural, i * (i - 1) / 2);
            assert_eq!(
                m.a.iter().filter(|z| **z != c(0.0, 0.0)).count(),
                structural
            );
            // J lower-banded
            for r in 0..n {
                for col in 0..n {
                    if col > r || r - col >= i {
                        assert_eq!(m.j[(r, col)], c(0.0, 0.0));
                    }
                }
            }
        }
        let long = ChannelRealization::new(vec![c(1.0, 0.0); 5]).unwrap();
        assert!(matches!(
            build_matrices(&long, 4),
            Err(Error::ChannelTooLong { .. })
        ));
    }

    #[test]
    fn convolution_matches_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = ChannelModel::sui3();
        for _ in 0..10 {
            let h = sample_channel(&model, &mut rng);
            let m = build_matrices(&h, 16).unwrap();
            let q = random_vec(&mut rng, 16);
            let qp = random_vec(&mut rng, 16);
            let y = convolve_block(&q, &qp, &h).unwrap();
            let expect = &m.j * &q + &m.a * &qp;
            assert!((y - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn apply_channel_identity_and_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let q = random_vec(&mut rng, 8);
        let one = ChannelRealization::new(vec![c(1.0, 0.0)]).unwrap();
        let y = apply_channel(&q, &random_vec(&mut rng, 8), &one, 0.0, &mut rng).unwrap();
        assert_eq!(y, q);

        let h = ChannelRealization::new(vec![c(0.7, 0.2), c(0.1, -0.5)]).unwrap();
        let zero = DVector::from_element(8, c(0.0, 0.0));
        let y = apply_channel(&q, &zero, &h, 0.0, &mut rng).unwrap();
        assert_eq!(y[0], h.taps()[0] * q[0]);
        assert!(apply_channel(&q, &zero, &h, -1.0, &mut rng).is_err());
    }

    #[test]
    fn circulant_diagonalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [8, 16, 32, 64] {
            let f = dft_matrix(n).unwrap();
            let taps = (0..(n / 4))
                .map(|_| c(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();
            let h = ChannelRealization::new(taps).unwrap();
            let m = build_matrices(&h, n).unwrap();
            let d = f.matrix() * &m.c * f.adjoint();
            let resp = h.frequency_response(n).unwrap();
            for r in 0..n {
                for col in 0..n {
                    let expect = if r == col { resp[r] } else { c(0.0, 0.0) };
                    assert!((d[(r, col)] - expect).norm() < 1e-9);
                }
            }
            // q_prev = q is the cyclic case
            let q = random_vec(&mut rng, n);
            let y = apply_channel(&q, &q, &h, 0.0, &mut rng).unwrap();
            let lhs = f.forward(&y);
            let rhs = f.forward(&q).component_mul(&resp);
            assert!((lhs - rhs).norm() < 1e-9);
        }
    }

    #[test]
    fn noise_from_snr_examples() {
        let one = ChannelRealization::new(vec![c(1.0, 0.0)]).unwrap();
        assert!((noise_from_snr(20.0, &one, 64).unwrap() - 0.01).abs() < 1e-15);
        let h = ChannelRealization::new(vec![c(0.6, 0.3), c(0.2, 0.1)]).unwrap();
        let es = signal_energy(&h, 64).unwrap();
        assert!((noise_from_snr(0.0, &h, 64).unwrap() - es).abs() < 1e-15);
        assert!((noise_from_snr(10.0, &h, 64).unwrap() - es / 10.0).abs() < 1e-15);
        assert!(noise_from_snr(f64::NAN, &h, 64).is_err());
    }

    #[test]
    fn empirical_receive_snr() {
        use crate::numerics::{Constellation, Modulation};
        let n = 64;
        let f = dft_matrix(n).unwrap();
        let cons = Constellation::new(Modulation::Qam16);
        let model = ChannelModel::urban16(4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let snr_db = 15.0;
        let zero = DVector::from_element(n, c(0.0, 0.0));
        let (mut sig, mut noise) = (0.0, 0.0);
        for _ in 0..10_000 {
            let h = sample_channel(&model, &mut rng);
            let u = DVector::from_fn(n, |_, _| cons.points()[rng.random_range(0..16)]);
            let s = convolve_block(&f.inverse(&u), &zero, &h).unwrap();
            let sigma2 = noise_from_snr(snr_db, &h, n).unwrap();
            let mut w = zero.clone();
            add_noise(&mut w, sigma2, &mut rng);
            sig += s.norm_squared();
            noise += w.norm_squared();
        }
        let measured = 10.0 * (sig / noise).log10();
        assert!((measured - snr_db).abs() < 0.2, "measured {measured}");
    }
}
