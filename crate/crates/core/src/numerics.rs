//! DFT operator, QAM constellations, complex-to-real embedding and the
//! scalar posterior-mean denoiser shared by every detector.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::C64;

/// Unitary N-point DFT matrix `F[j, k] = W^{jk} / sqrt(N)`, `W = exp(-j 2 pi / N)`.
///
/// `forward` applies `F`, `inverse` applies `F^H`, so an OFDM block is
/// `q = dft.inverse(u)`.
#[derive(Clone, Debug)]
pub struct DftOperator {
    n: usize,
    f: DMatrix<C64>,
    fh: DMatrix<C64>,
}

impl DftOperator {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("DFT size must be positive".into()));
        }
        let scale = 1.0 / (n as f64).sqrt();
        let f = DMatrix::from_fn(n, n, |j, k| {
            // Reduce the exponent first so large N keeps full phase precision.
            let e = (j * k) % n;
            C64::from_polar(scale, -2.0 * PI * e as f64 / n as f64)
        });
        let fh = f.adjoint();
        Ok(Self { n, f, fh })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.f
    }

    pub fn adjoint(&self) -> &DMatrix<C64> {
        &self.fh
    }

    /// `F x`: time domain to frequency domain.
    pub fn forward(&self, x: &DVector<C64>) -> DVector<C64> {
        &self.f * x
    }

    /// `F^H u`: frequency domain to time domain.
    pub fn inverse(&self, u: &DVector<C64>) -> DVector<C64> {
        &self.fh * u
    }
}

/// Builds the unitary DFT operator of size `n`.
pub fn dft_matrix(n: usize) -> Result<DftOperator> {
    DftOperator::new(n)
}

/// Square QAM order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modulation {
    Qpsk,
    Qam16,
    Qam64,
}

impl Modulation {
    pub fn order(self) -> usize {
        match self {
            Modulation::Qpsk => 4,
            Modulation::Qam16 => 16,
            Modulation::Qam64 => 64,
        }
    }

    pub fn bits_per_symbol(self) -> usize {
        self.order().trailing_zeros() as usize
    }
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modulation::Qpsk => "qpsk",
            Modulation::Qam16 => "qam16",
            Modulation::Qam64 => "qam64",
        })
    }
}

impl FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "qpsk" | "qam4" | "4" => Ok(Modulation::Qpsk),
            "qam16" | "16qam" | "16" => Ok(Modulation::Qam16),
            "qam64" | "64qam" | "64" => Ok(Modulation::Qam64),
            other => Err(Error::Config(format!("unknown modulation `{other}`"))),
        }
    }
}

/// Gray-mapped square QAM with unit average energy.
///
/// Each symbol carries `log2(M)` bits, MSB first. The first half selects the
/// in-phase level, the second half the quadrature level. Per axis the
/// `sqrt(M)` PAM levels, listed from most positive to most negative, carry the
/// reflected Gray codes `0, 1, 3, 2, 6, 7, 5, 4, ...`:
///
/// | 16-QAM axis bits | level        |
/// |------------------|--------------|
/// | `00`             | `+3 / sqrt(10)` |
/// | `01`             | `+1 / sqrt(10)` |
/// | `11`             | `-1 / sqrt(10)` |
/// | `10`             | `-3 / sqrt(10)` |
///
/// QPSK bits `00` therefore map to `(1 + j) / sqrt(2)`.
#[derive(Clone, Debug)]
pub struct Constellation {
    modulation: Modulation,
    side: usize,
    axis_bits: usize,
    scale: f64,
    /// Ascending per-axis alphabet.
    alphabet: Vec<f64>,
    /// Gray code carried by ascending alphabet index.
    alphabet_codes: Vec<usize>,
    /// Level index (ascending) for each axis code.
    code_to_index: Vec<usize>,
    points: Vec<C64>,
}

fn gray(i: usize) -> usize {
    i ^ (i >> 1)
}

impl Constellation {
    pub fn new(modulation: Modulation) -> Self {
        let m = modulation.order();
        let side = (m as f64).sqrt().round() as usize;
        let axis_bits = modulation.bits_per_symbol() / 2;
        // Mean energy of the odd-integer grid is 2(M-1)/3.
        let scale = (3.0 / (2.0 * (m as f64 - 1.0))).sqrt();
        let alphabet: Vec<f64> = (0..side)
            .map(|k| (2.0 * k as f64 - (side as f64 - 1.0)) * scale)
            .collect();
        // Descending rank i = side-1-k carries gray(i).
        let alphabet_codes: Vec<usize> = (0..side).map(|k| gray(side - 1 - k)).collect();
        let mut code_to_index = vec![0; side];
        for (k, &code) in alphabet_codes.iter().enumerate() {
            code_to_index[code] = k;
        }
        let points = (0..m)
            .map(|sym| {
                let re = alphabet[code_to_index[sym >> axis_bits]];
                let im = alphabet[code_to_index[sym & (side - 1)]];
                C64::new(re, im)
            })
            .collect();
        Self {
            modulation,
            side,
            axis_bits,
            scale,
            alphabet,
            alphabet_codes,
            code_to_index,
            points,
        }
    }

    pub fn modulation(&self) -> Modulation {
        self.modulation
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn bits_per_symbol(&self) -> usize {
        2 * self.axis_bits
    }

    /// Constellation points indexed by the integer value of their bit label.
    pub fn points(&self) -> &[C64] {
        &self.points
    }

    /// Real per-axis alphabet in ascending order.
    pub fn real_alphabet(&self) -> &[f64] {
        &self.alphabet
    }

    /// Index of the alphabet level nearest to `x`; ties go to the smaller value.
    pub fn nearest_level(&self, x: f64) -> usize {
        let t = (x / self.scale + (self.side as f64 - 1.0)) / 2.0;
        let k = (t - 0.5).ceil();
        if k.is_nan() || k <= 0.0 {
            0
        } else {
            (k as usize).min(self.side - 1)
        }
    }

    /// Hard decision of one real dimension onto the alphabet.
    pub fn slice(&self, x: f64) -> f64 {
        self.alphabet[self.nearest_level(x)]
    }

    /// Hard decision of a complex sample onto the constellation.
    pub fn slice_symbol(&self, z: C64) -> C64 {
        C64::new(self.slice(z.re), self.slice(z.im))
    }

    /// Maps bits to symbols.
    pub fn modulate(&self, bits: &[u8]) -> Result<Vec<C64>> {
        let k = self.bits_per_symbol();
        if !bits.len().is_multiple_of(k) {
            return Err(Error::DimensionMismatch {
                what: "bit vector (multiple of bits per symbol)",
                expected: bits.len().div_ceil(k) * k,
                found: bits.len(),
            });
        }
        if let Some((index, &value)) = bits.iter().enumerate().find(|(_, &b)| b > 1) {
            return Err(Error::InvalidBit { index, value });
        }
        Ok(bits
            .chunks_exact(k)
            .map(|group| {
                let label = group.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
                self.points[label]
            })
            .collect())
    }

    /// Hard-decision demapping of complex samples.
    pub fn demodulate(&self, symbols: &[C64]) -> Vec<u8> {
        let mut bits = Vec::with_capacity(symbols.len() * self.bits_per_symbol());
        for z in symbols {
            self.push_axis_bits(z.re, &mut bits);
            self.push_axis_bits(z.im, &mut bits);
        }
        bits
    }

    /// Hard-decision demapping of a real-form estimate `[Re u; Im u]`.
    pub fn demodulate_real(&self, stacked: &DVector<f64>) -> Vec<u8> {
        let k = stacked.len() / 2;
        let mut bits = Vec::with_capacity(k * self.bits_per_symbol());
        for n in 0..k {
            self.push_axis_bits(stacked[n], &mut bits);
            self.push_axis_bits(stacked[k + n], &mut bits);
        }
        bits
    }

    fn push_axis_bits(&self, x: f64, out: &mut Vec<u8>) {
        let code = self.alphabet_codes[self.nearest_level(x)];
        for b in (0..self.axis_bits).rev() {
            out.push(((code >> b) & 1) as u8);
        }
    }

    /// True when `x` equals an alphabet level to within `tol`.
    pub fn on_grid(&self, x: f64, tol: f64) -> bool {
        self.alphabet.iter().any(|a| (a - x).abs() <= tol)
    }

    #[doc(hidden)]
    pub fn level_for_code(&self, code: usize) -> f64 {
        self.alphabet[self.code_to_index[code]]
    }
}

/// Real-valued linear model `y = H u + w` obtained from a complex one.
///
/// `h` has the block form `[[Re H, -Im H], [Im H, Re H]]`, `y = [Re y; Im y]`.
/// `sigma2` is the complex noise variance; each real dimension carries half
/// of it.
#[derive(Clone, Debug)]
pub struct RealLinearSystem {
    pub y: DVector<f64>,
    pub h: DMatrix<f64>,
    pub sigma2: f64,
}

impl RealLinearSystem {
    pub fn new(y: DVector<f64>, h: DMatrix<f64>, sigma2: f64) -> Result<Self> {
        check_len("observation rows", h.nrows(), y.len())?;
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise power must be finite and >= 0, got {sigma2}"
            )));
        }
        Ok(Self { y, h, sigma2 })
    }

    /// Observation dimension (`2N` for a full OFDM block).
    pub fn rows(&self) -> usize {
        self.h.nrows()
    }

    /// Unknown dimension.
    pub fn cols(&self) -> usize {
        self.h.ncols()
    }
}

/// `[[Re H, -Im H], [Im H, Re H]]`.
pub fn embed_matrix(h: &DMatrix<C64>) -> DMatrix<f64> {
    let (m, k) = h.shape();
    DMatrix::from_fn(2 * m, 2 * k, |i, j| {
        let z = h[(i % m, j % k)];
        match (i < m, j < k) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

/// `[Re v; Im v]`.
pub fn stack_real(v: &DVector<C64>) -> DVector<f64> {
    let n = v.len();
    DVector::from_fn(2 * n, |i, _| if i < n { v[i].re } else { v[i - n].im })
}

/// Inverse of [`stack_real`].
pub fn unstack_real(v: &DVector<f64>) -> DVector<C64> {
    let n = v.len() / 2;
    DVector::from_fn(n, |i, _| C64::new(v[i], v[n + i]))
}

/// Converts a complex model `y = H u + w` into its real-valued form.
pub fn real_decompose(h: &DMatrix<C64>, y: &DVector<C64>, sigma2: f64) -> Result<RealLinearSystem> {
    check_len("observation length", h.nrows(), y.len())?;
    RealLinearSystem::new(stack_real(y), embed_matrix(h), sigma2)
}

/// Posterior mean `E{u | r}` of a uniform prior on `alphabet` observed through
/// real Gaussian noise of variance `tau2`.
///
/// Evaluated in the log domain so that `tau2` down to the detector floor does
/// not underflow.
pub fn posterior_mean(r: f64, tau2: f64, alphabet: &[f64]) -> Result<f64> {
    if !(tau2 > 0.0) {
        return Err(Error::NonPositiveVariance(tau2));
    }
    Ok(posterior_mean_unchecked(r, tau2, alphabet))
}

#[inline]
pub(crate) fn posterior_mean_unchecked(r: f64, tau2: f64, alphabet: &[f64]) -> f64 {
    let inv = 0.5 / tau2;
    let max_exp = alphabet
        .iter()
        .map(|a| -(a - r) * (a - r) * inv)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0;
    let mut den = 0.0;
    for a in alphabet {
        let w = (-(a - r) * (a - r) * inv - max_exp).exp();
        num += a * w;
        den += w;
    }
    num / den
}

/// Element-wise [`posterior_mean`].
pub fn posterior_mean_vec(r: &DVector<f64>, tau2: f64, alphabet: &[f64]) -> Result<DVector<f64>> {
    if !(tau2 > 0.0) {
        return Err(Error::NonPositiveVariance(tau2));
    }
    Ok(r.map(|x| posterior_mean_unchecked(x, tau2, alphabet)))
}
