//! Frame construction, pilot layouts and the one-tap OFDM baseline
//! receivers.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{add_noise, circular_convolve, ChannelRealization};
use crate::error::{check_len, Error, Result};
use crate::numerics::{Constellation, DftOperator, Modulation};
use crate::C64;

/// Seed of the fixed QPSK pilot sequence. Subcarrier `k` carries element `k`.
pub const PILOT_SEED: u64 = 0x5EED_F00D;

/// Subcarrier spacing of comb pilots.
pub const COMB_STRIDE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PilotArrangement {
    /// One all-pilot block followed by one data block per frame.
    Continuous,
    /// Pilots on subcarriers `0, 4, 8, ...` of every block, data elsewhere.
    Comb,
}

impl fmt::Display for PilotArrangement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PilotArrangement::Continuous => "continuous",
            PilotArrangement::Comb => "comb16",
        })
    }
}

impl FromStr for PilotArrangement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "continuous" | "block" | "64" => Ok(PilotArrangement::Continuous),
            "comb16" | "comb" | "16" => Ok(PilotArrangement::Comb),
            other => Err(Error::Config(format!(
                "unknown pilot arrangement `{other}`"
            ))),
        }
    }
}

/// Pilot positions and the known pilot symbols `X_p`.
#[derive(Clone, Debug)]
pub struct PilotPattern {
    arrangement: PilotArrangement,
    n: usize,
    pilot_indices: Vec<usize>,
    data_indices: Vec<usize>,
    sequence: Vec<C64>,
}

impl PilotPattern {
    pub fn new(arrangement: PilotArrangement, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("block size must be positive".into()));
        }
        let qpsk = Constellation::new(Modulation::Qpsk);
        let mut rng = ChaCha8Rng::seed_from_u64(PILOT_SEED);
        let sequence = (0..n)
            .map(|_| qpsk.points()[rng.random_range(0..4)])
            .collect();
        let (pilot_indices, data_indices) = match arrangement {
            PilotArrangement::Continuous => ((0..n).collect(), (0..n).collect()),
            PilotArrangement::Comb => {
                if n < COMB_STRIDE {
                    return Err(Error::InvalidArgument(format!(
                        "comb pilots need N >= {COMB_STRIDE}"
                    )));
                }
                (0..n).partition(|k| k % COMB_STRIDE == 0)
            }
        };
        Ok(Self {
            arrangement,
            n,
            pilot_indices,
            data_indices,
            sequence,
        })
    }

    pub fn arrangement(&self) -> PilotArrangement {
        self.arrangement
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn pilot_indices(&self) -> &[usize] {
        &self.pilot_indices
    }

    /// Subcarriers carrying payload within a data block.
    pub fn data_indices(&self) -> &[usize] {
        &self.data_indices
    }

    /// Pilot symbol carried by subcarrier `k`.
    pub fn pilot_symbol(&self, k: usize) -> C64 {
        self.sequence[k]
    }

    /// Pilot symbols at [`Self::pilot_indices`].
    pub fn pilot_symbols(&self) -> Vec<C64> {
        self.pilot_indices
            .iter()
            .map(|&k| self.sequence[k])
            .collect()
    }

    /// Payload bits carried by one data block.
    pub fn block_capacity(&self, c: &Constellation) -> usize {
        self.data_indices.len() * c.bits_per_symbol()
    }

    /// Fraction of transmitted resources carrying payload.
    pub fn spectral_efficiency_ratio(&self) -> f64 {
        match self.arrangement {
            PilotArrangement::Continuous => 0.5,
            PilotArrangement::Comb => self.data_indices.len() as f64 / self.n as f64,
        }
    }
}

/// One OFDM block: frequency symbols `u` and time signal `q = F^H u`.
#[derive(Clone, Debug, PartialEq)]
pub struct OfdmBlock {
    pub symbols: DVector<C64>,
    pub signal: DVector<C64>,
}

impl OfdmBlock {
    pub fn from_symbols(symbols: DVector<C64>, dft: &DftOperator) -> Self {
        let signal = dft.inverse(&symbols);
        Self { symbols, signal }
    }
}

/// Transmitted frame. No cyclic prefix is added anywhere.
///
/// Continuous pilots: `blocks = [pilot, data]`. Comb pilots: every block is a
/// data block with embedded pilots.
#[derive(Clone, Debug)]
pub struct Frame {
    pub arrangement: PilotArrangement,
    pub bits: Vec<u8>,
    pub blocks: Vec<OfdmBlock>,
}

impl Frame {
    /// Index of the first block carrying payload.
    pub fn first_data_block(&self) -> usize {
        match self.arrangement {
            PilotArrangement::Continuous => 1,
            PilotArrangement::Comb => 0,
        }
    }

    pub fn data_blocks(&self) -> &[OfdmBlock] {
        &self.blocks[self.first_data_block()..]
    }

    /// Frequency symbols `u` of the last data block.
    pub fn u(&self) -> &DVector<C64> {
        &self.blocks[self.blocks.len() - 1].symbols
    }

    /// Time signal `q` of the last data block.
    pub fn q(&self) -> &DVector<C64> {
        &self.blocks[self.blocks.len() - 1].signal
    }

    /// Time signal of the block preceding the last data block, if any.
    pub fn q_prev(&self) -> Option<&DVector<C64>> {
        let n = self.blocks.len();
        (n >= 2).then(|| &self.blocks[n - 2].signal)
    }
}

/// Maps `bits` onto a frame.
///
/// Continuous pilots need exactly `N log2 M` bits; comb pilots need a
/// positive multiple of `(N - N/4) log2 M`, one block per multiple.
pub fn build_frame(
    bits: &[u8],
    pattern: &PilotPattern,
    c: &Constellation,
    dft: &DftOperator,
) -> Result<Frame> {
    let n = pattern.size();
    check_len("DFT size", n, dft.size())?;
    let cap = pattern.block_capacity(c);
    let symbols = c.modulate(bits)?;
    let frame = match pattern.arrangement() {
        PilotArrangement::Continuous => {
            check_len("frame payload bits", cap, bits.len())?;
            let pilot = DVector::from_iterator(n, (0..n).map(|k| pattern.pilot_symbol(k)));
            vec![
                OfdmBlock::from_symbols(pilot, dft),
                OfdmBlock::from_symbols(DVector::from_vec(symbols), dft),
            ]
        }
        PilotArrangement::Comb => {
            if bits.is_empty() || !bits.len().is_multiple_of(cap) {
                return Err(Error::DimensionMismatch {
                    what: "frame payload bits (multiple of block capacity)",
                    expected: cap * bits.len().div_ceil(cap).max(1),
                    found: bits.len(),
                });
            }
            let per_block = pattern.data_indices().len();
            symbols
                .chunks(per_block)
                .map(|chunk| {
                    let mut u = DVector::from_element(n, C64::new(0.0, 0.0));
                    for &k in pattern.pilot_indices() {
                        u[k] = pattern.pilot_symbol(k);
                    }
                    for (&k, &s) in pattern.data_indices().iter().zip(chunk) {
                        u[k] = s;
                    }
                    OfdmBlock::from_symbols(u, dft)
                })
                .collect()
        }
    };
    Ok(Frame {
        arrangement: pattern.arrangement(),
        bits: bits.to_vec(),
        blocks: frame,
    })
}

/// Output of a one-tap equalizer.
#[derive(Clone, Debug, PartialEq)]
pub struct OfdmDecision {
    pub bits: Vec<u8>,
    pub symbols: Vec<C64>,
    /// Subcarriers whose channel estimate was zero or non-finite.
    pub erased: usize,
}

/// One-tap equalization `Y_D(n) / H(n)` followed by nearest-point decisions.
///
/// A subcarrier with a zero or non-finite estimate is erased: its equalized
/// value is taken as `0`, which the slicer resolves with its fixed tie rule.
pub fn ls_ofdm_detect(y_d: &[C64], h_hat: &[C64], c: &Constellation) -> Result<OfdmDecision> {
    check_len("channel estimate", y_d.len(), h_hat.len())?;
    let mut erased = 0;
    let symbols: Vec<C64> = y_d
        .iter()
        .zip(h_hat)
        .map(|(y, h)| {
            let z = y / h;
            if h.norm_sqr() == 0.0 || !z.re.is_finite() || !z.im.is_finite() {
                erased += 1;
                c.slice_symbol(C64::new(0.0, 0.0))
            } else {
                c.slice_symbol(z)
            }
        })
        .collect();
    Ok(OfdmDecision {
        bits: c.demodulate(&symbols),
        symbols,
        erased,
    })
}

/// Per-subcarrier ML detection of a CP-OFDM block with perfect CSI.
///
/// With a sufficient prefix the channel is diagonal in frequency, so joint ML
/// factorizes into nearest-point decisions on `Y(n) / H(n)`.
pub fn ml_lowbound_detect(y_freq: &[C64], h_true: &[C64], c: &Constellation) -> Result<Vec<u8>> {
    Ok(ls_ofdm_detect(y_freq, h_true, c)?.bits)
}

/// CP-mode transmission: `C q + w`. Only used for oracle tests and the
/// LowBound reference.
pub fn transmit_with_cp<R: Rng + ?Sized>(
    q: &DVector<C64>,
    h: &ChannelRealization,
    sigma2: f64,
    rng: &mut R,
) -> Result<DVector<C64>> {
    let mut y = circular_convolve(q, h)?;
    add_noise(&mut y, sigma2, rng);
    Ok(y)
}

pub fn bit_errors(sent: &[u8], decided: &[u8]) -> Result<usize> {
    check_len("decided bits", sent.len(), decided.len())?;
    Ok(sent.iter().zip(decided).filter(|(a, b)| a != b).count())
}

/// Fraction of differing bits.
pub fn ber(sent: &[u8], decided: &[u8]) -> Result<f64> {
    let errors = bit_errors(sent, decided)?;
    if sent.is_empty() {
        return Err(Error::InvalidArgument("empty bit vectors".into()));
    }
    Ok(errors as f64 / sent.len() as f64)
}
