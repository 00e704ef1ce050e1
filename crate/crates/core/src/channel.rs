//! Rayleigh flat-fading channel with complex AWGN.
//!
//! SNR convention: `SNR = N_p * Es / sigma^2` with unit symbol energy `Es`,
//! i.e. the total transmit energy of one slot over the noise variance seen
//! by each receive antenna. Hence `sigma^2 = N_p / 10^(snr_db / 10)`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gsm::GsmConfig;
use crate::linalg::{ComplexMatrix, ComplexVector};

pub type SimRng = ChaCha8Rng;

/// Independent random sub-streams of one simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Bits = 1,
    Channel = 2,
    Noise = 3,
    Init = 4,
    Shuffle = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministically derives a generator from a base seed, a stream and a
/// path of indices (worker chunk, epoch, ...). Different paths or streams
/// give statistically independent generators.
pub fn derive_rng(seed: u64, stream: Stream, path: &[u64]) -> SimRng {
    let mut key = splitmix64(seed);
    for &p in path {
        key = splitmix64(key ^ splitmix64(p.wrapping_add(0x5851_f42d_4c95_7f2d)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(stream as u64);
    rng
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, std_per_dim: f64) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * std_per_dim, im * std_per_dim)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: ComplexMatrix,
    /// First word drawn from the generator that produced `h`.
    pub seed_tag: u64,
}

/// N_r x N_t matrix of i.i.d. CN(0, 1) entries.
pub fn sample_channel<R: Rng + ?Sized>(cfg: &GsmConfig, rng: &mut R) -> ChannelRealization {
    let seed_tag = rng.random::<u64>();
    let std = std::f64::consts::FRAC_1_SQRT_2;
    let h = ComplexMatrix::from_fn(cfg.n_rx(), cfg.n_tx(), |_, _| complex_gaussian(rng, std));
    ChannelRealization { h, seed_tag }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Total complex noise variance per receive antenna.
    pub sigma2: f64,
    pub snr_db: f64,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        NoiseSpec {
            sigma2: 0.0,
            snr_db: f64::INFINITY,
        }
    }

    pub fn from_sigma2(sigma2: f64, cfg: &GsmConfig) -> Self {
        let snr_db = if sigma2 == 0.0 {
            f64::INFINITY
        } else {
            10.0 * (cfg.n_active() as f64 / sigma2).log10()
        };
        NoiseSpec { sigma2, snr_db }
    }
}

/// `sigma^2 = N_p / 10^(snr_db/10)`. `+inf` dB gives the noiseless channel.
pub fn sigma2_from_snr(snr_db: f64, cfg: &GsmConfig) -> NoiseSpec {
    let sigma2 = cfg.n_active() as f64 / 10f64.powf(snr_db / 10.0);
    NoiseSpec { sigma2, snr_db }
}

/// `y = H x + n`.
pub fn transmit<R: Rng + ?Sized>(
    x: &[Complex64],
    channel: &ChannelRealization,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<ComplexVector> {
    if x.len() != channel.h.cols() {
        return Err(Error::DimensionMismatch {
            context: "transmit vector",
            expected: channel.h.cols(),
            actual: x.len(),
        });
    }
    let mut y = channel.h.mul_vec(x)?;
    if noise.sigma2 > 0.0 {
        let std = (noise.sigma2 / 2.0).sqrt();
        for v in &mut y {
            *v += complex_gaussian(rng, std);
        }
    }
    Ok(y)
}
