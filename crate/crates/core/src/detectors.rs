//! Conventional GSM detectors: exhaustive ML, plain ZF/MMSE estimates and
//! the block-linear B-ZF / B-MMSE detectors.
//!
//! All ties are broken towards the lexicographically smallest
//! `(tac_index, symbol indices)` candidate, which makes every detector
//! bit-reproducible.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::channel::NoiseSpec;
use crate::error::{Error, Result};
use crate::gsm::{Constellation, GsmConfig};
use crate::linalg::{norm_sqr, Cholesky, ComplexMatrix, ComplexVector};

/// Relative singular-value / pivot threshold below which a normal matrix is
/// treated as singular.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub tac_index: usize,
    pub symbols: Vec<usize>,
    pub bits: Vec<u8>,
    /// `||y - H_I s||^2` of the returned candidate.
    pub metric: f64,
}

impl DetectionResult {
    pub(crate) fn new(cfg: &GsmConfig, tac_index: usize, symbols: Vec<usize>, metric: f64) -> Self {
        let bits = cfg
            .demap_bits(tac_index, &symbols)
            .expect("detector produced an in-range candidate");
        DetectionResult {
            tac_index,
            symbols,
            bits,
            metric,
        }
    }
}

/// Anything that turns one received slot into decoded bits.
pub trait Detector: Sync {
    fn name(&self) -> &str;

    fn detect(&self, y: &[Complex64], h: &ComplexMatrix, noise: &NoiseSpec) -> Result<DetectionResult>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DetectorKind {
    Ml,
    BlockZf,
    BlockMmse,
    BlockDnn,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 4] = [
        DetectorKind::Ml,
        DetectorKind::BlockZf,
        DetectorKind::BlockMmse,
        DetectorKind::BlockDnn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Ml => "ML",
            DetectorKind::BlockZf => "B-ZF",
            DetectorKind::BlockMmse => "B-MMSE",
            DetectorKind::BlockDnn => "B-DNN",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_'))
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "ml" => Ok(DetectorKind::Ml),
            "bzf" => Ok(DetectorKind::BlockZf),
            "bmmse" => Ok(DetectorKind::BlockMmse),
            "bdnn" => Ok(DetectorKind::BlockDnn),
            _ => Err(Error::UnknownDetector {
                name: s.to_string(),
                valid: DetectorKind::ALL.map(|k| k.as_str()).join(", "),
            }),
        }
    }
}

/// `||y - H_I s||^2` for one candidate.
pub fn candidate_metric(
    y: &[Complex64],
    h: &ComplexMatrix,
    cfg: &GsmConfig,
    tac_index: usize,
    symbols: &[usize],
) -> f64 {
    let tac = &cfg.tacs()[tac_index];
    let c = cfg.constellation();
    (0..h.rows())
        .map(|r| {
            let mut v = y[r];
            for (&a, &s) in tac.iter().zip(symbols) {
                v -= h[(r, a)] * c.point(s);
            }
            v.norm_sqr()
        })
        .sum()
}

/// Exhaustive maximum-likelihood search over all `N * M^N_p` candidates.
///
/// Outer loop over TACs in table order, inner mixed-radix loop over symbol
/// indices with the partial residual of each antenna level cached.
pub fn ml_detect(y: &[Complex64], h: &ComplexMatrix, cfg: &GsmConfig) -> DetectionResult {
    let nr = cfg.n_rx();
    let np = cfg.n_active();
    let m = cfg.mod_order();
    let points = cfg.constellation().points();
    let zero = Complex64::new(0.0, 0.0);

    let mut contrib = vec![zero; np * m * nr];
    let mut residual = vec![zero; (np + 1) * nr];
    let mut idx = vec![0usize; np];
    let mut best = (f64::INFINITY, 0usize, vec![0usize; np]);

    for (t, tac) in cfg.tacs().iter().enumerate() {
        for (k, &antenna) in tac.iter().enumerate() {
            for (s, p) in points.iter().enumerate() {
                let base = (k * m + s) * nr;
                for r in 0..nr {
                    contrib[base + r] = h[(r, antenna)] * p;
                }
            }
        }
        residual[..nr].copy_from_slice(&y[..nr]);
        idx.fill(0);
        let mut from = 0;
        loop {
            for k in from..np {
                let c = (k * m + idx[k]) * nr;
                for r in 0..nr {
                    residual[(k + 1) * nr + r] = residual[k * nr + r] - contrib[c + r];
                }
            }
            let metric = norm_sqr(&residual[np * nr..]);
            if metric < best.0 {
                best.0 = metric;
                best.1 = t;
                best.2.copy_from_slice(&idx);
            }
            // Mixed-radix increment; `from` is the highest level that changed.
            let mut k = np;
            loop {
                if k == 0 {
                    break;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < m {
                    break;
                }
                idx[k] = 0;
            }
            if idx.iter().all(|&i| i == 0) {
                break;
            }
            from = k;
        }
    }
    DetectionResult::new(cfg, best.1, best.2, best.0)
}

fn to_nalgebra(m: &ComplexMatrix) -> DMatrix<Complex64> {
    DMatrix::from_fn(m.rows(), m.cols(), |r, c| m[(r, c)])
}

/// Plain zero-forcing estimate `(H^H H)^-1 H^H y` over all `N_t` antennas.
///
/// Only usable when `N_r >= N_t`; otherwise the normal matrix is singular
/// and [`Error::RankDeficient`] is returned.
pub fn zf_estimate(y: &[Complex64], h: &ComplexMatrix) -> Result<ComplexVector> {
    let gram = h.gram();
    let sv = to_nalgebra(&gram).singular_values();
    let max = sv.max();
    let min = sv.min();
    let ratio = if max > 0.0 { min / max } else { 0.0 };
    if !(ratio >= RANK_TOLERANCE) {
        return Err(Error::RankDeficient { ratio });
    }
    let rhs = h.adjoint_mul_vec(y)?;
    let chol = Cholesky::factor(&gram, 0.0).ok_or(Error::RankDeficient { ratio })?;
    Ok(chol.solve(&rhs))
}

/// Regularized estimate `(H^H H + sigma^2 I)^-1 H^H y`; `sigma2 == 0`
/// falls back to [`zf_estimate`].
pub fn mmse_estimate(y: &[Complex64], h: &ComplexMatrix, sigma2: f64) -> Result<ComplexVector> {
    if sigma2 < 0.0 || !sigma2.is_finite() {
        return Err(Error::invalid(format!("noise variance must be finite and >= 0, got {sigma2}")));
    }
    if sigma2 == 0.0 {
        return zf_estimate(y, h);
    }
    let mut gram = h.gram();
    for i in 0..gram.rows() {
        gram[(i, i)] += sigma2;
    }
    let rhs = h.adjoint_mul_vec(y)?;
    let chol = Cholesky::factor(&gram, 0.0).ok_or(Error::RankDeficient { ratio: 0.0 })?;
    Ok(chol.solve(&rhs))
}

/// Nearest constellation point per entry; ties go to the lowest index.
pub fn quantize_symbols(s_hat: &[Complex64], constellation: &Constellation) -> Vec<usize> {
    s_hat
        .iter()
        .map(|z| {
            let mut best = (f64::INFINITY, 0);
            for (i, p) in constellation.points().iter().enumerate() {
                let d = (z - p).norm_sqr();
                if d < best.0 {
                    best = (d, i);
                }
            }
            best.1
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearVariant {
    Zf,
    Mmse,
}

/// Per-TAC linear estimates `s_I` restricted to the columns of `H_I`.
/// `None` marks a TAC whose normal matrix is numerically singular.
pub fn block_linear_estimates(
    y: &[Complex64],
    h: &ComplexMatrix,
    sigma2: f64,
    cfg: &GsmConfig,
    variant: LinearVariant,
) -> Vec<Option<ComplexVector>> {
    let np = cfg.n_active();
    let nr = cfg.n_rx();
    let loading = match variant {
        LinearVariant::Zf => 0.0,
        LinearVariant::Mmse => sigma2,
    };
    let tol = if loading > 0.0 { 0.0 } else { RANK_TOLERANCE };
    let mut gram = ComplexMatrix::zeros(np, np);
    let mut rhs = vec![Complex64::new(0.0, 0.0); np];
    cfg.tacs()
        .iter()
        .map(|tac| {
            for i in 0..np {
                let ci = tac[i];
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..nr {
                    acc += h[(r, ci)].conj() * y[r];
                }
                rhs[i] = acc;
                for j in i..np {
                    let cj = tac[j];
                    let mut g = Complex64::new(0.0, 0.0);
                    for r in 0..nr {
                        g += h[(r, ci)].conj() * h[(r, cj)];
                    }
                    gram[(i, j)] = g;
                    gram[(j, i)] = g.conj();
                }
                gram[(i, i)] += loading;
            }
            Cholesky::factor(&gram, tol).map(|c| c.solve(&rhs))
        })
        .collect()
}

/// Block-linear detection: per-TAC ZF/MMSE estimate, quantization to the
/// constellation, then the TAC with the smallest quantized residual.
pub fn block_linear_detect(
    y: &[Complex64],
    h: &ComplexMatrix,
    sigma2: f64,
    cfg: &GsmConfig,
    variant: LinearVariant,
) -> Result<DetectionResult> {
    let estimates = block_linear_estimates(y, h, sigma2, cfg, variant);
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    for (t, est) in estimates.iter().enumerate() {
        let Some(s_hat) = est else { continue };
        let symbols = quantize_symbols(s_hat, cfg.constellation());
        let metric = candidate_metric(y, h, cfg, t, &symbols);
        if best.as_ref().is_none_or(|b| metric < b.0) {
            best = Some((metric, t, symbols));
        }
    }
    let (metric, t, symbols) = best.ok_or(Error::AllCandidatesExcluded)?;
    Ok(DetectionResult::new(cfg, t, symbols, metric))
}

#[derive(Debug, Clone)]
pub struct MlDetector {
    cfg: GsmConfig,
}

impl MlDetector {
    pub fn new(cfg: &GsmConfig) -> Self {
        MlDetector { cfg: cfg.clone() }
    }
}

impl Detector for MlDetector {
    fn name(&self) -> &str {
        DetectorKind::Ml.as_str()
    }

    fn detect(&self, y: &[Complex64], h: &ComplexMatrix, _noise: &NoiseSpec) -> Result<DetectionResult> {
        Ok(ml_detect(y, h, &self.cfg))
    }
}

#[derive(Debug, Clone)]
pub struct BlockLinearDetector {
    cfg: GsmConfig,
    variant: LinearVariant,
}

impl BlockLinearDetector {
    pub fn new(cfg: &GsmConfig, variant: LinearVariant) -> Self {
        BlockLinearDetector {
            cfg: cfg.clone(),
            variant,
        }
    }
}

impl Detector for BlockLinearDetector {
    fn name(&self) -> &str {
        match self.variant {
            LinearVariant::Zf => DetectorKind::BlockZf.as_str(),
            LinearVariant::Mmse => DetectorKind::BlockMmse.as_str(),
        }
    }

    fn detect(&self, y: &[Complex64], h: &ComplexMatrix, noise: &NoiseSpec) -> Result<DetectionResult> {
        block_linear_detect(y, h, noise.sigma2, &self.cfg, self.variant)
    }
}
