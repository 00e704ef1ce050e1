//! Monte Carlo BER sweeps, detection timing and MAC complexity counts.
//!
//! Every detector decodes the same `(bits, H, noise)` draw of each slot.
//! Slots are grouped into fixed chunks with their own derived generators,
//! so results do not depend on how many worker threads run them. Timing
//! covers detection calls only; channel generation and training are
//! excluded.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use crate::channel::{derive_rng, sample_channel, sigma2_from_snr, transmit, Stream};
use crate::detectors::{Detector, DetectorKind};
use crate::error::{Error, Result};
use crate::gsm::GsmConfig;

/// Slots per independently seeded work unit.
pub const CHUNK_SLOTS: usize = 256;

pub const BER_CSV_HEADER: &str = "detector,snr_db,slots,bits,errors,ber,stderr,elapsed_ns,seed";
pub const MAC_CSV_HEADER: &str = "detector,mac";

#[derive(Debug, Clone, PartialEq)]
pub struct BerRecord {
    pub detector: String,
    pub snr_db: f64,
    pub slots: u64,
    pub bits: u64,
    pub errors: u64,
    pub ber: f64,
    pub elapsed_ns: u64,
    pub seed: u64,
}

impl BerRecord {
    /// Binomial standard error `sqrt(p (1 - p) / bits)`.
    pub fn stderr(&self) -> f64 {
        (self.ber * (1.0 - self.ber) / self.bits as f64).sqrt()
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.detector,
            self.snr_db,
            self.slots,
            self.bits,
            self.errors,
            self.ber,
            self.stderr(),
            self.elapsed_ns,
            self.seed
        )
    }
}

/// Bit-level discordance between two detectors on the same slots.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub snr_db: f64,
    pub first: String,
    pub second: String,
    pub bits: u64,
    /// Bits wrong for `first` only.
    pub first_only: u64,
    /// Bits wrong for `second` only.
    pub second_only: u64,
}

impl PairRecord {
    /// Standard error of `BER(first) - BER(second)` under paired sampling.
    pub fn stderr(&self) -> f64 {
        let n = self.bits as f64;
        let d = (self.first_only as f64 - self.second_only as f64) / n;
        let disc = (self.first_only + self.second_only) as f64 / n;
        ((disc - d * d).max(0.0) / n).sqrt()
    }

    /// `BER(first) - BER(second)`.
    pub fn difference(&self) -> f64 {
        (self.first_only as f64 - self.second_only as f64) / self.bits as f64
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// SNR-major, then detector order.
    pub records: Vec<BerRecord>,
    /// Every unordered detector pair at every SNR.
    pub pairs: Vec<PairRecord>,
}

impl SweepOutcome {
    pub fn record(&self, detector: &str, snr_db: f64) -> Option<&BerRecord> {
        self.records
            .iter()
            .find(|r| r.detector == detector && r.snr_db == snr_db)
    }

    /// Pair record oriented as `(first, second)`.
    pub fn pair(&self, first: &str, second: &str, snr_db: f64) -> Option<PairRecord> {
        self.pairs.iter().find(|p| p.snr_db == snr_db).and_then(|_| {
            self.pairs.iter().find_map(|p| {
                if p.snr_db != snr_db {
                    None
                } else if p.first == first && p.second == second {
                    Some(p.clone())
                } else if p.first == second && p.second == first {
                    Some(PairRecord {
                        first: first.to_string(),
                        second: second.to_string(),
                        first_only: p.second_only,
                        second_only: p.first_only,
                        ..p.clone()
                    })
                } else {
                    None
                }
            })
        })
    }
}

#[derive(Debug, Clone, Default)]
struct Tally {
    errors: Vec<u64>,
    elapsed_ns: Vec<u64>,
    /// `[i][j]`: bits wrong for detector i but right for j.
    exclusive: Vec<Vec<u64>>,
}

impl Tally {
    fn new(n: usize) -> Self {
        Tally {
            errors: vec![0; n],
            elapsed_ns: vec![0; n],
            exclusive: vec![vec![0; n]; n],
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        for (a, b) in self.errors.iter_mut().zip(other.errors) {
            *a += b;
        }
        for (a, b) in self.elapsed_ns.iter_mut().zip(other.elapsed_ns) {
            *a += b;
        }
        for (ra, rb) in self.exclusive.iter_mut().zip(other.exclusive) {
            for (a, b) in ra.iter_mut().zip(rb) {
                *a += b;
            }
        }
        self
    }
}

fn run_chunk(
    cfg: &GsmConfig,
    detectors: &[&dyn Detector],
    snr_db: f64,
    seed: u64,
    chunk: u64,
    slots: usize,
) -> Result<Tally> {
    let noise = sigma2_from_snr(snr_db, cfg);
    let mut bit_rng = derive_rng(seed, Stream::Bits, &[chunk]);
    let mut chan_rng = derive_rng(seed, Stream::Channel, &[chunk]);
    let mut noise_rng = derive_rng(seed, Stream::Noise, &[chunk]);
    let n = detectors.len();
    let mut tally = Tally::new(n);
    let b = cfg.bits_per_slot();
    let mut wrong = vec![vec![false; b]; n];
    for _ in 0..slots {
        let block = cfg.random_block(&mut bit_rng);
        let ch = sample_channel(cfg, &mut chan_rng);
        let y = transmit(&cfg.expand(&block), &ch, &noise, &mut noise_rng)?;
        for (d, det) in detectors.iter().enumerate() {
            let start = Instant::now();
            let res = det.detect(&y, &ch.h, &noise)?;
            tally.elapsed_ns[d] += start.elapsed().as_nanos() as u64;
            if res.bits.len() != b {
                return Err(Error::DimensionMismatch {
                    context: "decoded bits",
                    expected: b,
                    actual: res.bits.len(),
                });
            }
            for (w, (x, t)) in wrong[d].iter_mut().zip(res.bits.iter().zip(&block.bits)) {
                *w = x != t;
            }
            tally.errors[d] += wrong[d].iter().filter(|&&w| w).count() as u64;
        }
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    tally.exclusive[i][j] +=
                        wrong[i].iter().zip(&wrong[j]).filter(|(a, b)| **a && !**b).count() as u64;
                }
            }
        }
    }
    Ok(tally)
}

/// Paired Monte Carlo sweep with per-pair discordance counts.
pub fn run_sweep(
    cfg: &GsmConfig,
    detectors: &[&dyn Detector],
    snr_grid: &[f64],
    slots: usize,
    seed: u64,
) -> Result<SweepOutcome> {
    if slots == 0 {
        return Err(Error::invalid("slots must be >= 1"));
    }
    if detectors.is_empty() || snr_grid.is_empty() {
        return Err(Error::invalid("need at least one detector and one SNR point"));
    }
    let n = detectors.len();
    let chunks = slots.div_ceil(CHUNK_SLOTS);
    let b = cfg.bits_per_slot() as u64;
    let mut records = Vec::with_capacity(n * snr_grid.len());
    let mut pairs = Vec::new();
    for &snr_db in snr_grid {
        let tallies = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let len = CHUNK_SLOTS.min(slots - c * CHUNK_SLOTS);
                run_chunk(cfg, detectors, snr_db, seed, c as u64, len)
            })
            .collect::<Result<Vec<_>>>()?;
        let total = tallies.into_iter().fold(Tally::new(n), Tally::merge);
        let bits = slots as u64 * b;
        for (d, det) in detectors.iter().enumerate() {
            records.push(BerRecord {
                detector: det.name().to_string(),
                snr_db,
                slots: slots as u64,
                bits,
                errors: total.errors[d],
                ber: total.errors[d] as f64 / bits as f64,
                elapsed_ns: total.elapsed_ns[d],
                seed,
            });
        }
        for i in 0..n {
            for j in i + 1..n {
                pairs.push(PairRecord {
                    snr_db,
                    first: detectors[i].name().to_string(),
                    second: detectors[j].name().to_string(),
                    bits,
                    first_only: total.exclusive[i][j],
                    second_only: total.exclusive[j][i],
                });
            }
        }
    }
    Ok(SweepOutcome { records, pairs })
}

/// One [`BerRecord`] per (SNR, detector).
pub fn ber_sweep(
    cfg: &GsmConfig,
    detectors: &[&dyn Detector],
    snr_grid: &[f64],
    slots: usize,
    seed: u64,
) -> Result<Vec<BerRecord>> {
    Ok(run_sweep(cfg, detectors, snr_grid, slots, seed)?.records)
}

pub fn write_ber_csv<W: Write>(records: &[BerRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{BER_CSV_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingEntry {
    pub detector: String,
    pub mean_ns_per_slot: f64,
    /// Time relative to the reference detector, in percent.
    pub relative_percent: f64,
}

/// Wall-clock timing of a set of detectors. Values depend on the machine.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub reference: String,
    pub snr_db: f64,
    pub slots: u64,
    pub entries: Vec<TimingEntry>,
}

impl TimingReport {
    pub const NOTE: &'static str =
        "hardware-dependent wall-clock detection time; excludes channel generation and training";
}

/// Mean per-slot detection time of each detector, relative to ML when ML is
/// among them and to the first detector otherwise.
pub fn time_detectors(
    cfg: &GsmConfig,
    detectors: &[&dyn Detector],
    slots: usize,
    seed: u64,
    snr_db: f64,
) -> Result<TimingReport> {
    let records = ber_sweep(cfg, detectors, &[snr_db], slots, seed)?;
    let reference = records
        .iter()
        .find(|r| r.detector == DetectorKind::Ml.as_str())
        .unwrap_or(&records[0]);
    let ref_ns = (reference.elapsed_ns as f64).max(1.0);
    let entries = records
        .iter()
        .map(|r| TimingEntry {
            detector: r.detector.clone(),
            mean_ns_per_slot: r.elapsed_ns as f64 / slots as f64,
            relative_percent: 100.0 * r.elapsed_ns as f64 / ref_ns,
        })
        .collect();
    Ok(TimingReport {
        reference: reference.detector.clone(),
        snr_db,
        slots: slots as u64,
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacCount {
    pub detector: DetectorKind,
    pub macs: u128,
}

/// Real-valued multiply-accumulate count of one detection.
///
/// `layout` lists the B-DNN layer widths after the input, `[delta_1, ...,
/// delta_L]`, and is only consulted for [`DetectorKind::BlockDnn`].
pub fn mac_count(detector: DetectorKind, cfg: &GsmConfig, layout: Option<&[usize]>) -> Result<MacCount> {
    let nr = cfg.n_rx() as i128;
    let np = cfg.n_active() as i128;
    let n = cfg.tac_count() as i128;
    let b = cfg.bits_per_slot();
    let value: i128 = match detector {
        DetectorKind::Ml => {
            if b >= 120 {
                return Err(Error::invalid(format!("2^{b} candidates overflow the MAC counter")));
            }
            (1i128 << b) * (8 * nr * np + 4 * nr - 1)
        }
        DetectorKind::BlockZf => {
            n * (4 * np.pow(3) + 12 * np * np * nr + 7 * np * np + 6 * nr * np + 6 * nr - 2 * np - 1)
        }
        DetectorKind::BlockMmse => n * (4 * np.pow(3) + 12 * np * np * nr + 7 * np * np + 6 * nr * np + 6 * nr - 1),
        DetectorKind::BlockDnn => {
            let widths = layout.ok_or_else(|| Error::invalid("B-DNN MAC count needs the layer widths"))?;
            if widths.is_empty() {
                return Err(Error::invalid("B-DNN layout must list at least one layer"));
            }
            let d: Vec<i128> = widths.iter().map(|&w| w as i128).collect();
            let first = (4 * nr * np + 4 * nr - 1) * d[0];
            let rest: i128 = d.windows(2).map(|w| w[1] * (2 * w[0] - 1)).sum();
            n * np * (first + rest)
        }
    };
    let macs = u128::try_from(value).map_err(|_| Error::invalid("negative MAC count"))?;
    Ok(MacCount { detector, macs })
}

pub fn write_mac_csv<W: Write>(rows: &[MacCount], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{MAC_CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{}", r.detector, r.macs)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_spot_values_config_a() {
        let cfg = GsmConfig::new(4, 2, 2, 4).unwrap();
        let layout = [256, 128, 64, 4];
        let get = |k| mac_count(k, &cfg, Some(&layout)).unwrap().macs;
        assert_eq!(get(DetectorKind::Ml), 2496);
        assert_eq!(get(DetectorKind::BlockZf), 748);
        assert_eq!(get(DetectorKind::BlockMmse), 764);
        assert_eq!(get(DetectorKind::BlockDnn), 704_992);
    }

    #[test]
    fn bdnn_needs_layout() {
        let cfg = GsmConfig::new(4, 2, 2, 4).unwrap();
        assert!(mac_count(DetectorKind::BlockDnn, &cfg, None).is_err());
        assert!(mac_count(DetectorKind::BlockDnn, &cfg, Some(&[])).is_err());
    }

    #[test]
    fn pair_stderr_zero_without_discordance() {
        let p = PairRecord {
            snr_db: 0.0,
            first: "a".into(),
            second: "b".into(),
            bits: 100,
            first_only: 0,
            second_only: 0,
        };
        assert_eq!(p.stderr(), 0.0);
        assert_eq!(p.difference(), 0.0);
    }

    #[test]
    fn csv_header_and_row() {
        let r = BerRecord {
            detector: "ML".into(),
            snr_db: 4.0,
            slots: 10,
            bits: 60,
            errors: 6,
            ber: 0.1,
            elapsed_ns: 1234,
            seed: 9,
        };
        let mut buf = Vec::new();
        write_ber_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), BER_CSV_HEADER);
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 9);
        assert_eq!(row[0], "ML");
        assert_eq!(row[4], "6");
        assert!((row[6].parse::<f64>().unwrap() - (0.1f64 * 0.9 / 60.0).sqrt()).abs() < 1e-15);
    }
}
