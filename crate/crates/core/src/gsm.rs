//! GSM system geometry: constellations, transmit antenna combinations (TACs)
//! and the bit mapping of one time slot.
//!
//! A slot carries `B = log2(N) + N_p * log2(M)` bits. The leading `log2(N)`
//! bits pick a TAC in big-endian natural binary; the rest are split into
//! `N_p` groups of `log2(M)` bits, one Gray-labelled symbol per active
//! antenna. Antenna indices are 0-based everywhere.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ComplexVector;

/// Unit-energy constellation whose point index equals its bit label read
/// MSB first.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<Complex64>,
    bits_per_symbol: usize,
}

impl Constellation {
    /// BPSK for `M = 2`, Gray-labelled square QAM for `M = 4^k`.
    pub fn new(order: usize) -> Result<Self> {
        if order == 2 {
            return Ok(Constellation {
                points: vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
                bits_per_symbol: 1,
            });
        }
        if order < 4 || !order.is_power_of_two() || !order.trailing_zeros().is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "unsupported modulation order {order}: expected 2 (BPSK) or a power of 4 (square QAM)"
            )));
        }
        let bits = order.trailing_zeros() as usize;
        let axis_bits = bits / 2;
        let side = 1usize << axis_bits;
        // Gray label -> amplitude level on one axis; level 0 is the most positive.
        let mut level_of_label = vec![0usize; side];
        for level in 0..side {
            level_of_label[level ^ (level >> 1)] = level;
        }
        let amplitude = |label: usize| ((side - 1) as f64) - 2.0 * level_of_label[label] as f64;
        let energy = 2.0 * ((order as f64) - 1.0) / 3.0;
        let scale = 1.0 / energy.sqrt();
        let points = (0..order)
            .map(|n| {
                let i_label = n >> axis_bits;
                let q_label = n & (side - 1);
                Complex64::new(amplitude(i_label) * scale, amplitude(q_label) * scale)
            })
            .collect();
        Ok(Constellation {
            points,
            bits_per_symbol: bits,
        })
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Complex64 {
        self.points[index]
    }

    /// Bit label of point `index`, MSB first.
    pub fn label(&self, index: usize) -> impl Iterator<Item = u8> + '_ {
        (0..self.bits_per_symbol)
            .rev()
            .map(move |b| ((index >> b) & 1) as u8)
    }

    pub fn index_of_label(&self, bits: &[u8]) -> usize {
        bits.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
    }

    pub fn min_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                best = best.min((a - b).norm());
            }
        }
        best
    }

    pub fn name(&self) -> String {
        match self.order() {
            2 => "BPSK".to_string(),
            4 => "QPSK".to_string(),
            m => format!("{m}-QAM"),
        }
    }
}

/// Exact binomial coefficient, `None` on overflow.
pub fn binomial(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step.
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Number of legitimate TACs: `2^floor(log2 C(n_tx, n_active))`.
pub fn legitimate_tac_count(n_tx: usize, n_active: usize) -> Result<usize> {
    if n_tx == 0 || n_active == 0 || n_active > n_tx {
        return Err(Error::invalid(format!(
            "need 1 <= n_active <= n_tx, got n_tx={n_tx}, n_active={n_active}"
        )));
    }
    let total = binomial(n_tx, n_active)
        .ok_or_else(|| Error::invalid("binomial coefficient overflows u128"))?;
    let log = 127 - total.leading_zeros();
    if log >= usize::BITS - 1 {
        return Err(Error::invalid(format!("2^{log} TACs is too many to enumerate")));
    }
    Ok(1usize << log)
}

/// First `N` combinations of `n_active` antennas out of `n_tx`, in
/// lexicographic order of their ascending index tuples.
pub fn enumerate_tacs(n_tx: usize, n_active: usize) -> Result<Vec<Vec<usize>>> {
    let count = legitimate_tac_count(n_tx, n_active)?;
    let mut out = Vec::with_capacity(count);
    let mut comb: Vec<usize> = (0..n_active).collect();
    loop {
        out.push(comb.clone());
        if out.len() == count {
            break;
        }
        // Advance to the next combination; count <= C(n_tx, n_active) so one exists.
        let mut i = n_active - 1;
        while comb[i] == n_tx - n_active + i {
            i -= 1;
        }
        comb[i] += 1;
        for j in i + 1..n_active {
            comb[j] = comb[j - 1] + 1;
        }
    }
    Ok(out)
}

/// Serializable system parameters, as they appear in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GsmParams {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_active: usize,
    pub mod_order: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tacs: Option<Vec<Vec<usize>>>,
}

/// Validated GSM geometry. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct GsmConfig {
    n_tx: usize,
    n_rx: usize,
    n_active: usize,
    constellation: Constellation,
    tacs: Vec<Vec<usize>>,
    tac_bits: usize,
}

impl GsmConfig {
    /// Geometry with the lexicographic-first TAC table.
    pub fn new(n_tx: usize, n_rx: usize, n_active: usize, mod_order: usize) -> Result<Self> {
        Self::check_counts(n_tx, n_rx, n_active)?;
        let tacs = enumerate_tacs(n_tx, n_active)?;
        Self::build(n_tx, n_rx, n_active, mod_order, tacs)
    }

    /// Geometry with an explicit TAC table, which must hold exactly `N`
    /// distinct strictly ascending combinations.
    pub fn with_tacs(
        n_tx: usize,
        n_rx: usize,
        n_active: usize,
        mod_order: usize,
        tacs: Vec<Vec<usize>>,
    ) -> Result<Self> {
        Self::check_counts(n_tx, n_rx, n_active)?;
        let expected = legitimate_tac_count(n_tx, n_active)?;
        if tacs.len() != expected {
            return Err(Error::invalid(format!(
                "TAC table has {} entries, expected exactly N = {expected}",
                tacs.len()
            )));
        }
        for (i, tac) in tacs.iter().enumerate() {
            if tac.len() != n_active {
                return Err(Error::invalid(format!(
                    "TAC {i} has {} antennas, expected {n_active}",
                    tac.len()
                )));
            }
            if tac.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!("TAC {i} is not strictly ascending: {tac:?}")));
            }
            if tac.iter().any(|&a| a >= n_tx) {
                return Err(Error::invalid(format!("TAC {i} names an antenna >= n_tx={n_tx}: {tac:?}")));
            }
            if tacs[..i].contains(tac) {
                return Err(Error::invalid(format!("TAC {i} duplicates an earlier entry: {tac:?}")));
            }
        }
        Self::build(n_tx, n_rx, n_active, mod_order, tacs)
    }

    pub fn from_params(p: &GsmParams) -> Result<Self> {
        match &p.tacs {
            Some(t) => Self::with_tacs(p.n_tx, p.n_rx, p.n_active, p.mod_order, t.clone()),
            None => Self::new(p.n_tx, p.n_rx, p.n_active, p.mod_order),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let p: GsmParams = toml::from_str(s).map_err(|e| Error::invalid(e.to_string()))?;
        Self::from_params(&p)
    }

    pub fn params(&self) -> GsmParams {
        GsmParams {
            n_tx: self.n_tx,
            n_rx: self.n_rx,
            n_active: self.n_active,
            mod_order: self.mod_order(),
            tacs: Some(self.tacs.clone()),
        }
    }

    fn check_counts(n_tx: usize, n_rx: usize, n_active: usize) -> Result<()> {
        if n_tx == 0 || n_rx == 0 || n_active == 0 {
            return Err(Error::invalid("antenna counts must be positive"));
        }
        if n_active > n_tx {
            return Err(Error::invalid(format!(
                "n_active (N_p={n_active}) exceeds n_tx (N_t={n_tx})"
            )));
        }
        if n_active > n_rx {
            return Err(Error::invalid(format!(
                "n_active (N_p={n_active}) exceeds n_rx (N_r={n_rx}); block detection requires \
                 N_p <= N_r so that every H_I^H H_I is invertible"
            )));
        }
        Ok(())
    }

    fn build(
        n_tx: usize,
        n_rx: usize,
        n_active: usize,
        mod_order: usize,
        tacs: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let constellation = Constellation::new(mod_order)?;
        let tac_bits = tacs.len().trailing_zeros() as usize;
        Ok(GsmConfig {
            n_tx,
            n_rx,
            n_active,
            constellation,
            tacs,
            tac_bits,
        })
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn n_rx(&self) -> usize {
        self.n_rx
    }

    pub fn n_active(&self) -> usize {
        self.n_active
    }

    pub fn mod_order(&self) -> usize {
        self.constellation.order()
    }

    pub fn constellation(&self) -> &Constellation {
        &self.constellation
    }

    pub fn tacs(&self) -> &[Vec<usize>] {
        &self.tacs
    }

    pub fn tac_count(&self) -> usize {
        self.tacs.len()
    }

    pub fn tac_bits(&self) -> usize {
        self.tac_bits
    }

    /// `B = log2 N + N_p log2 M`.
    pub fn bits_per_slot(&self) -> usize {
        self.tac_bits + self.n_active * self.constellation.bits_per_symbol()
    }

    /// FNV-1a over the TAC table, used to pin trained models to a geometry.
    pub fn tac_table_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(self.tacs.len() as u64);
        for tac in &self.tacs {
            for &a in tac {
                eat(a as u64);
            }
        }
        h
    }

    pub fn modulate(&self, bits: &[u8]) -> Result<TransmitSymbolBlock> {
        let b = self.bits_per_slot();
        if bits.len() != b {
            return Err(Error::DimensionMismatch {
                context: "bits per slot",
                expected: b,
                actual: bits.len(),
            });
        }
        if bits.iter().any(|&x| x > 1) {
            return Err(Error::invalid("bit values must be 0 or 1"));
        }
        let tac_index = bits[..self.tac_bits]
            .iter()
            .fold(0usize, |acc, &x| (acc << 1) | x as usize);
        let symbol_indices: Vec<usize> = bits[self.tac_bits..]
            .chunks(self.constellation.bits_per_symbol())
            .map(|chunk| self.constellation.index_of_label(chunk))
            .collect();
        let symbols = symbol_indices
            .iter()
            .map(|&i| self.constellation.point(i))
            .collect();
        Ok(TransmitSymbolBlock {
            tac_index,
            symbol_indices,
            symbols,
            bits: bits.to_vec(),
        })
    }

    /// Inverse of [`GsmConfig::modulate`].
    pub fn demap_bits(&self, tac_index: usize, symbols: &[usize]) -> Result<Vec<u8>> {
        if tac_index >= self.tac_count() {
            return Err(Error::invalid(format!(
                "TAC index {tac_index} out of range (N = {})",
                self.tac_count()
            )));
        }
        if symbols.len() != self.n_active {
            return Err(Error::DimensionMismatch {
                context: "symbols per slot",
                expected: self.n_active,
                actual: symbols.len(),
            });
        }
        let m = self.mod_order();
        if let Some(&bad) = symbols.iter().find(|&&s| s >= m) {
            return Err(Error::invalid(format!("symbol index {bad} out of range (M = {m})")));
        }
        let mut bits = Vec::with_capacity(self.bits_per_slot());
        bits.extend((0..self.tac_bits).rev().map(|b| ((tac_index >> b) & 1) as u8));
        for &s in symbols {
            bits.extend(self.constellation.label(s));
        }
        Ok(bits)
    }

    /// Sparse length-`N_t` transmit vector of a block.
    pub fn expand(&self, block: &TransmitSymbolBlock) -> ComplexVector {
        let mut x = vec![Complex64::new(0.0, 0.0); self.n_tx];
        for (&antenna, &s) in self.tacs[block.tac_index].iter().zip(&block.symbols) {
            x[antenna] = s;
        }
        x
    }

    /// Uniformly random slot.
    pub fn random_block<R: Rng + ?Sized>(&self, rng: &mut R) -> TransmitSymbolBlock {
        let bits: Vec<u8> = (0..self.bits_per_slot())
            .map(|_| rng.random::<bool>() as u8)
            .collect();
        self.modulate(&bits).expect("random bits have the slot length")
    }
}

/// What one slot carries: the TAC choice and the symbols on its antennas.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmitSymbolBlock {
    pub tac_index: usize,
    pub symbol_indices: Vec<usize>,
    pub symbols: Vec<Complex64>,
    pub bits: Vec<u8>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tacs_for_four_choose_two() {
        let t = enumerate_tacs(4, 2).unwrap();
        assert_eq!(t, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2]]);
    }

    #[test]
    fn tac_counts() {
        assert_eq!(enumerate_tacs(16, 2).unwrap().len(), 64);
        assert_eq!(enumerate_tacs(2, 2).unwrap(), vec![vec![0, 1]]);
        assert_eq!(enumerate_tacs(128, 2).unwrap().len(), 4096);
    }

    #[test]
    fn tac_args_rejected() {
        assert!(enumerate_tacs(2, 3).is_err());
        assert!(enumerate_tacs(0, 0).is_err());
        assert!(enumerate_tacs(4, 0).is_err());
    }

    #[test]
    fn bits_per_slot() {
        assert_eq!(GsmConfig::new(4, 2, 2, 4).unwrap().bits_per_slot(), 6);
        assert_eq!(GsmConfig::new(128, 64, 2, 4).unwrap().bits_per_slot(), 16);
        assert_eq!(GsmConfig::new(16, 4, 2, 16).unwrap().bits_per_slot(), 14);
    }

    #[test]
    fn zero_bits_select_first_entries() {
        let cfg = GsmConfig::new(4, 2, 2, 4).unwrap();
        let blk = cfg.modulate(&[0; 6]).unwrap();
        assert_eq!(blk.tac_index, 0);
        assert_eq!(blk.symbol_indices, vec![0, 0]);
        let p = cfg.constellation().point(0);
        assert_eq!(blk.symbols, vec![p, p]);
    }

    #[test]
    fn wrong_bit_count_rejected() {
        let cfg = GsmConfig::new(4, 2, 2, 4).unwrap();
        assert!(matches!(cfg.modulate(&[0; 5]), Err(Error::DimensionMismatch { .. })));
        assert!(cfg.modulate(&[0, 0, 0, 0, 0, 2]).is_err());
    }

    #[test]
    fn expand_places_symbols() {
        let cfg = GsmConfig::new(4, 2, 2, 4).unwrap();
        let a = cfg.constellation().point(1);
        let b = cfg.constellation().point(2);
        let z = Complex64::new(0.0, 0.0);
        // tacs: [0,1],[0,2],[0,3],[1,2]
        let blk = TransmitSymbolBlock {
            tac_index: 1,
            symbol_indices: vec![1, 2],
            symbols: vec![a, b],
            bits: cfg.demap_bits(1, &[1, 2]).unwrap(),
        };
        assert_eq!(cfg.expand(&blk), vec![a, z, b, z]);
        let blk = TransmitSymbolBlock { tac_index: 3, ..blk };
        assert_eq!(cfg.expand(&blk), vec![z, a, b, z]);
    }

    #[test]
    fn demap_edges() {
        let cfg = GsmConfig::new(4, 2, 2, 4).unwrap();
        assert_eq!(cfg.demap_bits(0, &[0, 0]).unwrap(), vec![0; 6]);
        assert_eq!(cfg.demap_bits(3, &[3, 3]).unwrap(), vec![1; 6]);
        assert!(cfg.demap_bits(4, &[0, 0]).is_err());
        assert!(cfg.demap_bits(0, &[0, 4]).is_err());
        assert!(cfg.demap_bits(0, &[0]).is_err());
    }

    #[test]
    fn exhaustive_round_trip_b6() {
        let cfg = GsmConfig::new(4, 2, 2, 4).unwrap();
        for v in 0u32..64 {
            let bits: Vec<u8> = (0..6).rev().map(|b| ((v >> b) & 1) as u8).collect();
            let blk = cfg.modulate(&bits).unwrap();
            assert_eq!(cfg.demap_bits(blk.tac_index, &blk.symbol_indices).unwrap(), bits);
        }
    }

    #[test]
    fn unit_energy() {
        for m in [2, 4, 16, 64] {
            let c = Constellation::new(m).unwrap();
            let e: f64 = c.points().iter().map(|p| p.norm_sqr()).sum::<f64>() / m as f64;
            assert!((e - 1.0).abs() < 1e-12, "M={m}: energy {e}");
        }
    }

    #[test]
    fn gray_neighbours_differ_in_one_bit() {
        for m in [4, 16, 64] {
            let c = Constellation::new(m).unwrap();
            let d = c.min_distance();
            for i in 0..m {
                for j in i + 1..m {
                    if ((c.point(i) - c.point(j)).norm() - d).abs() < 1e-9 {
                        assert_eq!((i ^ j).count_ones(), 1, "M={m}: {i} and {j}");
                    }
                }
            }
        }
    }

    #[test]
    fn bpsk_is_antipodal() {
        let c = Constellation::new(2).unwrap();
        assert_eq!(c.points(), &[Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)]);
    }

    #[test]
    fn rejects_bad_orders() {
        for m in [0, 1, 3, 8, 32] {
            assert!(Constellation::new(m).is_err(), "M={m}");
        }
    }

    #[test]
    fn config_rejects_np_above_nr() {
        let err = GsmConfig::new(8, 2, 3, 4).unwrap_err().to_string();
        assert!(err.contains("block detection"), "{err}");
    }

    #[test]
    fn tac_override_validated() {
        let ok = vec![vec![0, 1], vec![2, 3], vec![0, 3], vec![1, 2]];
        assert!(GsmConfig::with_tacs(4, 2, 2, 4, ok).is_ok());
        let short = vec![vec![0, 1], vec![2, 3]];
        assert!(GsmConfig::with_tacs(4, 2, 2, 4, short).is_err());
        let unordered = vec![vec![1, 0], vec![2, 3], vec![0, 3], vec![1, 2]];
        assert!(GsmConfig::with_tacs(4, 2, 2, 4, unordered).is_err());
        let dup = vec![vec![0, 1], vec![0, 1], vec![0, 3], vec![1, 2]];
        assert!(GsmConfig::with_tacs(4, 2, 2, 4, dup).is_err());
        let range = vec![vec![0, 1], vec![2, 4], vec![0, 3], vec![1, 2]];
        assert!(GsmConfig::with_tacs(4, 2, 2, 4, range).is_err());
    }

    #[test]
    fn config_from_toml() {
        let cfg = GsmConfig::from_toml_str("n_tx = 16\nn_rx = 4\nn_active = 2\nmod_order = 4\n").unwrap();
        assert_eq!(cfg.tac_count(), 64);
        let cfg = GsmConfig::from_toml_str(
            "n_tx = 4\nn_rx = 2\nn_active = 2\nmod_order = 2\ntacs = [[2,3],[1,3],[0,1],[0,2]]\n",
        )
        .unwrap();
        assert_eq!(cfg.tacs()[0], vec![2, 3]);
    }
}
