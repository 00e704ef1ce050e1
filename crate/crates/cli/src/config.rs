//! Run configuration: built-in defaults, overlaid by a TOML file, overlaid
//! by command-line flags.

use std::path::{Path, PathBuf};

use gsmdet_core::bdnn::default_hidden_layout;
use gsmdet_core::gsm::GsmParams;
use gsmdet_core::{DetectorKind, FeatureMode, GsmConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; all available cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub system: SystemSection,
    pub sweep: SweepSection,
    pub train: TrainSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_active: usize,
    /// `bpsk`, `qpsk`, `16qam`, ... or the order itself.
    pub modulation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tacs: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// `start:step:stop` in dB, or a single value.
    pub snr: String,
    pub slots: usize,
    /// Empty means ML, B-ZF, B-MMSE, plus B-DNN when a model is given.
    pub detectors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    pub plot: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub samples: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub validation_fraction: f64,
    /// Hidden widths; per-modulation default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    pub features: FeatureMode,
    /// Train on noisy receptions at this SNR instead of noiseless ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_snr_db: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spec = gsmdet_core::neural::TrainSpec::default();
        RunConfig {
            seed: 0,
            out: PathBuf::from("gsmdet-out"),
            threads: None,
            system: SystemSection {
                n_tx: 4,
                n_rx: 2,
                n_active: 2,
                modulation: "qpsk".into(),
                tacs: None,
            },
            sweep: SweepSection {
                snr: "0:2:12".into(),
                slots: 10_000,
                detectors: Vec::new(),
                model: None,
                plot: true,
            },
            train: TrainSection {
                samples: 200_000,
                epochs: spec.epochs,
                batch: spec.batch_size,
                lr: spec.learning_rate,
                validation_fraction: spec.validation_fraction,
                hidden: None,
                features: FeatureMode::Absolute,
                train_snr_db: None,
            },
        }
    }
}

/// Flag values; `None` leaves the lower layers untouched.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub n_tx: Option<usize>,
    pub n_rx: Option<usize>,
    pub n_active: Option<usize>,
    pub modulation: Option<String>,
    pub snr: Option<String>,
    pub slots: Option<usize>,
    pub detectors: Option<Vec<String>>,
    pub model: Option<PathBuf>,
    pub no_plot: bool,
    pub samples: Option<usize>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub features: Option<FeatureMode>,
    pub train_snr_db: Option<f64>,
}

impl Overrides {
    fn to_table(&self) -> Table {
        let mut root = Table::new();
        let mut system = Table::new();
        let mut sweep = Table::new();
        let mut train = Table::new();
        let path = |p: &PathBuf| Value::String(p.to_string_lossy().into_owned());
        let int = |v: usize| Value::Integer(v as i64);

        if let Some(v) = self.seed {
            root.insert("seed".into(), Value::Integer(v as i64));
        }
        if let Some(v) = &self.out {
            root.insert("out".into(), path(v));
        }
        if let Some(v) = self.threads {
            root.insert("threads".into(), int(v));
        }
        for (key, v) in [("n_tx", self.n_tx), ("n_rx", self.n_rx), ("n_active", self.n_active)] {
            if let Some(v) = v {
                system.insert(key.into(), int(v));
            }
        }
        if let Some(v) = &self.modulation {
            system.insert("modulation".into(), Value::String(v.clone()));
        }
        if let Some(v) = &self.snr {
            sweep.insert("snr".into(), Value::String(v.clone()));
        }
        if let Some(v) = self.slots {
            sweep.insert("slots".into(), int(v));
        }
        if let Some(v) = &self.detectors {
            sweep.insert("detectors".into(), Value::Array(v.iter().cloned().map(Value::String).collect()));
        }
        if let Some(v) = &self.model {
            sweep.insert("model".into(), path(v));
        }
        if self.no_plot {
            sweep.insert("plot".into(), Value::Boolean(false));
        }
        for (key, v) in [("samples", self.samples), ("epochs", self.epochs), ("batch", self.batch)] {
            if let Some(v) = v {
                train.insert(key.into(), int(v));
            }
        }
        if let Some(v) = self.lr {
            train.insert("lr".into(), Value::Float(v));
        }
        if let Some(v) = &self.hidden {
            train.insert("hidden".into(), Value::Array(v.iter().map(|&w| int(w)).collect()));
        }
        if let Some(v) = self.features {
            let name = match v {
                FeatureMode::Absolute => "absolute",
                FeatureMode::Signed => "signed",
            };
            train.insert("features".into(), Value::String(name.into()));
        }
        if let Some(v) = self.train_snr_db {
            train.insert("train_snr_db".into(), Value::Float(v));
        }
        root.insert("system".into(), Value::Table(system));
        root.insert("sweep".into(), Value::Table(sweep));
        root.insert("train".into(), Value::Table(train));
        root
    }
}

fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Integers are accepted for `modulation` and widened floats for `lr`.
fn normalize(table: &mut Table) {
    if let Some(Value::Table(system)) = table.get_mut("system") {
        if let Some(Value::Integer(m)) = system.get("modulation").cloned() {
            system.insert("modulation".into(), Value::String(m.to_string()));
        }
    }
    if let Some(Value::Table(train)) = table.get_mut("train") {
        for key in ["lr", "validation_fraction", "train_snr_db"] {
            if let Some(Value::Integer(v)) = train.get(key).cloned() {
                train.insert(key.into(), Value::Float(v as f64));
            }
        }
    }
}

impl RunConfig {
    pub fn resolve(config_file: Option<&Path>, overrides: &Overrides) -> CliResult<RunConfig> {
        let mut table = Table::try_from(RunConfig::default()).map_err(|e| CliError::Runtime(e.to_string()))?;
        if let Some(path) = config_file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let file: Table = text
                .parse()
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            merge(&mut table, file);
        }
        merge(&mut table, overrides.to_table());
        normalize(&mut table);
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e| CliError::Config(format!("invalid configuration: {e}")))?;
        if cfg.threads == Some(0) {
            return Err(CliError::Config("threads must be >= 1".into()));
        }
        Ok(cfg)
    }

    pub fn mod_order(&self) -> CliResult<usize> {
        parse_modulation(&self.system.modulation)
    }

    pub fn gsm(&self) -> CliResult<GsmConfig> {
        let params = GsmParams {
            n_tx: self.system.n_tx,
            n_rx: self.system.n_rx,
            n_active: self.system.n_active,
            mod_order: self.mod_order()?,
            tacs: self.system.tacs.clone(),
        };
        Ok(GsmConfig::from_params(&params)?)
    }

    /// Explicit hidden widths, or the modulation's default.
    pub fn hidden(&self, mod_order: usize) -> CliResult<Vec<usize>> {
        match &self.train.hidden {
            Some(h) if h.is_empty() || h.contains(&0) => {
                Err(CliError::Config(format!("hidden widths must be positive, got {h:?}")))
            }
            Some(h) => Ok(h.clone()),
            None => Ok(default_hidden_layout(mod_order)?),
        }
    }

    pub fn snr_grid(&self) -> CliResult<Vec<f64>> {
        parse_snr_grid(&self.sweep.snr)
    }

    /// Requested detectors, deduplicated errors aside, in the given order.
    pub fn detectors(&self) -> CliResult<Vec<DetectorKind>> {
        if self.sweep.detectors.is_empty() {
            let mut d = vec![DetectorKind::Ml, DetectorKind::BlockZf, DetectorKind::BlockMmse];
            if self.sweep.model.is_some() {
                d.push(DetectorKind::BlockDnn);
            }
            return Ok(d);
        }
        let mut out: Vec<DetectorKind> = Vec::new();
        for name in &self.sweep.detectors {
            let kind: DetectorKind = name.parse()?;
            if out.contains(&kind) {
                return Err(CliError::Config(format!("detector {kind} listed twice")));
            }
            out.push(kind);
        }
        Ok(out)
    }

    pub fn write_effective(&self, dir: &Path) -> CliResult<()> {
        let text = toml::to_string(self).map_err(|e| CliError::Runtime(e.to_string()))?;
        let path = dir.join(EFFECTIVE_CONFIG_FILE);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}

pub fn parse_modulation(s: &str) -> CliResult<usize> {
    let norm: String = s
        .chars()
        .filter(|c| !matches!(c, '-' | '_' | ' '))
        .collect::<String>()
        .to_ascii_lowercase();
    let order = match norm.as_str() {
        "bpsk" => 2,
        "qpsk" | "4qam" => 4,
        other => {
            let digits = other.trim_end_matches("qam").trim_start_matches("qam");
            digits.parse::<usize>().map_err(|_| {
                CliError::Config(format!(
                    "unknown modulation `{s}`; supported modulations: BPSK (M=2), QPSK (M=4), 16-QAM (M=16)"
                ))
            })?
        }
    };
    Ok(order)
}

/// `start:step:stop` (inclusive) or a single value, in dB.
pub fn parse_snr_grid(s: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::Config(format!("invalid SNR grid `{s}`; expected start:step:stop in dB"));
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    if parts.iter().any(|v| !v.is_finite()) {
        return Err(bad());
    }
    match parts[..] {
        [v] => Ok(vec![v]),
        [start, step, stop] => {
            if step <= 0.0 {
                return Err(CliError::Config(format!("SNR step must be > 0, got {step}")));
            }
            if stop < start {
                return Err(CliError::Config(format!("SNR grid is empty: {start} > {stop}")));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            if count > 10_000 {
                return Err(CliError::Config(format!("SNR grid has {count} points")));
            }
            Ok((0..count).map(|i| start + step * i as f64).collect())
        }
        _ => Err(bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_grid_forms() {
        assert_eq!(parse_snr_grid("0:2:12").unwrap(), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0]);
        assert_eq!(parse_snr_grid("5").unwrap(), vec![5.0]);
        assert_eq!(parse_snr_grid("0:0.1:0.3").unwrap().len(), 4);
        assert!(parse_snr_grid("0:0:4").is_err());
        assert!(parse_snr_grid("4:1:0").is_err());
        assert!(parse_snr_grid("a:b").is_err());
    }

    #[test]
    fn modulation_names() {
        assert_eq!(parse_modulation("BPSK").unwrap(), 2);
        assert_eq!(parse_modulation("qpsk").unwrap(), 4);
        assert_eq!(parse_modulation("16-QAM").unwrap(), 16);
        assert_eq!(parse_modulation("16").unwrap(), 16);
        assert!(parse_modulation("8psk").is_err());
    }

    #[test]
    fn precedence_flags_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        std::fs::write(&file, "seed = 7\n[system]\nn_tx = 16\nn_rx = 4\n[sweep]\nslots = 50\n[train]\nlr = 1\n").unwrap();
        let flags = Overrides { slots: Some(9), ..Default::default() };
        let cfg = RunConfig::resolve(Some(&file), &flags).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!((cfg.system.n_tx, cfg.system.n_rx, cfg.system.n_active), (16, 4, 2));
        assert_eq!(cfg.sweep.slots, 9);
        assert_eq!(cfg.train.lr, 1.0);
        assert_eq!(cfg.train.epochs, 20);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        std::fs::write(&file, "[sweep]\nslot = 3\n").unwrap();
        assert!(matches!(RunConfig::resolve(Some(&file), &Overrides::default()), Err(CliError::Config(_))));
    }

    #[test]
    fn effective_config_round_trips() {
        let cfg = RunConfig::resolve(None, &Overrides { train_snr_db: Some(8.0), ..Default::default() }).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn block_detection_bound_reported() {
        let cfg = RunConfig::resolve(None, &Overrides { n_active: Some(3), ..Default::default() }).unwrap();
        let err = cfg.gsm().unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
        assert!(err.to_string().contains("N_p <= N_r"), "{err}");
    }
}
