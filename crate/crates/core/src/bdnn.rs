//! Block-DNN detector.
//!
//! Each candidate TAC `I_i` gets a feature vector built from the received
//! signal and the active-antenna columns `H_I`; `N_p` small classifiers each
//! predict one antenna's symbol from it, and the TAC whose predicted symbol
//! vector best explains `y` (smallest `||y - H_I s||^2`) wins.
//!
//! Features are laid out as `[f(y); f(H_I)]` where `f` emits
//! `|Re z|, |Im z|` per entry in row-major order. [`FeatureMode::Signed`]
//! keeps the signs instead; it is an extension, off by default.

use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{derive_rng, sample_channel, sigma2_from_snr, transmit, NoiseSpec, Stream};
use crate::detectors::{candidate_metric, DetectionResult, Detector, DetectorKind};
use crate::error::{Error, Result};
use crate::gsm::GsmConfig;
use crate::linalg::ComplexMatrix;
use crate::neural::{
    init_network, load_weights, save_weights, train, DenseNetwork, EpochStats, Scratch, TrainSpec, TrainingSet,
};

/// Flattening order of matrices inside feature vectors.
pub const SFVG_ORDER: &str = "row-major";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// `|Re|, |Im|` per entry.
    #[default]
    Absolute,
    /// `Re, Im` per entry (sign-preserving extension).
    Signed,
}

impl FeatureMode {
    fn push(self, z: Complex64, out: &mut Vec<f64>) {
        match self {
            FeatureMode::Absolute => {
                out.push(z.re.abs());
                out.push(z.im.abs());
            }
            FeatureMode::Signed => {
                out.push(z.re);
                out.push(z.im);
            }
        }
    }
}

/// Separate feature vector generator over a vector, or over a matrix given
/// as its row-major entries.
pub fn sfvg(values: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * values.len());
    for &z in values {
        FeatureMode::Absolute.push(z, &mut out);
    }
    out
}

pub fn sfvg_matrix(m: &ComplexMatrix) -> Vec<f64> {
    sfvg(m.as_slice())
}

/// `2 N_r + 2 N_r N_p`.
pub fn feature_len(cfg: &GsmConfig) -> usize {
    2 * cfg.n_rx() + 2 * cfg.n_rx() * cfg.n_active()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// `[sfvg(y); sfvg(H_I)]` for an explicit `N_r x N_p` sub-matrix.
pub fn build_feature(y: &[Complex64], h_i: &ComplexMatrix) -> Result<FeatureVector> {
    build_feature_with(y, h_i, FeatureMode::Absolute)
}

pub fn build_feature_with(y: &[Complex64], h_i: &ComplexMatrix, mode: FeatureMode) -> Result<FeatureVector> {
    if y.len() != h_i.rows() {
        return Err(Error::DimensionMismatch {
            context: "received vector vs H_I rows",
            expected: h_i.rows(),
            actual: y.len(),
        });
    }
    let mut out = Vec::with_capacity(2 * y.len() * (1 + h_i.cols()));
    for &z in y.iter().chain(h_i.as_slice()) {
        mode.push(z, &mut out);
    }
    Ok(FeatureVector(out))
}

/// Same as [`build_feature_with`] on `H` restricted to `tac`, without
/// materializing the sub-matrix.
fn feature_into(y: &[Complex64], h: &ComplexMatrix, tac: &[usize], mode: FeatureMode, out: &mut Vec<f64>) {
    out.clear();
    for &z in y {
        mode.push(z, out);
    }
    for r in 0..h.rows() {
        for &a in tac {
            mode.push(h[(r, a)], out);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainingDataOptions {
    pub mode: FeatureMode,
    /// Noisy-training extension; `None` trains on noiseless `y = H x`.
    pub train_snr_db: Option<f64>,
}

/// One training set per active-antenna slot `k`. All sets share the same
/// inputs (the true-TAC feature vector of each sample); set `k` is labelled
/// with the symbol index sent on the `k`-th active antenna.
pub fn build_training_set(
    cfg: &GsmConfig,
    n_samples: usize,
    seed: u64,
    opts: &TrainingDataOptions,
) -> Result<Vec<TrainingSet>> {
    if n_samples == 0 {
        return Err(Error::invalid("need at least one training sample"));
    }
    let noise = match opts.train_snr_db {
        Some(db) => sigma2_from_snr(db, cfg),
        None => NoiseSpec::noiseless(),
    };
    let dim = feature_len(cfg);
    let np = cfg.n_active();
    let mut bit_rng = derive_rng(seed, Stream::Bits, &[u64::MAX]);
    let mut chan_rng = derive_rng(seed, Stream::Channel, &[u64::MAX]);
    let mut noise_rng = derive_rng(seed, Stream::Noise, &[u64::MAX]);

    let mut inputs = Vec::with_capacity(n_samples * dim);
    let mut labels: Vec<Vec<usize>> = vec![Vec::with_capacity(n_samples); np];
    let mut feature = Vec::with_capacity(dim);
    for _ in 0..n_samples {
        let block = cfg.random_block(&mut bit_rng);
        let ch = sample_channel(cfg, &mut chan_rng);
        let y = transmit(&cfg.expand(&block), &ch, &noise, &mut noise_rng)?;
        feature_into(&y, &ch.h, &cfg.tacs()[block.tac_index], opts.mode, &mut feature);
        inputs.extend_from_slice(&feature);
        for (k, l) in labels.iter_mut().enumerate() {
            l.push(block.symbol_indices[k]);
        }
    }
    labels
        .into_iter()
        .map(|l| TrainingSet::new(dim, cfg.mod_order(), inputs.clone(), l))
        .collect()
}

/// Hidden-layer sizes per modulation order.
pub fn default_hidden_layout(mod_order: usize) -> Result<Vec<usize>> {
    match mod_order {
        2 => Ok(vec![128, 64, 32]),
        4 => Ok(vec![256, 128, 64]),
        16 => Ok(vec![512, 256, 128]),
        m => Err(Error::invalid(format!(
            "no default hidden layout for M={m}; supported modulations: BPSK (M=2), QPSK (M=4), 16-QAM (M=16)"
        ))),
    }
}

/// `[feature_len, hidden..., M]`.
pub fn network_layout(cfg: &GsmConfig, hidden: &[usize]) -> Vec<usize> {
    std::iter::once(feature_len(cfg))
        .chain(hidden.iter().copied())
        .chain(std::iter::once(cfg.mod_order()))
        .collect()
}

mod hex_u64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        u64::from_str_radix(&s, 16).map_err(serde::de::Error::custom)
    }
}

/// Geometry a model was trained for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFingerprint {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_active: usize,
    pub mod_order: usize,
    #[serde(with = "hex_u64")]
    pub tac_hash: u64,
    pub feature_mode: FeatureMode,
}

impl ModelFingerprint {
    pub fn of(cfg: &GsmConfig, feature_mode: FeatureMode) -> Self {
        ModelFingerprint {
            n_tx: cfg.n_tx(),
            n_rx: cfg.n_rx(),
            n_active: cfg.n_active(),
            mod_order: cfg.mod_order(),
            tac_hash: cfg.tac_table_hash(),
            feature_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BdnnModel {
    sub_nets: Vec<DenseNetwork>,
    fingerprint: ModelFingerprint,
}

impl BdnnModel {
    pub fn new(cfg: &GsmConfig, sub_nets: Vec<DenseNetwork>, feature_mode: FeatureMode) -> Result<Self> {
        let fingerprint = ModelFingerprint::of(cfg, feature_mode);
        Self::from_parts(fingerprint, sub_nets)
    }

    fn from_parts(fingerprint: ModelFingerprint, sub_nets: Vec<DenseNetwork>) -> Result<Self> {
        if sub_nets.len() != fingerprint.n_active {
            return Err(Error::ModelMismatch(format!(
                "{} sub-networks for {} active antennas",
                sub_nets.len(),
                fingerprint.n_active
            )));
        }
        let dim = 2 * fingerprint.n_rx * (1 + fingerprint.n_active);
        for (k, net) in sub_nets.iter().enumerate() {
            if net.input_size() != dim || net.output_size() != fingerprint.mod_order {
                return Err(Error::ModelMismatch(format!(
                    "sub-network {k} maps {} -> {}, expected {dim} -> {}",
                    net.input_size(),
                    net.output_size(),
                    fingerprint.mod_order
                )));
            }
            if net.layout() != sub_nets[0].layout() {
                return Err(Error::ModelMismatch(format!("sub-network {k} has a different layout")));
            }
        }
        Ok(BdnnModel { sub_nets, fingerprint })
    }

    pub fn sub_nets(&self) -> &[DenseNetwork] {
        &self.sub_nets
    }

    pub fn fingerprint(&self) -> &ModelFingerprint {
        &self.fingerprint
    }

    pub fn feature_mode(&self) -> FeatureMode {
        self.fingerprint.feature_mode
    }

    pub fn layout(&self) -> Vec<usize> {
        self.sub_nets[0].layout()
    }

    pub fn check_compatible(&self, cfg: &GsmConfig) -> Result<()> {
        let want = ModelFingerprint::of(cfg, self.fingerprint.feature_mode);
        if want != self.fingerprint {
            return Err(Error::ModelMismatch(format!(
                "model trained for {:?}, system is {:?}",
                self.fingerprint, want
            )));
        }
        Ok(())
    }
}

/// Per-TAC symbol predictor feeding the Euclidean resolution step.
pub trait SymbolClassifier: Sync {
    /// Symbol indices for every active antenna given TAC `tac_index`'s
    /// feature vector.
    fn classify(&self, tac_index: usize, feature: &[f64]) -> Vec<usize>;
}

impl SymbolClassifier for BdnnModel {
    fn classify(&self, _tac_index: usize, feature: &[f64]) -> Vec<usize> {
        self.sub_nets
            .iter()
            .map(|net| {
                let mut scratch = Scratch::new(net);
                net.predict(feature, &mut scratch).expect("feature length checked by fingerprint")
            })
            .collect()
    }
}

/// Builds each TAC's features, asks `classifier` for its symbols and keeps
/// the TAC with the smallest residual (ties to the lowest index).
pub fn resolve_blocks<C: SymbolClassifier + ?Sized>(
    y: &[Complex64],
    h: &ComplexMatrix,
    cfg: &GsmConfig,
    mode: FeatureMode,
    classifier: &C,
) -> DetectionResult {
    let mut feature = Vec::with_capacity(feature_len(cfg));
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    for (i, tac) in cfg.tacs().iter().enumerate() {
        feature_into(y, h, tac, mode, &mut feature);
        let symbols = classifier.classify(i, &feature);
        let metric = candidate_metric(y, h, cfg, i, &symbols);
        if best.as_ref().is_none_or(|b| metric < b.0) {
            best = Some((metric, i, symbols));
        }
    }
    let (metric, i, symbols) = best.expect("at least one TAC");
    DetectionResult::new(cfg, i, symbols, metric)
}

pub fn bdnn_detect(y: &[Complex64], h: &ComplexMatrix, model: &BdnnModel, cfg: &GsmConfig) -> Result<DetectionResult> {
    model.check_compatible(cfg)?;
    if y.len() != cfg.n_rx() || h.rows() != cfg.n_rx() || h.cols() != cfg.n_tx() {
        return Err(Error::DimensionMismatch {
            context: "received slot",
            expected: cfg.n_rx(),
            actual: y.len(),
        });
    }
    Ok(resolve_blocks(y, h, cfg, model.feature_mode(), model))
}

#[derive(Debug, Clone)]
pub struct BdnnDetector {
    cfg: GsmConfig,
    model: BdnnModel,
}

impl BdnnDetector {
    pub fn new(cfg: &GsmConfig, model: BdnnModel) -> Result<Self> {
        model.check_compatible(cfg)?;
        Ok(BdnnDetector { cfg: cfg.clone(), model })
    }

    pub fn model(&self) -> &BdnnModel {
        &self.model
    }
}

impl Detector for BdnnDetector {
    fn name(&self) -> &str {
        DetectorKind::BlockDnn.as_str()
    }

    fn detect(&self, y: &[Complex64], h: &ComplexMatrix, _noise: &NoiseSpec) -> Result<DetectionResult> {
        bdnn_detect(y, h, &self.model, &self.cfg)
    }
}

/// Everything needed to train a model from scratch.
#[derive(Debug, Clone, PartialEq)]
pub struct BdnnTrainOptions {
    pub hidden: Vec<usize>,
    /// Training rows per sub-network; validation rows come on top.
    pub samples: usize,
    pub spec: TrainSpec,
    pub data: TrainingDataOptions,
}

impl BdnnTrainOptions {
    /// Default hidden layout for the modulation, everything else from
    /// [`TrainSpec::default`].
    pub fn for_config(cfg: &GsmConfig, samples: usize) -> Result<Self> {
        Ok(BdnnTrainOptions {
            hidden: default_hidden_layout(cfg.mod_order())?,
            samples,
            spec: TrainSpec::default(),
            data: TrainingDataOptions::default(),
        })
    }

    fn total_rows(&self) -> usize {
        let keep = 1.0 - self.spec.validation_fraction;
        let mut total = ((self.samples as f64) / keep).ceil() as usize;
        while total - ((total as f64) * self.spec.validation_fraction).floor() as usize > self.samples {
            total -= 1;
        }
        total.max(self.samples)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedBdnn {
    pub model: BdnnModel,
    /// Per sub-network epoch curves.
    pub history: Vec<Vec<EpochStats>>,
}

/// Generates training data and trains the `N_p` sub-networks, in parallel
/// when a thread pool is available. Output does not depend on thread count.
pub fn train_bdnn(cfg: &GsmConfig, opts: &BdnnTrainOptions) -> Result<TrainedBdnn> {
    opts.spec.validate()?;
    let sets = build_training_set(cfg, opts.total_rows(), opts.spec.seed, &opts.data)?;
    let layout = network_layout(cfg, &opts.hidden);
    let results: Vec<Result<_>> = sets
        .par_iter()
        .enumerate()
        .map(|(k, set)| {
            let sub_seed = opts.spec.seed.wrapping_add(0x1000 * (k as u64 + 1));
            let net = init_network(&layout, sub_seed)?;
            train(net, set, &TrainSpec { seed: sub_seed, ..opts.spec.clone() })
        })
        .collect();
    let mut sub_nets = Vec::with_capacity(results.len());
    let mut history = Vec::with_capacity(results.len());
    for r in results {
        let out = r?;
        sub_nets.push(out.network);
        history.push(out.history);
    }
    let model = BdnnModel::new(cfg, sub_nets, opts.data.mode)?;
    Ok(TrainedBdnn { model, history })
}

/// Training provenance recorded in a bundle manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(with = "hex_u64")]
    pub seed: u64,
    pub samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_snr_db: Option<f64>,
}

impl Provenance {
    pub fn of(opts: &BdnnTrainOptions) -> Self {
        Provenance {
            seed: opts.spec.seed,
            samples: opts.samples,
            epochs: opts.spec.epochs,
            batch_size: opts.spec.batch_size,
            learning_rate: opts.spec.learning_rate,
            train_snr_db: opts.data.train_snr_db,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub bundle_version: u32,
    pub sfvg_order: String,
    pub layout: Vec<usize>,
    pub subnets: Vec<String>,
    pub fingerprint: ModelFingerprint,
    pub provenance: Provenance,
}

pub const BUNDLE_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";

/// Writes `manifest.toml` plus one weight file per sub-network into `dir`.
pub fn save_bundle(model: &BdnnModel, provenance: &Provenance, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let subnets: Vec<String> = (0..model.sub_nets.len()).map(|k| format!("subnet_{k}.bdnn")).collect();
    for (net, name) in model.sub_nets.iter().zip(&subnets) {
        save_weights(net, dir.join(name))?;
    }
    let manifest = Manifest {
        bundle_version: BUNDLE_VERSION,
        sfvg_order: SFVG_ORDER.to_string(),
        layout: model.layout(),
        subnets,
        fingerprint: model.fingerprint,
        provenance: provenance.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Manifest(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<(BdnnModel, Manifest)> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
    if manifest.bundle_version != BUNDLE_VERSION {
        return Err(Error::Manifest(format!(
            "bundle version {} unsupported (expected {BUNDLE_VERSION})",
            manifest.bundle_version
        )));
    }
    if manifest.sfvg_order != SFVG_ORDER {
        return Err(Error::ModelMismatch(format!(
            "bundle uses feature order `{}`, this build uses `{SFVG_ORDER}`",
            manifest.sfvg_order
        )));
    }
    let sub_nets = manifest
        .subnets
        .iter()
        .map(|name| load_weights(dir.join(name)))
        .collect::<Result<Vec<_>>>()?;
    if let Some(net) = sub_nets.iter().find(|n| n.layout() != manifest.layout) {
        return Err(Error::ModelMismatch(format!(
            "weight file layout {:?} disagrees with manifest {:?}",
            net.layout(),
            manifest.layout
        )));
    }
    let model = BdnnModel::from_parts(manifest.fingerprint, sub_nets)?;
    Ok((model, manifest))
}
