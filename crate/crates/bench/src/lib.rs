//! Shared fixtures for the detector benchmarks.

use gsmdet_core::bdnn::{default_hidden_layout, network_layout};
use gsmdet_core::channel::{derive_rng, sample_channel, sigma2_from_snr, transmit, Stream};
use gsmdet_core::neural::init_network;
use gsmdet_core::{BdnnModel, Complex64, ComplexMatrix, FeatureMode, GsmConfig, NoiseSpec};

/// One received slot with its channel.
pub struct Slot {
    pub y: Vec<Complex64>,
    pub h: ComplexMatrix,
    pub noise: NoiseSpec,
}

/// `count` independent slots at `snr_db`.
pub fn slots(cfg: &GsmConfig, count: usize, snr_db: f64, seed: u64) -> Vec<Slot> {
    let noise = sigma2_from_snr(snr_db, cfg);
    let mut bits = derive_rng(seed, Stream::Bits, &[]);
    let mut chan = derive_rng(seed, Stream::Channel, &[]);
    let mut nrng = derive_rng(seed, Stream::Noise, &[]);
    (0..count)
        .map(|_| {
            let block = cfg.random_block(&mut bits);
            let ch = sample_channel(cfg, &mut chan);
            let y = transmit(&cfg.expand(&block), &ch, &noise, &mut nrng).expect("shapes match");
            Slot { y, h: ch.h, noise }
        })
        .collect()
}

/// Randomly initialized model with the default layout. Detection cost does
/// not depend on the weight values.
pub fn untrained_model(cfg: &GsmConfig) -> BdnnModel {
    let hidden = default_hidden_layout(cfg.mod_order()).expect("benchmark modulations have defaults");
    let layout = network_layout(cfg, &hidden);
    let nets = (0..cfg.n_active())
        .map(|k| init_network(&layout, k as u64).expect("valid layout"))
        .collect();
    BdnnModel::new(cfg, nets, FeatureMode::Absolute).expect("layout matches config")
}

/// Benchmark geometries: `(label, config)`.
pub fn configs() -> Vec<(&'static str, GsmConfig)> {
    vec![
        ("4x2_np2_qpsk", GsmConfig::new(4, 2, 2, 4).expect("valid")),
        ("16x4_np2_qpsk", GsmConfig::new(16, 4, 2, 4).expect("valid")),
    ]
}
