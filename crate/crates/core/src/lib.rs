//! Generalized spatial modulation (GSM) MIMO link simulation and detection.
//!
//! * [`gsm`]: constellations, TAC tables and the slot bit mapping.
//! * [`channel`]: Rayleigh flat fading plus AWGN, with splittable seeds.
//! * [`detectors`]: exhaustive ML and block ZF / MMSE detectors.
//! * [`neural`]: the dense softmax classifier used by the block-DNN detector.
//! * [`bdnn`]: feature generation, training data, and block-DNN detection.
//! * [`bench`]: BER sweeps, timing and MAC complexity counts.

pub mod bdnn;
pub mod bench;
pub mod channel;
pub mod detectors;
pub mod error;
pub mod gsm;
pub mod linalg;
pub mod neural;

pub use num_complex::Complex64;

pub use bdnn::{BdnnDetector, BdnnModel, FeatureMode};
pub use channel::{ChannelRealization, NoiseSpec};
pub use detectors::{DetectionResult, Detector, DetectorKind, LinearVariant};
pub use error::{Error, Result};
pub use gsm::{Constellation, GsmConfig, TransmitSymbolBlock};
pub use linalg::{ComplexMatrix, ComplexVector};
pub use neural::DenseNetwork;
