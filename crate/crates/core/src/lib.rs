//! Channel capacity of binary communication schemes built on photon-number
//! entangled states (twin beams and pair-coherent states) when both parties
//! use realistic photodetectors with sub-unit efficiency and dark counts.
//!
//! The pipeline is
//! [`states`] (per-mode photon statistics) →
//! [`detector`] (count kernel `K(s|n)` of a noisy detector) →
//! [`channel`] (joint counts, threshold decoding, mutual information) →
//! [`sweep`] (parameter sweeps with CSV/JSON output).

pub mod channel;
pub mod cli;
pub mod detector;
pub mod error;
pub mod format;
pub mod numerics;
pub mod states;
pub mod sweep;
pub mod validate;

pub use channel::{
    capacity, confusion_matrix, joint_distribution, mutual_information, CapacityResult,
    ConfusionMatrix, JointCountDistribution,
};
pub use detector::{
    build_kernel, count_prob_closed, count_prob_oracle, transfer_amplitude, CountKernel,
    DetectorModel, NoiseModel, NoiseStatistics,
};
pub use error::{Error, Result};
pub use states::{build_state, Family, PhotonNumberDistribution, PnesState};
