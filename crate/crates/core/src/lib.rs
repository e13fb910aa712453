//! Predictive shimming from sparse gap measurements.
//!
//! The crate learns a low-dimensional basis for gap fields from historical
//! assemblies with robust PCA ([`rpca`]), chooses a handful of measurement
//! locations by greedy pivoted-QR volume maximization ([`sensing`]), and
//! predicts full gap fields of new assemblies from those few readings.
//! [`pipeline`] ties the pieces into the segmented leave-one-out workflow and
//! [`synth`] generates ground-truth data for exercising it.

pub mod error;
pub mod formats;
pub mod matrix;
pub mod pipeline;
pub mod randomized;
pub mod rng;
pub mod rpca;
pub mod sensing;
pub mod synth;

pub use error::{Error, MissingSensor, Result};
pub use matrix::{DenseMatrix, PivotSequence, SvdResult};
pub use randomized::RsvdConfig;
pub use rpca::{FeatureBasis, PcpConfig, RobustDecomposition, SvdMode};
pub use sensing::{Reconstruction, SensorSet};
