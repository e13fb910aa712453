//! Segmented training, prediction and leave-one-out evaluation.

pub mod crossval;
pub mod dataset;
pub mod model;
pub mod segmentation;

pub use crossval::{
    compare_baseline, loo_crossval, loo_crossval_against, summary_table, within_tolerance, BaselineComparison,
    CrossValConfig, CrossValReport, SummaryRow,
};
pub use dataset::{build_gap_matrix, GapDataset, MissingPolicy, UnitScan};
pub use model::{predict, train, train_model, Prediction, RegionFit, ShimModel, TrainConfig};
pub use segmentation::{Region, ShimSegmentation};
