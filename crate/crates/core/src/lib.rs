//! Machine-unlearning comparison workbench: synthetic datasets, a small MLP,
//! unlearning methods, accuracy and distribution-based privacy metrics,
//! representation analysis, and a persistent model registry.

pub mod dataset;
pub mod error;
pub mod experiments;
pub mod json;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod privacy;
pub mod registry;
pub mod repr;
pub mod rng;
pub mod train;
pub mod unlearn;

pub use dataset::{DatasetSpec, ForgetPartition, LabeledDataset, Split};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use metrics::AccuracySummary;
pub use nn::{ArchitectureSpec, Mlp};
pub use privacy::{AttackDirection, PrivacyReport, Statistic};
pub use train::{EpochRecord, ModelKind, TrainConfig};
pub use unlearn::{HyperGrid, Method, MethodRegistry, UnlearnConfig};
