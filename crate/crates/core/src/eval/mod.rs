//! Accuracy metrics, run records and the local spurious feature protocol.

pub mod metrics;
pub mod protocol;
pub mod record;

pub use metrics::{accuracy, masked_argmax, mean_std, omega, predict, to_matrix};
pub use protocol::{local_spurious_protocol, mean_gaps, random_projection_trunk, GapReport, GapRow, HeadGap, ProtocolConfig, TaskGap};
pub use record::{metric, overfit_report, MetricEntry, OverfitRow, RunRecord, Split};
