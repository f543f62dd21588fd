//! Configuration-driven experiments: dataset generation, training, BER/MSE
//! sweeps and CSV reporting.
//!
//! Every output is a pure function of the configuration and its master
//! seed; see [`sim`] for the seeding scheme.

pub mod config;
pub mod dataset;
pub mod report;
pub mod sim;
pub mod train;

pub use config::{Chain, Csi, DatasetKind, Detector, Estimator, Mode, SimConfig};
pub use dataset::gen_dataset;
pub use report::{emit_report, parse_csv, to_csv, MetricsRecord};
pub use sim::{run_point, run_sweep, Receiver, Setup};
