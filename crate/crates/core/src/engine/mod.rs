//! Single-bit fault scans, sensitivity reduction and upset probability.

pub mod metric;
pub mod report;
pub mod scan;
pub mod scope;
pub mod seu;

pub use metric::{evaluate, metric_by_name, Metric, Top1Accuracy};
pub use report::{read_results_csv, write_results_csv, GroupMax, Provenance, SsippReport};
pub use scan::{clear_checkpoint, evaluate_flip, scan, ssipp, PerturbationResult, ScanOptions};
pub use scope::{BitFilter, KindFilter, LayerFilter, Sampling, ScanScope, Selector};
pub use seu::{seu_flip_probability, ProbabilityMode, SeuExposure, SeuProbability, NS_PER_MONTH, P_SINGLE_TERRESTRIAL};
