//! Synthetic sparse-regression instances, an exhaustive global oracle,
//! hard-thresholding baselines and a benchmark runner.

pub mod bench;
pub mod generator;
pub mod iht;
pub mod metrics;
pub mod oracle;

pub use bench::{run_benchmark, BenchConfig, BenchReport, Method};
pub use generator::{generate_lsr_instance, LsrInstance, NoiseSpec};
pub use iht::{iht, iht_multistart, iht_warm_start, lipschitz_constant, IhtOptions};
pub use metrics::{compute_metrics, Metrics};
pub use oracle::{brute_force_global, brute_force_global_bitmask, OracleSolution};
