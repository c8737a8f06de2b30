//! Diagnostics over trained models: pruning sweeps, gate statistics,
//! neuron load balance, parameter accounting and decode throughput.

pub mod activation;
pub mod balance;
pub mod bench;
pub mod params;
pub mod prune;
pub mod report;

pub use activation::{activation_stats, ActivationReport, Histogram, LayerActivation, DEFAULT_NEAR_ZERO, HISTOGRAM_BINS};
pub use balance::{fraction_variance, load_balance_variance, BalanceReport};
pub use bench::{throughput_bench, BenchEntry, BenchOptions, BenchReport};
pub use params::{activated_param_count, ParamCount};
pub use prune::{keep_for_ratio, prune_scan, PrunePoint, PruneSweepResult};
pub use report::{summary_json, write_csv, write_csv_file, write_summary};
