//! Offline evaluation: accuracy and decision cost metrics, a seeded
//! synthetic catalog and benchmark, and the benchmark runner.

pub mod bench;
pub mod metrics;
pub mod synth;

pub use bench::{
    check_cases, config_hash, generate_benchmark, read_cases, run_benchmark, write_cases,
    BenchError, BenchOptions, BenchReport, BenchmarkCase, CaseCategory, CaseCounts, CaseFilter,
    CaseTrace, GeneratedBenchmark,
};
pub use metrics::{acc_at_k, decision_cost, mean, LogEvent, LogEventKind, MetricError, SessionLog};
pub use synth::{generate_catalog, SynthConfig, SyntheticCatalog};
