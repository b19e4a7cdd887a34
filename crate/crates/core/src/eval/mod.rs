//! Metrics, synthetic oracle experiments, coverage statistics and IR file
//! interop.

pub mod config;
pub mod metrics;
pub mod synthetic;
pub mod trec;

pub use metrics::{accuracy_at_1, ndcg_at_k, ndcg_of_ranking};
pub use synthetic::{run_coverage, run_sweep, run_synthetic, SummaryRow, SweepGrid, SyntheticConfig};
pub use trec::{evaluate_run, read_qrels, read_run, write_run, QrelSet, Run};
