//! JointRank: listwise reranking of a candidate list in a single parallel
//! pass. Candidates are split into overlapping blocks following a block
//! design, each block is ranked independently, and the pairwise outcomes are
//! aggregated into one global order.

pub mod aggregation;
pub mod designs;
pub mod error;
pub mod eval;
pub mod exec;
pub mod llm;
pub mod model;
pub mod pipeline;
pub mod rankers;

pub use aggregation::{aggregate, extract_comparisons, AggregationMethod, AggregatorConfig, TournamentGraph};
pub use designs::{coverage_stats, CoverageStats, DesignFamily, DesignSpec};
pub use error::{Error, Result};
pub use model::{BlockDesign, BlockRanking, Candidate, Ranking};
pub use pipeline::{
    full_context_rerank, jointrank_rerank, sliding_window_rerank, BlockCount, JointRankConfig, RerankResult,
};
pub use rankers::{dispatch_blocks, DispatchConfig, ListwiseRanker, OracleRanker};
