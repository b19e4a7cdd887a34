//! Listwise ranker abstraction, the oracle ranker, and the bounded-parallel
//! block dispatcher.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{invalid, Error, Result};
use crate::model::{BlockRanking, Candidate, ItemIndex};

/// Token and latency accounting for ranker calls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub prompt_tokens: u64,
    pub generated_tokens: u64,
    pub latency: Duration,
}

impl std::ops::AddAssign for UsageRecord {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.generated_tokens += rhs.generated_tokens;
        self.latency += rhs.latency;
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RankerError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("call timed out after {0:?}")]
    Timeout(Duration),
    #[error("HTTP status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("invalid ranker output: {0}")]
    InvalidOutput(String),
    #[error("{0}")]
    Other(String),
}

/// What a ranker returns for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedBlock {
    /// Permutation of input positions, best first.
    pub order: Vec<usize>,
    /// Token usage and (possibly synthetic) latency, when the ranker knows it.
    pub usage: Option<UsageRecord>,
}

impl RankedBlock {
    pub fn new(order: Vec<usize>) -> Self {
        Self { order, usage: None }
    }
}

/// A model that orders a whole set of candidates in one call.
///
/// Implementations are called concurrently from the dispatcher and must be
/// thread-safe; a ranker that is not should be dispatched with
/// `max_inflight = 1`.
pub trait ListwiseRanker: Send + Sync {
    /// Returns a permutation of `0..items.len()`, most relevant first.
    fn rank_block(&self, query: &str, items: &[Candidate]) -> std::result::Result<RankedBlock, RankerError>;
}

impl<R: ListwiseRanker + ?Sized> ListwiseRanker for &R {
    fn rank_block(&self, query: &str, items: &[Candidate]) -> std::result::Result<RankedBlock, RankerError> {
        (**self).rank_block(query, items)
    }
}

impl<R: ListwiseRanker + ?Sized> ListwiseRanker for Box<R> {
    fn rank_block(&self, query: &str, items: &[Candidate]) -> std::result::Result<RankedBlock, RankerError> {
        (**self).rank_block(query, items)
    }
}

/// Sorts `items` by descending relevance. `relevance` is indexed by item.
pub fn oracle_rank(items: &[ItemIndex], relevance: &[f64]) -> Result<Vec<ItemIndex>> {
    if let Some(&missing) = items.iter().find(|&&i| i >= relevance.len()) {
        return Err(Error::MissingRelevance(missing.to_string()));
    }
    let mut order = items.to_vec();
    order.sort_by(|&a, &b| relevance[b].total_cmp(&relevance[a]));
    Ok(order)
}

/// Ranks every block perfectly using known relevance per external id.
#[derive(Debug, Clone, Default)]
pub struct OracleRanker {
    relevance: HashMap<String, f64>,
}

impl OracleRanker {
    pub fn new(relevance: HashMap<String, f64>) -> Self {
        Self { relevance }
    }

    /// Oracle over candidates whose external ids are `0..relevance.len()`.
    pub fn from_indexed(relevance: &[f64]) -> Self {
        Self {
            relevance: relevance
                .iter()
                .enumerate()
                .map(|(i, &r)| (i.to_string(), r))
                .collect(),
        }
    }

    pub fn relevance_of(&self, id: &str) -> Option<f64> {
        self.relevance.get(id).copied()
    }
}

impl ListwiseRanker for OracleRanker {
    fn rank_block(&self, _query: &str, items: &[Candidate]) -> std::result::Result<RankedBlock, RankerError> {
        let rel = items
            .iter()
            .map(|c| {
                self.relevance_of(&c.external_id)
                    .ok_or_else(|| RankerError::InvalidOutput(format!("no relevance for {:?}", c.external_id)))
            })
            .collect::<std::result::Result<Vec<f64>, _>>()?;
        let positions: Vec<usize> = (0..items.len()).collect();
        let order = oracle_rank(&positions, &rel).map_err(|e| RankerError::Other(e.to_string()))?;
        Ok(RankedBlock::new(order))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispatchConfig {
    /// Maximum number of ranker calls in flight at once.
    pub max_inflight: usize,
    /// A call that takes longer than this counts as failed and is retried.
    pub per_call_timeout: Option<Duration>,
    pub retries: usize,
}

impl Default for DispatchConfig {
    fn default() -> Self {
        Self {
            max_inflight: 16,
            per_call_timeout: None,
            retries: 2,
        }
    }
}

impl DispatchConfig {
    pub fn sequential() -> Self {
        Self {
            max_inflight: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_inflight == 0 {
            return Err(invalid("max_inflight must be >= 1"));
        }
        Ok(())
    }
}

/// Per-block diagnostics collected by the dispatcher.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BlockReport {
    pub block_index: usize,
    /// Number of ranker calls made for this block.
    pub attempts: usize,
    /// Latency of the final attempt, as reported by the ranker when it
    /// reports one and as measured otherwise.
    pub latency: Duration,
    /// True when every attempt failed and the block fell back to input order.
    pub failed: bool,
    pub last_error: Option<String>,
    pub usage: UsageRecord,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DispatchReport {
    pub blocks: Vec<BlockReport>,
    pub wall_time: Duration,
    pub max_inflight: usize,
    pub warnings: Vec<String>,
}

impl DispatchReport {
    /// Total ranker calls, retries included.
    pub fn calls(&self) -> usize {
        self.blocks.iter().map(|b| b.attempts).sum()
    }

    pub fn failed_blocks(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocks.iter().filter(|b| b.failed).map(|b| b.block_index)
    }

    pub fn usage_total(&self) -> UsageRecord {
        let mut total = UsageRecord::default();
        for b in &self.blocks {
            total += b.usage;
        }
        total
    }

    /// Makespan of the per-block latencies when scheduled in block order on
    /// `max_inflight` lanes, each block going to the earliest-free lane.
    pub fn simulated_span(&self) -> Duration {
        let lanes = self.max_inflight.max(1);
        let mut free_at = vec![Duration::ZERO; lanes.min(self.blocks.len().max(1))];
        for b in &self.blocks {
            let lane = free_at
                .iter()
                .enumerate()
                .min_by_key(|(_, t)| **t)
                .map(|(i, _)| i)
                .unwrap_or(0);
            free_at[lane] += b.latency;
        }
        free_at.into_iter().max().unwrap_or_default()
    }
}

fn check_order(order: &[usize], n: usize) -> std::result::Result<(), RankerError> {
    if order.len() != n {
        return Err(RankerError::InvalidOutput(format!(
            "ranker returned {} positions for {n} items",
            order.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in order {
        match seen.get_mut(p) {
            Some(s) if !*s => *s = true,
            _ => return Err(RankerError::InvalidOutput(format!("position {p} invalid or repeated"))),
        }
    }
    Ok(())
}

fn rank_one<R: ListwiseRanker + ?Sized>(
    ranker: &R,
    query: &str,
    candidates: &[Candidate],
    block_index: usize,
    block: &[ItemIndex],
    cfg: &DispatchConfig,
) -> (BlockRanking, BlockReport) {
    let items: Vec<Candidate> = block.iter().map(|&i| candidates[i].clone()).collect();
    let mut report = BlockReport {
        block_index,
        ..BlockReport::default()
    };
    for _ in 0..=cfg.retries {
        report.attempts += 1;
        let started = Instant::now();
        let outcome = ranker.rank_block(query, &items);
        let elapsed = started.elapsed();
        let outcome = match outcome {
            Ok(_) if cfg.per_call_timeout.is_some_and(|t| elapsed > t) => {
                Err(RankerError::Timeout(cfg.per_call_timeout.unwrap_or_default()))
            }
            Ok(ranked) => check_order(&ranked.order, items.len()).map(|_| ranked),
            Err(e) => Err(e),
        };
        match outcome {
            Ok(ranked) => {
                let usage = ranked.usage.unwrap_or(UsageRecord {
                    latency: elapsed,
                    ..UsageRecord::default()
                });
                report.latency = usage.latency;
                report.usage += usage;
                report.last_error = None;
                return (BlockRanking::from_positions(block_index, block, &ranked.order), report);
            }
            Err(e) => {
                report.latency = elapsed;
                report.last_error = Some(e.to_string());
            }
        }
    }
    report.failed = true;
    let identity: Vec<usize> = (0..block.len()).collect();
    (BlockRanking::from_positions(block_index, block, &identity), report)
}

/// Ranks every block with `ranker`, at most `cfg.max_inflight` calls at a
/// time. Results are aligned to block index regardless of completion order.
///
/// A block whose calls all fail (error, invalid permutation, or timeout)
/// keeps its input order and is flagged in the report.
pub fn dispatch_blocks<R: ListwiseRanker + ?Sized>(
    ranker: &R,
    query: &str,
    candidates: &[Candidate],
    blocks: &[Vec<ItemIndex>],
    cfg: &DispatchConfig,
) -> Result<(Vec<BlockRanking>, DispatchReport)> {
    cfg.validate()?;
    if blocks.is_empty() {
        return Err(invalid("no blocks to dispatch"));
    }
    if let Some(&index) = blocks.iter().flatten().find(|&&i| i >= candidates.len()) {
        return Err(Error::IndexOutOfRange {
            index,
            v: candidates.len(),
        });
    }

    let started = Instant::now();
    let workers = cfg.max_inflight.min(blocks.len());
    let mut results: Vec<Option<(BlockRanking, BlockReport)>> = vec![None; blocks.len()];
    if workers == 1 {
        for (j, block) in blocks.iter().enumerate() {
            results[j] = Some(rank_one(ranker, query, candidates, j, block, cfg));
        }
    } else {
        let next = AtomicUsize::new(0);
        let slots = Mutex::new(&mut results);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let j = next.fetch_add(1, Ordering::Relaxed);
                    let Some(block) = blocks.get(j) else { break };
                    let done = rank_one(ranker, query, candidates, j, block, cfg);
                    slots.lock().expect("result lock poisoned")[j] = Some(done);
                });
            }
        });
    }

    let mut rankings = Vec::with_capacity(blocks.len());
    let mut report = DispatchReport {
        max_inflight: cfg.max_inflight,
        ..DispatchReport::default()
    };
    for slot in results {
        let (ranking, block_report) = slot.expect("every block is ranked exactly once");
        if block_report.failed {
            let msg = format!(
                "block {} fell back to input order after {} attempts: {}",
                block_report.block_index,
                block_report.attempts,
                block_report.last_error.as_deref().unwrap_or("unknown error")
            );
            log::warn!("{msg}");
            report.warnings.push(msg);
        }
        rankings.push(ranking);
        report.blocks.push(block_report);
    }
    report.wall_time = started.elapsed();
    Ok((rankings, report))
}
