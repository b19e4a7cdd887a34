//! End-to-end reranking strategies: JointRank (one parallel batch over an
//! overlapping block design) and the full-context and sliding-window
//! baselines.

use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, extract_comparisons, AggregatorConfig, TournamentGraph};
use crate::designs::{can_be_connected, is_connected, DesignFamily, DesignSpec};
use crate::error::{invalid, Error, Result};
use crate::model::{validate_candidates, validate_design, BlockDesign, Candidate, Ranking};
use crate::rankers::{dispatch_blocks, DispatchConfig, DispatchReport, ListwiseRanker, UsageRecord};

/// How the number of blocks is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BlockCount {
    /// Target replication `r`; the block count is `round(r·N / k)`.
    Replication(f64),
    Explicit(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRankConfig {
    pub design_family: DesignFamily,
    pub k: usize,
    pub blocks: BlockCount,
    pub aggregator: AggregatorConfig,
    pub dispatch: DispatchConfig,
    pub seed: u64,
    /// Reseeding attempts for EBD designs that come out disconnected. Zero
    /// accepts a disconnected design with a warning.
    pub connectivity_attempts: usize,
    /// Sliding-window designs only: wrap the last window to the first.
    pub cyclic_window: bool,
}

impl Default for JointRankConfig {
    fn default() -> Self {
        Self {
            design_family: DesignFamily::Ebd,
            k: 20,
            blocks: BlockCount::Replication(4.0),
            aggregator: AggregatorConfig::default(),
            dispatch: DispatchConfig::default(),
            seed: 0,
            connectivity_attempts: 10,
            cyclic_window: true,
        }
    }
}

impl JointRankConfig {
    /// Block count for `n` candidates.
    pub fn block_count(&self, n: usize) -> Result<usize> {
        match self.blocks {
            BlockCount::Explicit(b) => Ok(b),
            BlockCount::Replication(r) => {
                if !(r > 0.0) || !r.is_finite() {
                    return Err(invalid(format!("replication must be positive, got {r}")));
                }
                Ok(((r * n as f64) / self.k as f64).round().max(1.0) as usize)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankResult {
    /// Permutation over candidate indices, where index `i` is the candidate
    /// with `initial_rank == i`.
    pub ranking: Ranking,
    /// External ids in reranked order.
    pub ranked_ids: Vec<String>,
    pub inference_count: usize,
    pub usage_total: UsageRecord,
    pub dispatch_report: DispatchReport,
    pub warnings: Vec<String>,
}

/// Candidates reordered by `initial_rank`, so that position equals index.
fn first_stage_order(candidates: &[Candidate]) -> Result<Vec<Candidate>> {
    validate_candidates(candidates)?;
    let mut ordered = candidates.to_vec();
    ordered.sort_by_key(|c| c.initial_rank);
    Ok(ordered)
}

fn finish(
    ordered: &[Candidate],
    ranking: Ranking,
    report: DispatchReport,
    mut warnings: Vec<String>,
) -> RerankResult {
    warnings.extend(report.warnings.iter().cloned());
    RerankResult {
        ranked_ids: ranking
            .order()
            .iter()
            .map(|&i| ordered[i].external_id.clone())
            .collect(),
        inference_count: report.calls(),
        usage_total: report.usage_total(),
        ranking,
        dispatch_report: report,
        warnings,
    }
}

/// Builds the design for `n` candidates, reseeding randomized families until
/// the design is connected.
pub fn build_design(n: usize, cfg: &JointRankConfig) -> Result<(BlockDesign, Vec<String>)> {
    if n < 2 {
        return Err(invalid("need at least 2 candidates"));
    }
    if cfg.k < 2 || cfg.k > n {
        return Err(invalid(format!("need 2 <= k <= N, got k={} N={n}", cfg.k)));
    }
    let b = cfg.block_count(n)?;
    let spec = DesignSpec {
        family: cfg.design_family,
        v: n,
        k: cfg.k,
        b,
        cyclic: cfg.cyclic_window,
    };
    let mut warnings = Vec::new();
    let enforce = cfg.design_family == DesignFamily::Ebd && cfg.connectivity_attempts > 0;
    if enforce && !can_be_connected(n, cfg.k, b) {
        return Err(Error::Construction(format!(
            "{b} blocks of size {} cannot connect {n} items; raise b or k, or set connectivity_attempts = 0",
            cfg.k
        )));
    }
    let attempts = if enforce { cfg.connectivity_attempts } else { 1 };
    for attempt in 0..attempts {
        let design = spec.build(cfg.seed.wrapping_add(attempt as u64))?;
        let report = validate_design(&design);
        if !report.is_valid() {
            return Err(Error::Construction(format!(
                "{} design failed validation: {}",
                cfg.design_family, report.violations[0]
            )));
        }
        if is_connected(&design) {
            return Ok((design, warnings));
        }
        if !enforce {
            warnings.push(format!("{} design is not connected", cfg.design_family));
            return Ok((design, warnings));
        }
        log::debug!("ebd attempt {attempt} disconnected, reseeding");
    }
    Err(Error::Construction(format!(
        "no connected design after {attempts} attempts"
    )))
}

/// Everything JointRank computes before aggregation.
#[derive(Debug, Clone)]
pub struct JointRankGraph {
    pub design: BlockDesign,
    pub graph: TournamentGraph,
    pub dispatch_report: DispatchReport,
    pub warnings: Vec<String>,
    ordered: Vec<Candidate>,
}

impl JointRankGraph {
    /// Aggregates with the first-stage order as tiebreak.
    pub fn rerank(&self, aggregator: &AggregatorConfig) -> Result<RerankResult> {
        let tiebreak = Ranking::identity(self.ordered.len());
        let agg = aggregate(&self.graph, aggregator, &tiebreak)?;
        let mut warnings = self.warnings.clone();
        if !agg.converged {
            warnings.push(format!(
                "{} did not converge in {} iterations",
                aggregator.method, agg.iterations
            ));
        }
        Ok(finish(&self.ordered, agg.ranking, self.dispatch_report.clone(), warnings))
    }
}

/// Builds the design, ranks every block in one dispatch batch and extracts
/// the tournament graph.
pub fn jointrank_graph<R: ListwiseRanker + ?Sized>(
    query: &str,
    candidates: &[Candidate],
    cfg: &JointRankConfig,
    ranker: &R,
) -> Result<JointRankGraph> {
    let ordered = first_stage_order(candidates)?;
    let (design, warnings) = build_design(ordered.len(), cfg)?;
    let (rankings, dispatch_report) = dispatch_blocks(ranker, query, &ordered, design.blocks(), &cfg.dispatch)?;
    let graph = extract_comparisons(&rankings, ordered.len())?;
    Ok(JointRankGraph {
        design,
        graph,
        dispatch_report,
        warnings,
        ordered,
    })
}

/// Reranks `candidates` with a single parallel pass over overlapping blocks.
pub fn jointrank_rerank<R: ListwiseRanker + ?Sized>(
    query: &str,
    candidates: &[Candidate],
    cfg: &JointRankConfig,
    ranker: &R,
) -> Result<RerankResult> {
    cfg.aggregator.validate()?;
    jointrank_graph(query, candidates, cfg, ranker)?.rerank(&cfg.aggregator)
}

/// One ranker call over the whole candidate list.
pub fn full_context_rerank<R: ListwiseRanker + ?Sized>(
    query: &str,
    candidates: &[Candidate],
    ranker: &R,
    dispatch: &DispatchConfig,
) -> Result<RerankResult> {
    let ordered = first_stage_order(candidates)?;
    if ordered.is_empty() {
        return Err(invalid("need at least 1 candidate"));
    }
    let cfg = DispatchConfig {
        max_inflight: 1,
        ..*dispatch
    };
    let block: Vec<usize> = (0..ordered.len()).collect();
    let (rankings, report) = dispatch_blocks(ranker, query, &ordered, &[block], &cfg)?;
    let ranking = Ranking::new(rankings[0].order.clone())?;
    Ok(finish(&ordered, ranking, report, Vec::new()))
}

/// Window start positions of one bottom-to-top pass: `N-w, N-w-s, …`,
/// clipped at 0.
pub fn window_starts(n: usize, w: usize, s: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut start = n - w;
    loop {
        starts.push(start);
        if start == 0 {
            break;
        }
        start = start.saturating_sub(s);
    }
    starts
}

/// One bottom-to-top sliding-window pass with window `w` and step `s`;
/// each window is reranked in place.
pub fn sliding_window_rerank<R: ListwiseRanker + ?Sized>(
    query: &str,
    candidates: &[Candidate],
    w: usize,
    s: usize,
    ranker: &R,
    dispatch: &DispatchConfig,
) -> Result<RerankResult> {
    let ordered = first_stage_order(candidates)?;
    let n = ordered.len();
    if !(1 <= s && s < w && w <= n) {
        return Err(invalid(format!("need 1 <= s < w <= N, got s={s} w={w} N={n}")));
    }
    let cfg = DispatchConfig {
        max_inflight: 1,
        ..*dispatch
    };
    let mut current: Vec<usize> = (0..n).collect();
    let mut report = DispatchReport {
        max_inflight: 1,
        ..DispatchReport::default()
    };
    for (step, start) in window_starts(n, w, s).into_iter().enumerate() {
        let window = current[start..start + w].to_vec();
        let (rankings, mut sub) = dispatch_blocks(ranker, query, &ordered, &[window], &cfg)?;
        current[start..start + w].copy_from_slice(&rankings[0].order);
        for block in &mut sub.blocks {
            block.block_index = step;
        }
        report.blocks.extend(sub.blocks);
        report.wall_time += sub.wall_time;
        report.warnings.extend(sub.warnings);
    }
    let ranking = Ranking::new(current)?;
    Ok(finish(&ordered, ranking, report, Vec::new()))
}
