//! Oracle experiments on synthetic relevance.
//!
//! Each trial gives the `v` items the relevances `2^1 … 2^v` in random
//! order, ranks every block of the design with the oracle ranker, aggregates,
//! and scores the result with nDCG (raw relevance as gain) and Accuracy@1.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregationMethod, AggregatorConfig};
use crate::designs::{can_be_connected, coverage_stats, CoverageStats, DesignFamily, DesignSpec};
use crate::error::{invalid, Result};
use crate::eval::metrics::{accuracy_at_1, ndcg_of_ranking};
use crate::exec::{map_indexed, Execution};
use crate::model::{BlockDesign, Candidate, Ranking};
use crate::pipeline::{jointrank_graph, BlockCount, JointRankConfig};
use crate::rankers::{DispatchConfig, OracleRanker};

/// Largest `v` for which `2^v` is finite in double precision with headroom
/// for DCG sums.
pub const MAX_SYNTHETIC_V: usize = 1020;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub v: usize,
    pub design: DesignFamily,
    pub k: usize,
    pub b: usize,
    pub aggregators: Vec<AggregationMethod>,
    pub trials: usize,
    pub seed: u64,
    pub cutoff: usize,
    /// Parameters shared by every aggregator; `method` and `seed` are
    /// overridden per run.
    pub aggregator_params: AggregatorConfig,
    pub cyclic_window: bool,
    pub execution: Execution,
}

impl SyntheticConfig {
    pub fn new(design: DesignFamily, v: usize, k: usize, b: usize) -> Self {
        Self {
            v,
            design,
            k,
            b,
            aggregators: vec![AggregationMethod::PageRank],
            trials: 1000,
            seed: 0,
            cutoff: 10,
            aggregator_params: AggregatorConfig::default(),
            cyclic_window: true,
            execution: Execution::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials must be >= 1"));
        }
        if self.v < self.k {
            return Err(invalid(format!("need v >= k, got v={} k={}", self.v, self.k)));
        }
        if self.v > MAX_SYNTHETIC_V {
            return Err(invalid(format!(
                "v = {} exceeds {MAX_SYNTHETIC_V}; 2^v would overflow",
                self.v
            )));
        }
        if self.cutoff == 0 {
            return Err(invalid("cutoff must be >= 1"));
        }
        if self.aggregators.is_empty() {
            return Err(invalid("at least one aggregator is required"));
        }
        self.aggregator_params.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub design: DesignFamily,
    pub aggregator: AggregationMethod,
    pub v: usize,
    pub k: usize,
    pub b: usize,
    pub trials: usize,
    pub ndcg_mean: f64,
    pub ndcg_stderr: f64,
    pub acc1_mean: f64,
    pub acc1_stderr: f64,
}

impl SummaryRow {
    pub const CSV_HEADER: &'static str = "design,aggregator,v,k,b,trials,ndcg_mean,ndcg_stderr,acc1_mean,acc1_stderr";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.4},{:.4},{:.4},{:.4}",
            self.design,
            self.aggregator,
            self.v,
            self.k,
            self.b,
            self.trials,
            self.ndcg_mean,
            self.ndcg_stderr,
            self.acc1_mean,
            self.acc1_stderr
        )
    }
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Relevance `2^(π(i)+1)` for a uniformly random permutation `π`.
pub fn synthetic_relevance(v: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut grades: Vec<i32> = (1..=v as i32).collect();
    grades.shuffle(rng);
    grades.into_iter().map(|g| 2f64.powi(g)).collect()
}

/// Per-trial metrics: one `(ndcg, acc1)` per aggregator.
fn run_trial(cfg: &SyntheticConfig, trial: usize) -> Result<Vec<(f64, f64)>> {
    let trial_seed = cfg.seed.wrapping_add(trial as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    let relevance = synthetic_relevance(cfg.v, &mut rng);
    let design_seed: u64 = rng.gen();

    let candidates: Vec<Candidate> = (0..cfg.v).map(|i| Candidate::new(i.to_string(), "", i)).collect();
    let oracle = OracleRanker::from_indexed(&relevance);
    let jr_cfg = JointRankConfig {
        design_family: cfg.design,
        k: cfg.k,
        blocks: BlockCount::Explicit(cfg.b),
        aggregator: cfg.aggregator_params,
        dispatch: DispatchConfig::sequential(),
        seed: design_seed,
        // Sweep points such as r = 1 are disconnected by construction; they
        // are measured as sampled rather than rejected.
        connectivity_attempts: if can_be_connected(cfg.v, cfg.k, cfg.b) { 10 } else { 0 },
        cyclic_window: cfg.cyclic_window,
    };
    let prepared = jointrank_graph("", &candidates, &jr_cfg, &oracle)?;
    cfg.aggregators
        .iter()
        .map(|&method| {
            let agg = AggregatorConfig {
                method,
                seed: trial_seed,
                ..cfg.aggregator_params
            };
            let result = prepared.rerank(&agg)?;
            Ok((
                ndcg_of_ranking(&result.ranking, &relevance, cfg.cutoff),
                accuracy_at_1(&result.ranking, &relevance),
            ))
        })
        .collect()
}

/// Runs `cfg.trials` seeded trials and returns one summary row per
/// aggregator. Trial `t` is seeded with `seed + t`, so results are
/// bit-identical across runs and execution modes.
pub fn run_synthetic(cfg: &SyntheticConfig) -> Result<Vec<SummaryRow>> {
    cfg.validate()?;
    let per_trial = map_indexed(cfg.trials, cfg.execution, |t| run_trial(cfg, t))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(cfg
        .aggregators
        .iter()
        .enumerate()
        .map(|(a, &aggregator)| {
            let ndcg: Vec<f64> = per_trial.iter().map(|m| m[a].0).collect();
            let acc: Vec<f64> = per_trial.iter().map(|m| m[a].1).collect();
            let (ndcg_mean, ndcg_stderr) = mean_and_stderr(&ndcg);
            let (acc1_mean, acc1_stderr) = mean_and_stderr(&acc);
            SummaryRow {
                design: cfg.design,
                aggregator,
                v: cfg.v,
                k: cfg.k,
                b: cfg.b,
                trials: cfg.trials,
                ndcg_mean,
                ndcg_stderr,
                acc1_mean,
                acc1_stderr,
            }
        })
        .collect())
}

/// Cross product of design parameters for a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub v: usize,
    pub designs: Vec<DesignFamily>,
    pub ks: Vec<usize>,
    pub bs: Vec<usize>,
    pub aggregators: Vec<AggregationMethod>,
    pub trials: usize,
    pub seed: u64,
    pub cutoff: usize,
    pub execution: Execution,
}

/// Runs every `(design, k, b)` point of the grid. Points the design family
/// cannot be built for are skipped with a log message.
pub fn run_sweep(grid: &SweepGrid) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for &design in &grid.designs {
        for &k in &grid.ks {
            for &b in &grid.bs {
                let mut cfg = SyntheticConfig::new(design, grid.v, k, b);
                cfg.aggregators = grid.aggregators.clone();
                cfg.trials = grid.trials;
                cfg.seed = grid.seed;
                cfg.cutoff = grid.cutoff;
                cfg.execution = grid.execution;
                if let Err(e) = DesignSpec::new(design, grid.v, k, b).build(0) {
                    log::info!("skipping {design} k={k} b={b}: {e}");
                    continue;
                }
                rows.extend(run_synthetic(&cfg)?);
            }
        }
    }
    Ok(rows)
}

/// Averages [`CoverageStats`] over `trials` seeded designs, drawing a fresh
/// random ground-truth order per trial for second-order coverage.
pub fn run_coverage(spec: &DesignSpec, trials: usize, seed: u64, execution: Execution) -> Result<CoverageStats> {
    coverage_trials(trials, seed, execution, |trial_seed| spec.build(trial_seed))
}

/// Like [`run_coverage`] for a fixed design: only the ground-truth order
/// varies across trials.
pub fn run_coverage_of(design: &BlockDesign, trials: usize, seed: u64, execution: Execution) -> Result<CoverageStats> {
    coverage_trials(trials, seed, execution, |_| Ok(design.clone()))
}

fn coverage_trials<F>(trials: usize, seed: u64, execution: Execution, design_for: F) -> Result<CoverageStats>
where
    F: Fn(u64) -> Result<BlockDesign> + Sync + Send,
{
    if trials == 0 {
        return Err(invalid("trials must be >= 1"));
    }
    let stats = map_indexed(trials, execution, |t| {
        let trial_seed = seed.wrapping_add(t as u64);
        let design = design_for(trial_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut order: Vec<usize> = (0..design.v()).collect();
        order.shuffle(&mut rng);
        coverage_stats(&design, Some(&Ranking::new(order)?))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(CoverageStats::mean(&stats).expect("trials >= 1"))
}
