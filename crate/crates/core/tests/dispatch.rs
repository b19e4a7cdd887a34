use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use jointrank::rankers::{dispatch_blocks, DispatchConfig, ListwiseRanker, RankedBlock, RankerError, UsageRecord};
use jointrank::{jointrank_rerank, BlockCount, Candidate, DesignFamily, JointRankConfig, OracleRanker};

/// Sorts by descending numeric id after sleeping, and records how many calls
/// overlap.
struct Instrumented {
    delay: Duration,
    inflight: AtomicUsize,
    peak: AtomicUsize,
    calls: AtomicUsize,
    fail_item: Option<String>,
}

impl Instrumented {
    fn new(delay: Duration) -> Self {
        Self {
            delay,
            inflight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
            fail_item: None,
        }
    }
}

impl ListwiseRanker for Instrumented {
    fn rank_block(&self, _query: &str, items: &[Candidate]) -> Result<RankedBlock, RankerError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.inflight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        thread::sleep(self.delay);
        self.inflight.fetch_sub(1, Ordering::SeqCst);
        if let Some(bad) = &self.fail_item {
            if items.iter().any(|c| &c.external_id == bad) {
                return Err(RankerError::Transport("connection reset".into()));
            }
        }
        let mut order: Vec<usize> = (0..items.len()).collect();
        let key = |i: usize| items[i].external_id.parse::<usize>().unwrap();
        order.sort_by_key(|&i| std::cmp::Reverse(key(i)));
        Ok(RankedBlock::new(order))
    }
}

fn candidates(n: usize) -> Vec<Candidate> {
    (0..n).map(|i| Candidate::new(i.to_string(), "", i)).collect()
}

fn disjoint_blocks(b: usize, k: usize) -> Vec<Vec<usize>> {
    (0..b).map(|j| (j * k..(j + 1) * k).collect()).collect()
}

#[test]
fn never_exceeds_max_inflight() {
    for limit in [1, 3, 8] {
        let ranker = Instrumented::new(Duration::from_millis(5));
        let cfg = DispatchConfig {
            max_inflight: limit,
            ..DispatchConfig::default()
        };
        let (rankings, report) = dispatch_blocks(&ranker, "q", &candidates(100), &disjoint_blocks(25, 4), &cfg).unwrap();
        assert_eq!(rankings.len(), 25);
        assert!(ranker.peak.load(Ordering::SeqCst) <= limit);
        assert_eq!(ranker.calls.load(Ordering::SeqCst), 25);
        assert_eq!(report.calls(), 25);
        assert_eq!(report.max_inflight, limit);
    }
}

#[test]
fn full_fan_out_costs_about_one_call() {
    let delay = Duration::from_millis(200);
    let ranker = Instrumented::new(delay);
    let cfg = DispatchConfig {
        max_inflight: 20,
        ..DispatchConfig::default()
    };
    let started = Instant::now();
    dispatch_blocks(&ranker, "q", &candidates(100), &disjoint_blocks(20, 5), &cfg).unwrap();
    let wall = started.elapsed();
    assert!(wall < delay * 3, "20 parallel calls took {wall:?}");
    assert_eq!(ranker.peak.load(Ordering::SeqCst), 20);
}

#[test]
fn results_do_not_depend_on_concurrency() {
    let cands = candidates(60);
    let blocks: Vec<Vec<usize>> = (0..15).map(|j| (0..8).map(|t| (j * 7 + t * 11) % 60).collect()).collect();
    let run = |limit| {
        let ranker = Instrumented::new(Duration::from_millis(1));
        let cfg = DispatchConfig {
            max_inflight: limit,
            ..DispatchConfig::default()
        };
        dispatch_blocks(&ranker, "q", &cands, &blocks, &cfg).unwrap().0
    };
    assert_eq!(run(1), run(64));
}

#[test]
fn permanent_failure_falls_back_to_input_order() {
    let mut ranker = Instrumented::new(Duration::ZERO);
    ranker.fail_item = Some("13".into());
    let cfg = DispatchConfig {
        max_inflight: 4,
        per_call_timeout: None,
        retries: 2,
    };
    let blocks = disjoint_blocks(5, 4);
    let (rankings, report) = dispatch_blocks(&ranker, "q", &candidates(20), &blocks, &cfg).unwrap();
    assert_eq!(report.failed_blocks().collect::<Vec<_>>(), vec![3]);
    assert_eq!(report.blocks[3].attempts, 3);
    assert_eq!(rankings[3].order, vec![12, 13, 14, 15]);
    assert_eq!(rankings[2].order, vec![11, 10, 9, 8]);
    assert_eq!(ranker.calls.load(Ordering::SeqCst), 4 + 3);
    assert!(report.blocks[3].last_error.as_deref().unwrap().contains("connection reset"));
}

/// Fails the first attempt for every block, then succeeds.
struct Flaky {
    seen: Mutex<std::collections::HashSet<String>>,
}

impl ListwiseRanker for Flaky {
    fn rank_block(&self, _query: &str, items: &[Candidate]) -> Result<RankedBlock, RankerError> {
        let first = self.seen.lock().unwrap().insert(items[0].external_id.clone());
        if first {
            return Err(RankerError::Timeout(Duration::from_secs(1)));
        }
        Ok(RankedBlock {
            order: (0..items.len()).rev().collect(),
            usage: Some(UsageRecord {
                prompt_tokens: 10,
                generated_tokens: 2,
                latency: Duration::from_millis(50),
            }),
        })
    }
}

#[test]
fn retries_recover_transient_failures() {
    let ranker = Flaky {
        seen: Mutex::new(Default::default()),
    };
    let (rankings, report) = dispatch_blocks(&ranker, "q", &candidates(8), &disjoint_blocks(2, 4), &DispatchConfig::default()).unwrap();
    assert_eq!(rankings[0].order, vec![3, 2, 1, 0]);
    assert_eq!(report.calls(), 4);
    assert_eq!(report.failed_blocks().count(), 0);
    assert_eq!(report.usage_total().prompt_tokens, 20);
}

#[test]
fn slow_calls_count_as_timeouts() {
    let ranker = Instrumented::new(Duration::from_millis(30));
    let cfg = DispatchConfig {
        max_inflight: 2,
        per_call_timeout: Some(Duration::from_millis(5)),
        retries: 1,
    };
    let (rankings, report) = dispatch_blocks(&ranker, "q", &candidates(8), &disjoint_blocks(2, 4), &cfg).unwrap();
    assert_eq!(report.failed_blocks().count(), 2);
    assert_eq!(rankings[1].order, vec![4, 5, 6, 7]);
}

#[test]
fn jointrank_survives_a_dead_ranker() {
    struct Dead;
    impl ListwiseRanker for Dead {
        fn rank_block(&self, _: &str, _: &[Candidate]) -> Result<RankedBlock, RankerError> {
            Err(RankerError::Other("down".into()))
        }
    }
    let cands = candidates(50);
    let cfg = JointRankConfig {
        k: 10,
        blocks: BlockCount::Explicit(10),
        dispatch: DispatchConfig {
            retries: 0,
            ..DispatchConfig::default()
        },
        ..JointRankConfig::default()
    };
    let result = jointrank_rerank("q", &cands, &cfg, &Dead).unwrap();
    let mut sorted = result.ranking.order().to_vec();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    assert_eq!(result.ranked_ids.len(), 50);
    assert_eq!(result.dispatch_report.failed_blocks().count(), 10);
}

#[test]
fn parallel_and_sequential_pipelines_agree() {
    let rel: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
    let oracle = OracleRanker::from_indexed(&rel);
    let cands = candidates(100);
    let mut cfg = JointRankConfig {
        design_family: DesignFamily::Ebd,
        k: 20,
        blocks: BlockCount::Replication(4.0),
        seed: 9,
        ..JointRankConfig::default()
    };
    cfg.dispatch.max_inflight = 1;
    let seq = jointrank_rerank("q", &cands, &cfg, &oracle).unwrap();
    cfg.dispatch.max_inflight = 32;
    let par = jointrank_rerank("q", &cands, &cfg, &oracle).unwrap();
    assert_eq!(seq.ranking, par.ranking);
    assert_eq!(seq.inference_count, 20);
}
