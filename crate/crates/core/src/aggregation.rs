//! Tournament graphs built from block rankings and the aggregators that turn
//! them into a single consensus ranking.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{check_permutation, BlockRanking, ItemIndex, Ranking, ScoreVector};

/// Weighted "beats" counts over `v` items. Stored sparsely as triplets
/// `(winner, loser, count)` sorted by `(winner, loser)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TournamentGraph {
    v: usize,
    edges: Vec<(u32, u32, u32)>,
}

/// Dense counting is used up to this many items; larger graphs go through a
/// sort-and-merge of the raw comparisons.
const DENSE_LIMIT: usize = 4096;

impl TournamentGraph {
    /// Builds a graph from `(winner, loser, count)` triplets. Repeated pairs
    /// are summed; zero counts are dropped.
    pub fn from_triplets(v: usize, triplets: impl IntoIterator<Item = (usize, usize, u32)>) -> Result<Self> {
        let mut edges = Vec::new();
        for (w, l, c) in triplets {
            for index in [w, l] {
                if index >= v {
                    return Err(Error::IndexOutOfRange { index, v });
                }
            }
            if w == l {
                return Err(invalid(format!("self-comparison on item {w}")));
            }
            if c > 0 {
                edges.push((w as u32, l as u32, c));
            }
        }
        Ok(Self::from_unsorted(v, edges))
    }

    fn from_unsorted(v: usize, mut edges: Vec<(u32, u32, u32)>) -> Self {
        edges.sort_unstable_by_key(|&(w, l, _)| (w, l));
        let mut merged: Vec<(u32, u32, u32)> = Vec::with_capacity(edges.len());
        for (w, l, c) in edges {
            match merged.last_mut() {
                Some(last) if last.0 == w && last.1 == l => last.2 += c,
                _ => merged.push((w, l, c)),
            }
        }
        Self { v, edges: merged }
    }

    pub fn empty(v: usize) -> Self {
        Self { v, edges: Vec::new() }
    }

    pub fn v(&self) -> usize {
        self.v
    }

    /// Number of times `i` was ranked above `j`.
    pub fn wins(&self, i: ItemIndex, j: ItemIndex) -> u32 {
        self.edges
            .binary_search_by_key(&(i as u32, j as u32), |&(w, l, _)| (w, l))
            .map(|idx| self.edges[idx].2)
            .unwrap_or(0)
    }

    /// `(winner, loser, count)` with nonzero count.
    pub fn edges(&self) -> impl Iterator<Item = (ItemIndex, ItemIndex, u32)> + '_ {
        self.edges
            .iter()
            .map(|&(w, l, c)| (w as usize, l as usize, c))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn total_weight(&self) -> u64 {
        self.edges.iter().map(|e| u64::from(e.2)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Per-item total wins and losses.
    pub fn win_loss_totals(&self) -> (Vec<f64>, Vec<f64>) {
        let mut wins = vec![0.0; self.v];
        let mut losses = vec![0.0; self.v];
        for &(w, l, c) in &self.edges {
            wins[w as usize] += f64::from(c);
            losses[l as usize] += f64::from(c);
        }
        (wins, losses)
    }

    /// Applies an item relabeling: item `i` becomes `perm[i]`.
    pub fn relabel(&self, perm: &[ItemIndex]) -> Result<Self> {
        if perm.len() != self.v {
            return Err(invalid("relabeling must cover every item"));
        }
        check_permutation(perm)?;
        let edges = self
            .edges
            .iter()
            .map(|&(w, l, c)| (perm[w as usize] as u32, perm[l as usize] as u32, c))
            .collect();
        Ok(Self::from_unsorted(self.v, edges))
    }

    /// Reads `i j weight` lines (winner, loser, count). `v` is taken as one
    /// more than the largest index unless given.
    pub fn read_triplets<R: std::io::BufRead>(input: R, v: Option<usize>) -> Result<Self> {
        let mut triplets = Vec::new();
        let mut max_index = 0usize;
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            let parse_err = |message: String| Error::Parse {
                line: lineno + 1,
                message,
            };
            if fields.len() != 3 {
                return Err(parse_err(format!("expected `i j weight`, got {trimmed:?}")));
            }
            let i: usize = fields[0].parse().map_err(|_| parse_err(format!("bad index {:?}", fields[0])))?;
            let j: usize = fields[1].parse().map_err(|_| parse_err(format!("bad index {:?}", fields[1])))?;
            let w: u32 = fields[2].parse().map_err(|_| parse_err(format!("bad weight {:?}", fields[2])))?;
            max_index = max_index.max(i).max(j);
            triplets.push((i, j, w));
        }
        let v = v.unwrap_or(if triplets.is_empty() { 0 } else { max_index + 1 });
        Self::from_triplets(v, triplets)
    }

    pub fn write_triplets<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        for (w, l, c) in self.edges() {
            writeln!(out, "{w} {l} {c}")?;
        }
        Ok(())
    }
}

/// Turns block rankings into a tournament graph: within each ranking
/// `(d_1, …, d_k)`, item `d_i` beats `d_j` for every `i < j`.
pub fn extract_comparisons(block_rankings: &[BlockRanking], v: usize) -> Result<TournamentGraph> {
    for br in block_rankings {
        let mut seen = std::collections::HashSet::with_capacity(br.order.len());
        for &item in &br.order {
            if item >= v {
                return Err(Error::IndexOutOfRange { index: item, v });
            }
            if !seen.insert(item) {
                return Err(Error::InvalidRanking(format!(
                    "item {item} repeated in ranking of block {}",
                    br.block_index
                )));
            }
        }
    }

    if v <= DENSE_LIMIT {
        let mut counts = vec![0u32; v * v];
        for br in block_rankings {
            for (a, &winner) in br.order.iter().enumerate() {
                let row = &mut counts[winner * v..(winner + 1) * v];
                for &loser in &br.order[a + 1..] {
                    row[loser] += 1;
                }
            }
        }
        let edges = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(idx, &c)| ((idx / v) as u32, (idx % v) as u32, c))
            .collect();
        // Row-major scan already yields (winner, loser) order.
        Ok(TournamentGraph { v, edges })
    } else {
        let mut raw = Vec::new();
        for br in block_rankings {
            for (a, &winner) in br.order.iter().enumerate() {
                for &loser in &br.order[a + 1..] {
                    raw.push((winner as u32, loser as u32, 1));
                }
            }
        }
        Ok(TournamentGraph::from_unsorted(v, raw))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMethod {
    PageRank,
    WinRate,
    Elo,
    RankCentrality,
    BradleyTerry,
    Eigen,
}

impl AggregationMethod {
    pub const ALL: [AggregationMethod; 6] = [
        AggregationMethod::PageRank,
        AggregationMethod::Elo,
        AggregationMethod::WinRate,
        AggregationMethod::RankCentrality,
        AggregationMethod::Eigen,
        AggregationMethod::BradleyTerry,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregationMethod::PageRank => "pagerank",
            AggregationMethod::WinRate => "winrate",
            AggregationMethod::Elo => "elo",
            AggregationMethod::RankCentrality => "rank_centrality",
            AggregationMethod::BradleyTerry => "bradley_terry",
            AggregationMethod::Eigen => "eigen",
        }
    }
}

impl fmt::Display for AggregationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "pagerank" => Ok(AggregationMethod::PageRank),
            "winrate" | "averagewinrate" => Ok(AggregationMethod::WinRate),
            "elo" => Ok(AggregationMethod::Elo),
            "rankcentrality" => Ok(AggregationMethod::RankCentrality),
            "bradleyterry" | "bt" => Ok(AggregationMethod::BradleyTerry),
            "eigen" | "eigenvector" => Ok(AggregationMethod::Eigen),
            _ => Err(invalid(format!("unknown aggregation method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatorConfig {
    pub method: AggregationMethod,
    /// PageRank damping factor.
    pub damping: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub elo_k: f64,
    pub elo_initial: f64,
    pub regularization: f64,
    /// Shuffles the comparison sequence fed to Elo.
    pub seed: u64,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self {
            method: AggregationMethod::PageRank,
            damping: 0.85,
            tolerance: 1e-9,
            max_iterations: 1000,
            elo_k: 32.0,
            elo_initial: 1500.0,
            regularization: 0.0,
            seed: 0,
        }
    }
}

impl AggregatorConfig {
    pub fn with_method(method: AggregationMethod) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(invalid(format!("damping must be in (0, 1), got {}", self.damping)));
        }
        if !(self.tolerance > 0.0) {
            return Err(invalid("tolerance must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be >= 1"));
        }
        if !(self.regularization >= 0.0) || !self.elo_k.is_finite() || !self.elo_initial.is_finite() {
            return Err(invalid("regularization and Elo parameters must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Result of one aggregation. `converged` is false when an iterative method
/// hit `max_iterations`; the last iterate is still returned.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub ranking: Ranking,
    pub iterations: usize,
    pub converged: bool,
}

/// Recovers a global ranking from a tournament graph.
///
/// Scores are sorted descending; ties keep the order given by `tiebreak`.
/// An empty graph returns `tiebreak` unchanged.
pub fn aggregate(graph: &TournamentGraph, cfg: &AggregatorConfig, tiebreak: &Ranking) -> Result<Aggregation> {
    cfg.validate()?;
    let v = graph.v();
    if tiebreak.len() != v {
        return Err(invalid(format!(
            "tiebreak ranks {} items, graph has {v}",
            tiebreak.len()
        )));
    }
    if graph.is_empty() {
        let scores = ScoreVector::new(vec![0.0; v])?;
        return Ok(Aggregation {
            ranking: Ranking::with_scores(tiebreak.order().to_vec(), scores)?,
            iterations: 0,
            converged: true,
        });
    }

    let (scores, iterations, converged) = match cfg.method {
        AggregationMethod::PageRank => pagerank(graph, cfg),
        AggregationMethod::WinRate => (winrate(graph), 0, true),
        AggregationMethod::Elo => (elo(graph, cfg), 1, true),
        AggregationMethod::RankCentrality => rank_centrality(graph, cfg),
        AggregationMethod::BradleyTerry => bradley_terry(graph, cfg),
        AggregationMethod::Eigen => eigen(graph, cfg),
    };
    if !converged {
        log::warn!(
            "{} did not converge after {iterations} iterations",
            cfg.method
        );
    }
    let scores: Vec<f64> = scores
        .into_iter()
        .map(|s| if s.is_finite() { s } else { 0.0 })
        .collect();
    let order = order_by_scores(&scores, tiebreak);
    Ok(Aggregation {
        ranking: Ranking::with_scores(order, ScoreVector::new(scores)?)?,
        iterations,
        converged,
    })
}

/// Sorts items by descending score, breaking ties by position in `tiebreak`.
pub fn order_by_scores(scores: &[f64], tiebreak: &Ranking) -> Vec<ItemIndex> {
    let mut order = tiebreak.order().to_vec();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Damped PageRank over edges loser → winner weighted by the win count.
/// Dangling items (never beaten) spread their mass uniformly.
fn pagerank(graph: &TournamentGraph, cfg: &AggregatorConfig) -> (Vec<f64>, usize, bool) {
    let v = graph.v();
    let nf = v as f64;
    let (_, losses) = graph.win_loss_totals();
    // (winner, loser, transition weight) with weight normalized by the loser's out-degree
    let transitions: Vec<(usize, usize, f64)> = graph
        .edges()
        .map(|(w, l, c)| (w, l, f64::from(c) / losses[l]))
        .collect();

    let mut rank = vec![1.0 / nf; v];
    let mut next = vec![0.0; v];
    for iteration in 1..=cfg.max_iterations {
        let dangling: f64 = rank
            .iter()
            .zip(&losses)
            .filter(|(_, &out)| out == 0.0)
            .map(|(r, _)| r)
            .sum();
        let base = (1.0 - cfg.damping) / nf + cfg.damping * dangling / nf;
        next.iter_mut().for_each(|x| *x = base);
        for &(w, l, p) in &transitions {
            next[w] += cfg.damping * rank[l] * p;
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        let delta = l1_distance(&next, &rank);
        std::mem::swap(&mut rank, &mut next);
        if delta < cfg.tolerance {
            return (rank, iteration, true);
        }
    }
    (rank, cfg.max_iterations, false)
}

/// Average winrate: the mean, over an item's distinct opponents, of the
/// share of their mutual comparisons it won; 0.5 for items never compared.
/// Pairs that co-occur in several blocks therefore count once, so uneven
/// co-occurrence does not tilt the score.
fn winrate(graph: &TournamentGraph) -> Vec<f64> {
    let v = graph.v();
    let mut rate_sum = vec![0.0; v];
    let mut opponents = vec![0usize; v];
    for (w, l, c) in graph.edges() {
        let back = graph.wins(l, w);
        let rate = f64::from(c) / f64::from(c + back);
        rate_sum[w] += rate;
        opponents[w] += 1;
        if back == 0 {
            // the loser has no edge of its own for this pair
            opponents[l] += 1;
        }
    }
    rate_sum
        .iter()
        .zip(&opponents)
        .map(|(&s, &n)| if n > 0 { s / n as f64 } else { 0.5 })
        .collect()
}

/// One pass of the standard Elo update over every individual comparison,
/// in an order shuffled by `cfg.seed`.
fn elo(graph: &TournamentGraph, cfg: &AggregatorConfig) -> Vec<f64> {
    let mut games: Vec<(u32, u32)> = Vec::with_capacity(graph.total_weight() as usize);
    for (w, l, c) in graph.edges() {
        games.extend(std::iter::repeat_n((w as u32, l as u32), c as usize));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    games.shuffle(&mut rng);
    elo_ratings(graph.v(), &games, cfg)
}

/// Elo ratings after playing `games` (winner, loser) in the given order.
///
/// The shuffle in [`aggregate`] is drawn over the label-sorted comparison
/// list, so relabeling items changes the sequence Elo sees; equivariance
/// holds for a fixed sequence, which is what this entry point exposes.
pub fn elo_ratings(v: usize, games: &[(u32, u32)], cfg: &AggregatorConfig) -> Vec<f64> {
    let mut rating = vec![cfg.elo_initial; v];
    for &(w, l) in games {
        let (w, l) = (w as usize, l as usize);
        let expected_w = 1.0 / (1.0 + 10f64.powf((rating[l] - rating[w]) / 400.0));
        let delta = cfg.elo_k * (1.0 - expected_w);
        rating[w] += delta;
        rating[l] -= delta;
    }
    rating
}

/// Stationary distribution of the comparison random walk.
///
/// From `i` the walk moves to `j` with probability `a_ij / d_max`, where
/// `a_ij = (wins of j over i + ε) / (comparisons of i and j + 2ε)` is the
/// smoothed fraction of their comparisons that `j` won. With `ε > 0` every
/// ordered pair receives the pseudo-count, so uncompared pairs get
/// `a_ij = 1/2`, `d_max = v - 1`, and the chain is ergodic. With `ε = 0`
/// only compared pairs carry transitions and `d_max` is the largest number
/// of distinct opponents.
fn rank_centrality(graph: &TournamentGraph, cfg: &AggregatorConfig) -> (Vec<f64>, usize, bool) {
    let v = graph.v();
    let nf = v as f64;
    let eps = cfg.regularization;
    let mut pair_totals: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
    for (w, l, c) in graph.edges() {
        *pair_totals.entry((w.min(l), w.max(l))).or_default() += f64::from(c);
    }
    let smoothed = eps > 0.0;
    let d_max = if smoothed {
        (v - 1).max(1) as f64
    } else {
        let mut degree = vec![0usize; v];
        for &(a, b) in pair_totals.keys() {
            degree[a] += 1;
            degree[b] += 1;
        }
        degree.into_iter().max().unwrap_or(1).max(1) as f64
    };
    let base = if smoothed { 0.5 / d_max } else { 0.0 };

    // Transition i -> j for compared pairs, stored as the excess over `base`.
    let mut excess: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * pair_totals.len());
    for (&(a, b), &n) in &pair_totals {
        let (wa, wb) = (f64::from(graph.wins(a, b)), f64::from(graph.wins(b, a)));
        let a_to_b = (wb + eps) / (n + 2.0 * eps) / d_max;
        let b_to_a = (wa + eps) / (n + 2.0 * eps) / d_max;
        excess.push((a, b, a_to_b - base));
        excess.push((b, a, b_to_a - base));
    }
    let mut stay = vec![1.0 - base * (nf - 1.0); v];
    for &(from, _, p) in &excess {
        stay[from] -= p;
    }

    let mut pi = vec![1.0 / nf; v];
    let mut next = vec![0.0; v];
    for iteration in 1..=cfg.max_iterations {
        let total: f64 = pi.iter().sum();
        for j in 0..v {
            next[j] = pi[j] * stay[j] + base * (total - pi[j]);
        }
        for &(from, to, p) in &excess {
            next[to] += pi[from] * p;
        }
        let sum: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= sum);
        let delta = l1_distance(&next, &pi);
        std::mem::swap(&mut pi, &mut next);
        if delta < cfg.tolerance {
            return (pi, iteration, true);
        }
    }
    (pi, cfg.max_iterations, false)
}

/// Minorize–maximize updates for the Bradley–Terry model,
/// `p_i ← (W_i + ε) / Σ_j n_ij / (p_i + p_j)`, rescaled to unit geometric
/// mean after every sweep.
///
/// Without a pseudo-count an item that never wins collapses to zero, the
/// geometric mean vanishes and every score becomes non-finite; the ranking
/// then falls back to the tiebreak order. The maximum-likelihood estimate
/// only exists when the comparison graph is strongly connected.
fn bradley_terry(graph: &TournamentGraph, cfg: &AggregatorConfig) -> (Vec<f64>, usize, bool) {
    let v = graph.v();
    let (wins, _) = graph.win_loss_totals();
    let mut pair_totals: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
    for (w, l, c) in graph.edges() {
        *pair_totals.entry((w.min(l), w.max(l))).or_default() += f64::from(c);
    }
    let pairs: Vec<(usize, usize, f64)> = pair_totals.into_iter().map(|((a, b), n)| (a, b, n)).collect();

    let mut p = vec![1.0; v];
    let mut denom = vec![0.0; v];
    for iteration in 1..=cfg.max_iterations {
        denom.iter_mut().for_each(|d| *d = 0.0);
        for &(a, b, n) in &pairs {
            let t = n / (p[a] + p[b]);
            denom[a] += t;
            denom[b] += t;
        }
        let mut next: Vec<f64> = (0..v)
            .map(|i| {
                if denom[i] > 0.0 {
                    (wins[i] + cfg.regularization) / denom[i]
                } else {
                    p[i]
                }
            })
            .collect();
        let log_mean = next.iter().map(|x| x.ln()).sum::<f64>() / v as f64;
        let scale = log_mean.exp();
        next.iter_mut().for_each(|x| *x /= scale);
        let delta = l1_distance(&next, &p);
        p = next;
        if delta < cfg.tolerance {
            return (p, iteration, true);
        }
    }
    (p, cfg.max_iterations, false)
}

/// Principal eigenvector of `W + ε·J` by power iteration, where
/// `W[i][j]` counts wins of `i` over `j`.
///
/// For a consistent (acyclic) tournament `W` is nilpotent, so with `ε = 0`
/// the iterate vanishes and the ranking falls back to the tiebreak order.
fn eigen(graph: &TournamentGraph, cfg: &AggregatorConfig) -> (Vec<f64>, usize, bool) {
    let v = graph.v();
    let eps = cfg.regularization;
    let mut x = vec![1.0 / v as f64; v];
    let mut next = vec![0.0; v];
    for iteration in 1..=cfg.max_iterations {
        let total: f64 = x.iter().sum();
        next.iter_mut().for_each(|y| *y = eps * total);
        for (w, l, c) in graph.edges() {
            next[w] += f64::from(c) * x[l];
        }
        let sum: f64 = next.iter().sum();
        next.iter_mut().for_each(|y| *y /= sum);
        let delta = l1_distance(&next, &x);
        std::mem::swap(&mut x, &mut next);
        if delta < cfg.tolerance {
            return (x, iteration, true);
        }
    }
    (x, cfg.max_iterations, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Complete consistent tournament generated by `order` (best first),
    /// built pair by pair without going through block rankings.
    fn complete_tournament(order: &[usize]) -> TournamentGraph {
        let mut triplets = Vec::new();
        for a in 0..order.len() {
            for b in a + 1..order.len() {
                triplets.push((order[a], order[b], 1));
            }
        }
        TournamentGraph::from_triplets(order.len(), triplets).unwrap()
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    fn run(graph: &TournamentGraph, method: AggregationMethod) -> Aggregation {
        let cfg = AggregatorConfig::with_method(method);
        aggregate(graph, &cfg, &Ranking::identity(graph.v())).unwrap()
    }

    fn scores(agg: &Aggregation) -> Vec<f64> {
        agg.ranking.scores().unwrap().as_slice().to_vec()
    }

    #[test]
    fn single_block_ranking_gives_all_pairs() {
        let g = extract_comparisons(&[BlockRanking { block_index: 0, order: vec![2, 0, 1] }], 3).unwrap();
        let edges: Vec<_> = g.edges().collect();
        assert_eq!(edges, vec![(0, 1, 1), (2, 0, 1), (2, 1, 1)]);
    }

    #[test]
    fn inconsistent_pairs_are_retained() {
        let g = extract_comparisons(&[BlockRanking { block_index: 0, order: vec![0, 1] }, BlockRanking { block_index: 1, order: vec![1, 0] }], 2).unwrap();
        assert_eq!((g.wins(0, 1), g.wins(1, 0)), (1, 1));
    }

    #[test]
    fn extraction_rejects_bad_rankings() {
        assert!(matches!(
            extract_comparisons(&[BlockRanking { block_index: 0, order: vec![0, 5] }], 3),
            Err(Error::IndexOutOfRange { index: 5, v: 3 })
        ));
        assert!(extract_comparisons(&[BlockRanking { block_index: 0, order: vec![1, 1] }], 3).is_err());
    }

    #[test]
    fn dense_and_sparse_extraction_agree() {
        // Same comparisons placed on item ids above and below the dense limit.
        let order = vec![7, 3, 9, 1, 4];
        let small = extract_comparisons(&[BlockRanking { block_index: 0, order: order.clone() }], 10).unwrap();
        let shift = DENSE_LIMIT;
        let big_order: Vec<usize> = order.iter().map(|i| i + shift).collect();
        let big = extract_comparisons(&[BlockRanking { block_index: 0, order: big_order }], shift + 10).unwrap();
        let shifted: Vec<_> = small.edges().map(|(w, l, c)| (w + shift, l + shift, c)).collect();
        assert_eq!(big.edges().collect::<Vec<_>>(), shifted);
    }

    #[test]
    fn ebd_total_weight() {
        let design = crate::designs::build_equireplicate(100, 10, 20, 5).unwrap();
        let rankings: Vec<BlockRanking> = design
            .blocks()
            .iter()
            .enumerate()
            .map(|(i, b)| BlockRanking { block_index: i, order: b.clone() })
            .collect();
        let g = extract_comparisons(&rankings, 100).unwrap();
        assert_eq!(g.total_weight(), 20 * 45);
    }

    #[test]
    fn chain_pagerank() {
        let g = TournamentGraph::from_triplets(3, [(0, 1, 1), (1, 2, 1), (0, 2, 1)]).unwrap();
        assert_eq!(run(&g, AggregationMethod::PageRank).ranking.order(), &[0, 1, 2]);
    }

    #[test]
    fn complete_tournament_on_five_items() {
        let recovering = [
            AggregationMethod::PageRank,
            AggregationMethod::WinRate,
            AggregationMethod::Elo,
            AggregationMethod::RankCentrality,
        ];
        for order in permutations(5) {
            let g = complete_tournament(&order);
            for method in recovering {
                assert_eq!(run(&g, method).ranking.order(), order.as_slice(), "{method}");
            }
        }
    }

    #[test]
    fn pagerank_and_winrate_recover_every_order_up_to_six() {
        for v in 1..=6 {
            for order in permutations(v) {
                let g = complete_tournament(&order);
                for method in [AggregationMethod::PageRank, AggregationMethod::WinRate] {
                    assert_eq!(run(&g, method).ranking.order(), order.as_slice());
                }
            }
        }
    }

    #[test]
    fn unregularized_bt_and_eigen_degenerate_on_acyclic_input() {
        let g = complete_tournament(&[4, 2, 0, 3, 1]);
        for method in [AggregationMethod::BradleyTerry, AggregationMethod::Eigen] {
            let agg = run(&g, method);
            assert_ne!(agg.ranking.order(), &[4, 2, 0, 3, 1], "{method}");
        }
        // A pseudo-count restores them.
        for method in [AggregationMethod::BradleyTerry, AggregationMethod::Eigen] {
            let cfg = AggregatorConfig {
                regularization: 1e-3,
                ..AggregatorConfig::with_method(method)
            };
            let agg = aggregate(&g, &cfg, &Ranking::identity(5)).unwrap();
            assert_eq!(agg.ranking.order(), &[4, 2, 0, 3, 1], "{method}");
        }
    }

    #[test]
    fn empty_graph_returns_tiebreak() {
        let tiebreak = Ranking::new(vec![2, 0, 3, 1]).unwrap();
        for method in AggregationMethod::ALL {
            let cfg = AggregatorConfig::with_method(method);
            let agg = aggregate(&TournamentGraph::empty(4), &cfg, &tiebreak).unwrap();
            assert_eq!(agg.ranking.order(), tiebreak.order());
        }
    }

    #[test]
    fn ties_follow_tiebreak() {
        // 0 and 1 each beat 2 once and are never compared with each other.
        let g = TournamentGraph::from_triplets(3, [(0, 2, 1), (1, 2, 1)]).unwrap();
        let tiebreak = Ranking::new(vec![1, 0, 2]).unwrap();
        let cfg = AggregatorConfig::with_method(AggregationMethod::WinRate);
        assert_eq!(aggregate(&g, &cfg, &tiebreak).unwrap().ranking.order(), &[1, 0, 2]);
    }

    #[test]
    fn winrate_values() {
        let g = TournamentGraph::from_triplets(4, [(0, 1, 3), (1, 0, 1), (1, 2, 1)]).unwrap();
        // item 1: 1/4 against item 0, 1/1 against item 2
        assert_eq!(scores(&run(&g, AggregationMethod::WinRate)), vec![0.75, 0.625, 0.0, 0.5]);
    }

    #[test]
    fn winrate_counts_each_opponent_once() {
        // 0 > 1 > 2, but the 1-2 pair was compared three times
        let g = TournamentGraph::from_triplets(3, [(0, 1, 1), (0, 2, 1), (1, 2, 3)]).unwrap();
        assert_eq!(scores(&run(&g, AggregationMethod::WinRate)), vec![1.0, 0.5, 0.0]);
    }

    #[test]
    fn elo_single_game() {
        let g = TournamentGraph::from_triplets(2, [(1, 0, 1)]).unwrap();
        assert_eq!(scores(&run(&g, AggregationMethod::Elo)), vec![1484.0, 1516.0]);
    }

    #[test]
    fn non_convergence_is_flagged() {
        let g = complete_tournament(&[0, 1, 2, 3]);
        let cfg = AggregatorConfig {
            max_iterations: 1,
            ..AggregatorConfig::default()
        };
        let agg = aggregate(&g, &cfg, &Ranking::identity(4)).unwrap();
        assert!(!agg.converged);
        assert_eq!(agg.iterations, 1);
    }

    #[test]
    fn rejects_bad_config_and_tiebreak() {
        let g = complete_tournament(&[0, 1]);
        let cfg = AggregatorConfig {
            damping: 1.0,
            ..AggregatorConfig::default()
        };
        assert!(aggregate(&g, &cfg, &Ranking::identity(2)).is_err());
        assert!(aggregate(&g, &AggregatorConfig::default(), &Ranking::identity(3)).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in AggregationMethod::ALL {
            assert_eq!(m.name().parse::<AggregationMethod>().unwrap(), m);
        }
        assert_eq!("Bradley-Terry".parse::<AggregationMethod>().unwrap(), AggregationMethod::BradleyTerry);
        assert!("borda".parse::<AggregationMethod>().is_err());
    }

    #[test]
    fn triplet_io_round_trip() {
        let g = TournamentGraph::from_triplets(6, [(5, 1, 2), (0, 3, 1), (5, 1, 1)]).unwrap();
        let mut buf = Vec::new();
        g.write_triplets(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "0 3 1\n5 1 3\n");
        assert_eq!(TournamentGraph::read_triplets(buf.as_slice(), Some(6)).unwrap(), g);
        let err = TournamentGraph::read_triplets("# c\n0 1 1\n0 1\n".as_bytes(), None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    fn graph_strategy() -> impl Strategy<Value = TournamentGraph> {
        (2usize..12).prop_flat_map(|v| {
            proptest::collection::vec((0..v, 0..v, 1u32..4), 1..40).prop_map(move |raw| {
                let triplets: Vec<_> = raw.into_iter().filter(|(a, b, _)| a != b).collect();
                TournamentGraph::from_triplets(v, triplets).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn pagerank_sums_to_one(g in graph_strategy()) {
            let agg = run(&g, AggregationMethod::PageRank);
            prop_assume!(agg.converged && !g.is_empty());
            prop_assert!((scores(&agg).iter().sum::<f64>() - 1.0).abs() < 1e-8);
        }

        #[test]
        fn winrate_ignores_duplication(g in graph_strategy(), times in 2u32..5) {
            let doubled = TournamentGraph::from_triplets(g.v(), g.edges().map(|(w, l, c)| (w, l, c * times))).unwrap();
            prop_assert_eq!(scores(&run(&g, AggregationMethod::WinRate)), scores(&run(&doubled, AggregationMethod::WinRate)));
        }

        #[test]
        fn deterministic(g in graph_strategy(), seed in any::<u64>()) {
            for method in AggregationMethod::ALL {
                let cfg = AggregatorConfig { seed, ..AggregatorConfig::with_method(method) };
                let tb = Ranking::identity(g.v());
                prop_assert_eq!(aggregate(&g, &cfg, &tb).unwrap(), aggregate(&g, &cfg, &tb).unwrap());
            }
        }

        #[test]
        fn score_equivariance(g in graph_strategy(), perm_seed in any::<u64>()) {
            let mut perm: Vec<usize> = (0..g.v()).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
            let relabeled = g.relabel(&perm).unwrap();
            for method in AggregationMethod::ALL {
                if method == AggregationMethod::Elo {
                    continue;
                }
                let a = scores(&run(&g, method));
                let b = scores(&run(&relabeled, method));
                for i in 0..g.v() {
                    let tol = 1e-7 * a[i].abs().max(1.0);
                    prop_assert!((a[i] - b[perm[i]]).abs() <= tol, "{} item {}: {} vs {}", method, i, a[i], b[perm[i]]);
                }
            }
        }

        #[test]
        fn elo_equivariance_for_fixed_sequence(g in graph_strategy(), perm_seed in any::<u64>()) {
            let mut perm: Vec<usize> = (0..g.v()).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
            let games: Vec<(u32, u32)> = g.edges().flat_map(|(w, l, c)| std::iter::repeat_n((w as u32, l as u32), c as usize)).collect();
            let mapped: Vec<(u32, u32)> = games.iter().map(|&(w, l)| (perm[w as usize] as u32, perm[l as usize] as u32)).collect();
            let cfg = AggregatorConfig::with_method(AggregationMethod::Elo);
            let a = elo_ratings(g.v(), &games, &cfg);
            let b = elo_ratings(g.v(), &mapped, &cfg);
            for i in 0..g.v() {
                prop_assert_eq!(a[i], b[perm[i]]);
            }
        }

        #[test]
        fn complete_tournament_on_eight(perm_seed in any::<u64>()) {
            let mut order: Vec<usize> = (0..8).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
            let g = complete_tournament(&order);
            for method in [AggregationMethod::PageRank, AggregationMethod::WinRate] {
                let agg = run(&g, method);
                prop_assert_eq!(agg.ranking.order(), order.as_slice());
            }
        }
    }
}
