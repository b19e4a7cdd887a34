//! Block design constructors and coverage diagnostics.
//!
//! Five families are supported: uniformly random blocks, cyclic (or plain)
//! sliding windows, randomized equi-replicate designs, and the two
//! partially balanced constructions built from a Latin-square grid and from
//! the triangular association scheme.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{BlockDesign, ItemIndex, Ranking};

/// Upper bound on full reshuffles while repairing an equi-replicate design.
pub const MAX_EBD_RESAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignFamily {
    Random,
    Window,
    Ebd,
    Latin,
    Triangular,
}

impl DesignFamily {
    pub const ALL: [DesignFamily; 5] = [
        DesignFamily::Random,
        DesignFamily::Window,
        DesignFamily::Ebd,
        DesignFamily::Latin,
        DesignFamily::Triangular,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DesignFamily::Random => "random",
            DesignFamily::Window => "window",
            DesignFamily::Ebd => "ebd",
            DesignFamily::Latin => "latin",
            DesignFamily::Triangular => "triangular",
        }
    }

    /// Whether the construction consumes randomness.
    pub fn is_randomized(self) -> bool {
        matches!(self, DesignFamily::Random | DesignFamily::Ebd)
    }
}

impl fmt::Display for DesignFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DesignFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(DesignFamily::Random),
            "window" | "sliding" | "slidingwindow" => Ok(DesignFamily::Window),
            "ebd" | "equireplicate" => Ok(DesignFamily::Ebd),
            "latin" => Ok(DesignFamily::Latin),
            "triangular" => Ok(DesignFamily::Triangular),
            other => Err(invalid(format!("unknown design family {other:?}"))),
        }
    }
}

/// Parameters for building a design of any family.
///
/// Latin and triangular designs are fully determined by their size: a Latin
/// square uses `k` (with `v = k²`) and a triangular design uses `b` (with
/// `v = b(b-1)/2`). `v` is checked against the implied value for both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DesignSpec {
    pub family: DesignFamily,
    pub v: usize,
    pub k: usize,
    pub b: usize,
    /// Sliding window only: wrap the last window around to the first item.
    pub cyclic: bool,
}

impl DesignSpec {
    pub fn new(family: DesignFamily, v: usize, k: usize, b: usize) -> Self {
        Self {
            family,
            v,
            k,
            b,
            cyclic: true,
        }
    }

    pub fn build(&self, seed: u64) -> Result<BlockDesign> {
        match self.family {
            DesignFamily::Random => build_random(self.v, self.k, self.b, seed),
            DesignFamily::Window => build_sliding_window_with(self.v, self.k, self.b, self.cyclic),
            DesignFamily::Ebd => build_equireplicate(self.v, self.k, self.b, seed),
            DesignFamily::Latin => {
                if self.v != self.k * self.k || self.b != 2 * self.k {
                    return Err(invalid(format!(
                        "latin design needs v = k² and b = 2k, got v={} k={} b={}",
                        self.v, self.k, self.b
                    )));
                }
                build_latin_square(self.k)
            }
            DesignFamily::Triangular => {
                if self.b < 3 || self.v != self.b * (self.b - 1) / 2 || self.k != self.b - 1 {
                    return Err(invalid(format!(
                        "triangular design needs v = b(b-1)/2 and k = b-1, got v={} k={} b={}",
                        self.v, self.k, self.b
                    )));
                }
                build_triangular(self.b)
            }
        }
    }
}

fn check_common(v: usize, k: usize, b: usize) -> Result<()> {
    if k < 2 || k > v {
        return Err(invalid(format!("need 2 <= k <= v, got k={k} v={v}")));
    }
    if b == 0 {
        return Err(invalid("need b >= 1"));
    }
    Ok(())
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `b` independent uniform `k`-subsets of `[0, v)`, each in random order.
pub fn build_random(v: usize, k: usize, b: usize, seed: u64) -> Result<BlockDesign> {
    check_common(v, k, b)?;
    let mut rng = rng_for(seed);
    let mut pool: Vec<ItemIndex> = (0..v).collect();
    let blocks = (0..b)
        .map(|_| {
            let (chosen, _) = pool.partial_shuffle(&mut rng, k);
            chosen.to_vec()
        })
        .collect();
    Ok(BlockDesign::new(v, k, blocks))
}

/// Cyclic sliding windows with step `round(v / b)`.
pub fn build_sliding_window(v: usize, k: usize, b: usize) -> Result<BlockDesign> {
    build_sliding_window_with(v, k, b, true)
}

/// Sliding windows with step `round(v / b)`. When `cyclic` is false, windows
/// are not wrapped: a window running past the end is shifted back to end at
/// the last item.
pub fn build_sliding_window_with(v: usize, k: usize, b: usize, cyclic: bool) -> Result<BlockDesign> {
    check_common(v, k, b)?;
    if b < v.div_ceil(k) {
        return Err(invalid(format!(
            "need b >= ceil(v/k) = {} so every item is covered, got b={b}",
            v.div_ceil(k)
        )));
    }
    let step = ((v as f64) / (b as f64)).round().max(1.0) as usize;
    if b > 1 && step >= k {
        return Err(invalid(format!(
            "window step {step} >= k = {k}: consecutive windows would not overlap"
        )));
    }
    if (b - 1) * step + k < v {
        return Err(invalid(format!(
            "windows of size {k} with step {step} reach only {} of {v} items",
            (b - 1) * step + k
        )));
    }
    let blocks = (0..b)
        .map(|j| {
            let start = j * step;
            if cyclic {
                (0..k).map(|t| (start + t) % v).collect()
            } else {
                let start = start.min(v - k);
                (start..start + k).collect()
            }
        })
        .collect();
    Ok(BlockDesign::new(v, k, blocks))
}

/// Randomized equi-replicate design: `r = ceil(bk / v)` shuffles of the
/// items are concatenated and cut into blocks of `k`, keeping the first `b`.
///
/// A block spanning two shuffles can receive the same item twice. The later
/// copy is swapped with a randomly chosen later element of its own shuffle
/// that is not yet in the block; if no such element exists the shuffle is
/// redrawn, up to [`MAX_EBD_RESAMPLES`] times.
pub fn build_equireplicate(v: usize, k: usize, b: usize, seed: u64) -> Result<BlockDesign> {
    check_common(v, k, b)?;
    let mut rng = rng_for(seed);
    let total = b * k;
    let r = total.div_ceil(v);
    let mut seq: Vec<ItemIndex> = Vec::with_capacity(r * v);
    for _ in 0..r {
        let mut shuffle: Vec<ItemIndex> = (0..v).collect();
        shuffle.shuffle(&mut rng);
        seq.extend(shuffle);
    }

    let mut in_block = vec![usize::MAX; v];
    let mut resamples = 0;
    let mut j = 0;
    while j < b {
        let start = j * k;
        let end = start + k;
        let boundary = (start / v + 1) * v;
        if boundary >= end {
            j += 1;
            continue;
        }
        // Items from the earlier shuffle occupy [start, boundary).
        for &item in &seq[start..boundary] {
            in_block[item] = j;
        }
        let shuffle_end = boundary + v;
        let mut repaired = true;
        for pos in boundary..end {
            let item = seq[pos];
            if in_block[item] != j {
                in_block[item] = j;
                continue;
            }
            let choices: Vec<usize> = (end..shuffle_end)
                .filter(|&p| in_block[seq[p]] != j)
                .collect();
            match choices.as_slice() {
                [] => {
                    repaired = false;
                    break;
                }
                _ => {
                    let swap_with = choices[rng.gen_range(0..choices.len())];
                    seq.swap(pos, swap_with);
                    in_block[seq[pos]] = j;
                }
            }
        }
        if repaired {
            j += 1;
            continue;
        }
        resamples += 1;
        if resamples > MAX_EBD_RESAMPLES {
            return Err(Error::Construction(format!(
                "could not repair duplicate items in block {j} after {MAX_EBD_RESAMPLES} resamples"
            )));
        }
        seq[boundary..shuffle_end].shuffle(&mut rng);
        // The block marks for j are stale; use a fresh tag by clearing them.
        for mark in in_block.iter_mut().filter(|m| **m == j) {
            *mark = usize::MAX;
        }
    }

    seq.truncate(total);
    let blocks = seq.chunks(k).map(<[ItemIndex]>::to_vec).collect();
    Ok(BlockDesign::new(v, k, blocks))
}

/// Rows and columns of a `k × k` grid: `v = k²`, `b = 2k`, `r = 2`.
pub fn build_latin_square(k: usize) -> Result<BlockDesign> {
    if k < 2 {
        return Err(invalid(format!("latin square needs k >= 2, got {k}")));
    }
    let rows = (0..k).map(|row| (0..k).map(|col| row * k + col).collect());
    let cols = (0..k).map(|col| (0..k).map(|row| row * k + col).collect());
    Ok(BlockDesign::new(k * k, k, rows.chain(cols).collect()))
}

/// Index of the unordered pair `{i, j}` (`i < j`) among the `n(n-1)/2`
/// pairs of `[0, n)` in lexicographic order.
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

/// Triangular scheme: items are the pairs `{i, j}` of `[0, n)`, block `i`
/// holds every pair containing `i`. `v = n(n-1)/2`, `b = n`, `k = n-1`,
/// `r = 2`, and blocks `i`, `j` share exactly the item `{i, j}`.
pub fn build_triangular(n: usize) -> Result<BlockDesign> {
    if n < 3 {
        return Err(invalid(format!("triangular design needs n >= 3, got {n}")));
    }
    let blocks = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| pair_index(n, i.min(j), i.max(j)))
                .collect()
        })
        .collect();
    Ok(BlockDesign::new(n * (n - 1) / 2, n - 1, blocks))
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

/// Necessary condition for a connected design: the item–block incidence
/// graph has `v + b` vertices and `b·k` edges, so it needs `b·k ≥ v + b − 1`.
pub fn can_be_connected(v: usize, k: usize, b: usize) -> bool {
    b * k + 1 >= v + b
}

/// True iff the item–block incidence graph forms a single component that
/// covers all `v` items.
pub fn is_connected(design: &BlockDesign) -> bool {
    let v = design.v();
    if v == 0 {
        return true;
    }
    let mut sets = DisjointSet::new(v);
    let mut components = v;
    for block in design.blocks() {
        if let Some((&first, rest)) = block.split_first() {
            for &item in rest {
                if item < v && first < v && sets.union(first, item) {
                    components -= 1;
                }
            }
        }
    }
    components == 1
}

/// Coverage and balance diagnostics of a design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    /// Fraction of item pairs sharing at least one block.
    pub direct_coverage: f64,
    /// Fraction of pairs `(a, b)` with an intermediary `c` ranked strictly
    /// between them that shares a block with each. Needs a ground-truth
    /// order. Pairs compared only directly do not count here.
    pub second_order_coverage: Option<f64>,
    /// Fraction of pairs compared directly or through such an intermediary.
    pub direct_or_second_order: Option<f64>,
    pub avg_degree: f64,
    pub min_degree: f64,
    pub max_degree: f64,
    pub cooccurrence_mean: f64,
    pub cooccurrence_max: f64,
    /// 1.0 when connected; averages of several designs give a rate.
    pub connected: f64,
}

impl CoverageStats {
    pub const CSV_HEADER: &'static str =
        "one_comparisons,two_comparisons,avg_degree,min_degree,max_degree,cooc_mean,cooc_max,conn_rate,one_or_two_comparisons";

    /// One CSV row in the column order of [`CoverageStats::CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        let opt = |x: Option<f64>| x.map(|x| format!("{x:.4}")).unwrap_or_default();
        format!(
            "{:.4},{},{:.2},{:.2},{:.2},{:.4},{:.2},{:.3},{}",
            self.direct_coverage,
            opt(self.second_order_coverage),
            self.avg_degree,
            self.min_degree,
            self.max_degree,
            self.cooccurrence_mean,
            self.cooccurrence_max,
            self.connected,
            opt(self.direct_or_second_order)
        )
    }

    /// Field-wise mean. The ground-truth dependent fields are averaged over
    /// the stats that carry them.
    pub fn mean(stats: &[CoverageStats]) -> Option<CoverageStats> {
        if stats.is_empty() {
            return None;
        }
        let n = stats.len() as f64;
        let avg = |f: fn(&CoverageStats) -> f64| stats.iter().map(f).sum::<f64>() / n;
        let avg_opt = |f: fn(&CoverageStats) -> Option<f64>| {
            let xs: Vec<f64> = stats.iter().filter_map(f).collect();
            (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
        };
        Some(CoverageStats {
            direct_coverage: avg(|s| s.direct_coverage),
            second_order_coverage: avg_opt(|s| s.second_order_coverage),
            direct_or_second_order: avg_opt(|s| s.direct_or_second_order),
            avg_degree: avg(|s| s.avg_degree),
            min_degree: avg(|s| s.min_degree),
            max_degree: avg(|s| s.max_degree),
            cooccurrence_mean: avg(|s| s.cooccurrence_mean),
            cooccurrence_max: avg(|s| s.cooccurrence_max),
            connected: avg(|s| s.connected),
        })
    }
}

/// Pair co-occurrence counts of a design, stored as a dense upper triangle.
pub struct Cooccurrence {
    v: usize,
    counts: Vec<u32>,
}

impl Cooccurrence {
    pub fn of(design: &BlockDesign) -> Self {
        let v = design.v();
        let mut counts = vec![0u32; v * v];
        for block in design.blocks() {
            for (a, &x) in block.iter().enumerate() {
                for &y in &block[a + 1..] {
                    if x != y && x < v && y < v {
                        counts[x * v + y] += 1;
                        counts[y * v + x] += 1;
                    }
                }
            }
        }
        Self { v, counts }
    }

    pub fn get(&self, a: ItemIndex, b: ItemIndex) -> u32 {
        self.counts[a * self.v + b]
    }

    fn row(&self, a: ItemIndex) -> &[u32] {
        &self.counts[a * self.v..(a + 1) * self.v]
    }
}

/// Computes [`CoverageStats`] for one design. Second-order coverage is
/// computed only when `ground_truth` is given.
pub fn coverage_stats(design: &BlockDesign, ground_truth: Option<&Ranking>) -> Result<CoverageStats> {
    let v = design.v();
    if v < 2 {
        return Err(invalid("coverage needs v >= 2"));
    }
    if let Some(gt) = ground_truth {
        if gt.len() != v {
            return Err(invalid(format!(
                "ground-truth order has {} items, design has {v}",
                gt.len()
            )));
        }
    }
    let co = Cooccurrence::of(design);
    let total_pairs = (v * (v - 1) / 2) as f64;

    let mut covered_pairs = 0usize;
    let mut cooc_sum = 0u64;
    let mut cooc_max = 0u32;
    let mut degrees = Vec::with_capacity(v);
    for a in 0..v {
        let row = co.row(a);
        let mut degree = 0usize;
        for (b, &c) in row.iter().enumerate() {
            if c > 0 {
                degree += 1;
                if b > a {
                    covered_pairs += 1;
                    cooc_sum += u64::from(c);
                    cooc_max = cooc_max.max(c);
                }
            }
        }
        degrees.push(degree as f64);
    }

    let second = ground_truth.map(|gt| second_order_counts(&co, gt));

    Ok(CoverageStats {
        direct_coverage: covered_pairs as f64 / total_pairs,
        second_order_coverage: second.map(|(bridged, _)| bridged as f64 / total_pairs),
        direct_or_second_order: second.map(|(_, either)| either as f64 / total_pairs),
        avg_degree: degrees.iter().sum::<f64>() / v as f64,
        min_degree: degrees.iter().copied().fold(f64::INFINITY, f64::min),
        max_degree: degrees.iter().copied().fold(0.0, f64::max),
        cooccurrence_mean: cooc_sum as f64 / total_pairs,
        cooccurrence_max: f64::from(cooc_max),
        connected: if is_connected(design) { 1.0 } else { 0.0 },
    })
}

/// Counts pairs bridged by an intermediary ranked strictly between them in
/// `gt`, and pairs that are bridged or directly compared. Neighbour sets are
/// kept as bitsets indexed by ground-truth position so the "between" test is
/// a bit-range query.
fn second_order_counts(co: &Cooccurrence, gt: &Ranking) -> (usize, usize) {
    let v = co.v;
    let words = v.div_ceil(64);
    let order = gt.order();
    let mut nbrs = vec![0u64; v * words];
    for (pa, &a) in order.iter().enumerate() {
        let row = co.row(a);
        for (pb, &b) in order.iter().enumerate() {
            if row[b] > 0 {
                nbrs[pa * words + pb / 64] |= 1u64 << (pb % 64);
            }
        }
    }
    let direct = |pa: usize, pb: usize| nbrs[pa * words + pb / 64] >> (pb % 64) & 1 == 1;

    let (mut bridged, mut either) = (0usize, 0usize);
    for pa in 0..v {
        for pb in pa + 1..v {
            let via = has_bit_between(&nbrs, words, pa, pb);
            bridged += usize::from(via);
            either += usize::from(via || direct(pa, pb));
        }
    }
    (bridged, either)
}

/// Whether some position strictly between `lo` and `hi` is a neighbour of
/// both `lo` and `hi`.
fn has_bit_between(nbrs: &[u64], words: usize, lo: usize, hi: usize) -> bool {
    let (first, last) = (lo + 1, hi); // half-open range [first, last)
    if first >= last {
        return false;
    }
    let ra = &nbrs[lo * words..(lo + 1) * words];
    let rb = &nbrs[hi * words..(hi + 1) * words];
    let (wf, wl) = (first / 64, (last - 1) / 64);
    for w in wf..=wl {
        let mut mask = u64::MAX;
        if w == wf {
            mask &= u64::MAX << (first % 64);
        }
        if w == wl {
            let top = (last - 1) % 64;
            mask &= if top == 63 { u64::MAX } else { (1u64 << (top + 1)) - 1 };
        }
        if ra[w] & rb[w] & mask != 0 {
            return true;
        }
    }
    false
}
