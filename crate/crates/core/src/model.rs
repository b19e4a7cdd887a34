//! Shared domain types: candidates, block designs, block rankings, scores and
//! rankings, plus structural validation of designs.
//!
//! Items are addressed by dense index in `[0, v)`. The mapping from a
//! candidate's external id to its index is fixed once, in first-stage order,
//! when a reranking call starts.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense item index in `[0, v)`.
pub type ItemIndex = usize;

/// One first-stage retrieval candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub external_id: String,
    pub text: String,
    /// Position in the first-stage list, 0-based.
    pub initial_rank: usize,
}

impl Candidate {
    pub fn new(external_id: impl Into<String>, text: impl Into<String>, initial_rank: usize) -> Self {
        Self {
            external_id: external_id.into(),
            text: text.into(),
            initial_rank,
        }
    }
}

/// Checks that ids are unique and that `initial_rank` values are a permutation
/// of `[0, N)`.
pub fn validate_candidates(candidates: &[Candidate]) -> Result<()> {
    let mut seen_ids = std::collections::HashSet::with_capacity(candidates.len());
    let mut seen_ranks = vec![false; candidates.len()];
    for c in candidates {
        if !seen_ids.insert(c.external_id.as_str()) {
            return Err(Error::InvalidParameters(format!(
                "duplicate candidate id {:?}",
                c.external_id
            )));
        }
        match seen_ranks.get_mut(c.initial_rank) {
            Some(slot) if !*slot => *slot = true,
            _ => {
                return Err(Error::InvalidParameters(format!(
                    "initial_rank {} of {:?} is out of range or repeated",
                    c.initial_rank, c.external_id
                )))
            }
        }
    }
    Ok(())
}

/// A family of blocks over the item universe `[0, v)`.
///
/// Replication is kept per item so that designs which are not equi-replicate
/// (random, clipped equi-replicate) share the same type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockDesign {
    v: usize,
    k: usize,
    blocks: Vec<Vec<ItemIndex>>,
    replication: Vec<usize>,
}

impl BlockDesign {
    /// Wraps raw blocks. No structural checks are made here; use
    /// [`validate_design`] for that. Out-of-range indices are ignored when
    /// counting replication.
    pub fn new(v: usize, k: usize, blocks: Vec<Vec<ItemIndex>>) -> Self {
        let mut replication = vec![0; v];
        for &item in blocks.iter().flatten() {
            if let Some(r) = replication.get_mut(item) {
                *r += 1;
            }
        }
        Self {
            v,
            k,
            blocks,
            replication,
        }
    }

    pub fn v(&self) -> usize {
        self.v
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn b(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Vec<ItemIndex>] {
        &self.blocks
    }

    pub fn block(&self, index: usize) -> &[ItemIndex] {
        &self.blocks[index]
    }

    pub fn replication(&self) -> &[usize] {
        &self.replication
    }

    /// Total number of item slots, `Σ |block_j|`.
    pub fn total_slots(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    /// The common replication count if every item appears equally often.
    pub fn constant_replication(&self) -> Option<usize> {
        let first = *self.replication.first()?;
        self.replication.iter().all(|&r| r == first).then_some(first)
    }

    /// Writes the flat text format: a `v k b` header, then one block per line.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {} {}", self.v, self.k, self.b())?;
        for block in &self.blocks {
            let line: Vec<String> = block.iter().map(ToString::to_string).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("design text is ASCII")
    }

    /// Parses the flat text format written by [`BlockDesign::write_text`].
    /// Blank lines and lines starting with `#` are skipped.
    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut header: Option<(usize, usize, usize)> = None;
        let mut blocks = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields = parse_usizes(trimmed, lineno + 1)?;
            if header.is_none() {
                if fields.len() != 3 {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        message: "header must be `v k b`".into(),
                    });
                }
                header = Some((fields[0], fields[1], fields[2]));
            } else {
                blocks.push(fields);
            }
        }
        let (v, k, b) = header.ok_or(Error::Parse {
            line: 0,
            message: "empty design file".into(),
        })?;
        if blocks.len() != b {
            return Err(Error::Parse {
                line: 0,
                message: format!("header declares {b} blocks, found {}", blocks.len()),
            });
        }
        Ok(Self::new(v, k, blocks))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::read_text(text.as_bytes())
    }
}

fn parse_usizes(line: &str, lineno: usize) -> Result<Vec<usize>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<usize>().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("expected a nonnegative integer, got {tok:?}"),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    DuplicateItem { item: ItemIndex },
    IndexOutOfRange { item: ItemIndex },
    WrongBlockSize { expected: usize, actual: usize },
    BlockSizeOutOfRange { k: usize, v: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub block: Option<usize>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(block) = self.block {
            write!(f, "block {block}: ")?;
        }
        match &self.kind {
            ViolationKind::DuplicateItem { item } => write!(f, "duplicate item {item}"),
            ViolationKind::IndexOutOfRange { item } => write!(f, "item {item} out of range"),
            ViolationKind::WrongBlockSize { expected, actual } => {
                write!(f, "block size {actual}, expected {expected}")
            }
            ViolationKind::BlockSizeOutOfRange { k, v } => {
                write!(f, "block size k = {k} outside [1, v = {v}]")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Reports every structural violation: out-of-range indices, repeated items
/// inside a block, and blocks whose size differs from `k`.
pub fn validate_design(design: &BlockDesign) -> ValidationReport {
    let mut violations = Vec::new();
    if design.k == 0 || design.k > design.v {
        violations.push(Violation {
            block: None,
            kind: ViolationKind::BlockSizeOutOfRange {
                k: design.k,
                v: design.v,
            },
        });
    }
    let mut seen = vec![usize::MAX; design.v];
    for (j, block) in design.blocks.iter().enumerate() {
        if block.len() != design.k {
            violations.push(Violation {
                block: Some(j),
                kind: ViolationKind::WrongBlockSize {
                    expected: design.k,
                    actual: block.len(),
                },
            });
        }
        for &item in block {
            match seen.get_mut(item) {
                None => violations.push(Violation {
                    block: Some(j),
                    kind: ViolationKind::IndexOutOfRange { item },
                }),
                Some(mark) if *mark == j => violations.push(Violation {
                    block: Some(j),
                    kind: ViolationKind::DuplicateItem { item },
                }),
                Some(mark) => *mark = j,
            }
        }
    }
    ValidationReport { violations }
}

/// One block's items, best first, as returned by a listwise ranker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockRanking {
    pub block_index: usize,
    pub order: Vec<ItemIndex>,
}

impl BlockRanking {
    /// Builds a block ranking from a permutation of block positions.
    pub fn from_positions(block_index: usize, block: &[ItemIndex], positions: &[usize]) -> Self {
        Self {
            block_index,
            order: positions.iter().map(|&p| block[p]).collect(),
        }
    }
}

/// Per-item aggregate scores. Entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidRanking(format!("score of item {i} is not finite")));
        }
        Ok(Self(scores))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A complete ranking: a permutation of `[0, v)`, most relevant first.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    order: Vec<ItemIndex>,
    scores: Option<ScoreVector>,
}

impl Ranking {
    pub fn new(order: Vec<ItemIndex>) -> Result<Self> {
        check_permutation(&order)?;
        Ok(Self {
            order,
            scores: None,
        })
    }

    pub fn with_scores(order: Vec<ItemIndex>, scores: ScoreVector) -> Result<Self> {
        check_permutation(&order)?;
        if scores.len() != order.len() {
            return Err(Error::InvalidRanking(format!(
                "{} scores for {} items",
                scores.len(),
                order.len()
            )));
        }
        Ok(Self {
            order,
            scores: Some(scores),
        })
    }

    /// The identity ranking `0, 1, …, v-1`.
    pub fn identity(v: usize) -> Self {
        Self {
            order: (0..v).collect(),
            scores: None,
        }
    }

    pub fn order(&self) -> &[ItemIndex] {
        &self.order
    }

    pub fn scores(&self) -> Option<&ScoreVector> {
        self.scores.as_ref()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// `positions()[item]` is the rank (0-based) of `item`.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.order.len()];
        for (rank, &item) in self.order.iter().enumerate() {
            pos[item] = rank;
        }
        pos
    }
}

pub(crate) fn check_permutation(order: &[usize]) -> Result<()> {
    let mut seen = vec![false; order.len()];
    for &item in order {
        match seen.get_mut(item) {
            Some(s) if !*s => *s = true,
            Some(_) => return Err(Error::InvalidRanking(format!("item {item} repeated"))),
            None => {
                return Err(Error::InvalidRanking(format!(
                    "item {item} out of range for {} items",
                    order.len()
                )))
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicate_item_is_reported_with_block_index() {
        let design = BlockDesign::new(6, 3, vec![vec![0, 1, 2], vec![3, 4, 5], vec![1, 4, 1]]);
        let report = validate_design(&design);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].block, Some(2));
        assert_eq!(report.violations[0].kind, ViolationKind::DuplicateItem { item: 1 });
        assert!(report.violations[0].to_string().contains("duplicate item"));
    }

    #[test]
    fn out_of_range_and_wrong_size_are_reported() {
        let design = BlockDesign::new(4, 2, vec![vec![0, 7], vec![1, 2, 3]]);
        let report = validate_design(&design);
        let kinds: Vec<_> = report.violations.iter().map(|v| v.kind.clone()).collect();
        assert!(kinds.contains(&ViolationKind::IndexOutOfRange { item: 7 }));
        assert!(kinds.contains(&ViolationKind::WrongBlockSize {
            expected: 2,
            actual: 3
        }));
    }

    #[test]
    fn replication_sums_to_total_slots() {
        let design = BlockDesign::new(5, 3, vec![vec![0, 1, 2], vec![2, 3, 4], vec![4, 0, 1]]);
        assert_eq!(design.replication().iter().sum::<usize>(), design.total_slots());
        assert_eq!(design.replication(), &[2, 2, 2, 1, 2]);
        assert_eq!(design.constant_replication(), None);
    }

    #[test]
    fn text_format_round_trips() {
        let design = BlockDesign::new(6, 3, vec![vec![0, 1, 2], vec![2, 3, 4], vec![4, 5, 0]]);
        let text = design.to_text();
        assert_eq!(text, "6 3 3\n0 1 2\n2 3 4\n4 5 0\n");
        assert_eq!(BlockDesign::from_text(&text).unwrap(), design);
    }

    #[test]
    fn text_format_rejects_bad_input() {
        assert!(matches!(
            BlockDesign::from_text("6 3 2\n0 1 2\n"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            BlockDesign::from_text("6 3 1\n0 x 2\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(BlockDesign::from_text("").is_err());
    }

    #[test]
    fn ranking_rejects_non_permutations() {
        assert!(Ranking::new(vec![0, 2, 1]).is_ok());
        assert!(Ranking::new(vec![0, 0, 1]).is_err());
        assert!(Ranking::new(vec![0, 3, 1]).is_err());
        assert!(ScoreVector::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn candidate_validation() {
        let ok = vec![Candidate::new("a", "", 1), Candidate::new("b", "", 0)];
        assert!(validate_candidates(&ok).is_ok());
        let dup = vec![Candidate::new("a", "", 0), Candidate::new("a", "", 1)];
        assert!(validate_candidates(&dup).is_err());
        let gap = vec![Candidate::new("a", "", 0), Candidate::new("b", "", 2)];
        assert!(validate_candidates(&gap).is_err());
    }

    proptest! {
        #[test]
        fn order_composed_with_inverse_is_identity(perm in Just((0..40usize).collect::<Vec<_>>()).prop_shuffle()) {
            let ranking = Ranking::new(perm).unwrap();
            let pos = ranking.positions();
            for (rank, &item) in ranking.order().iter().enumerate() {
                prop_assert_eq!(pos[item], rank);
            }
            for (item, &p) in pos.iter().enumerate() {
                prop_assert_eq!(ranking.order()[p], item);
            }
        }
    }
}
