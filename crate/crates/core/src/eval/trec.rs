//! Qrels and run files in the whitespace-separated TREC formats, and
//! nDCG@k evaluation of a run against graded judgments.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::eval::metrics::ndcg_at_k;

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Graded relevance judgments keyed by query and document id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QrelSet {
    judgments: BTreeMap<String, HashMap<String, u32>>,
}

impl QrelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.judgments
            .entry(query_id.into())
            .or_default()
            .insert(doc_id.into(), grade);
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.judgments.get(query_id)?.get(doc_id).copied()
    }

    pub fn query(&self, query_id: &str) -> Option<&HashMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn parse(reader: impl Read) -> Result<Self> {
        let mut qrels = QrelSet::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != 4 {
                return Err(parse_err(i + 1, format!("expected 4 fields, found {}", fields.len())));
            }
            let grade: i64 = fields[3]
                .parse()
                .map_err(|_| parse_err(i + 1, format!("grade {:?} is not an integer", fields[3])))?;
            // Negative grades mark judged-nonrelevant in some collections.
            qrels.insert(fields[0], fields[2], grade.max(0) as u32);
        }
        Ok(qrels)
    }
}

pub fn read_qrels(path: impl AsRef<Path>) -> Result<QrelSet> {
    QrelSet::parse(File::open(path)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
}

/// A system run: per query, documents in rank order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run {
    pub queries: BTreeMap<String, Vec<RunEntry>>,
    pub tag: Option<String>,
}

impl Run {
    /// Document ids of `query_id` in rank order.
    pub fn ranking(&self, query_id: &str) -> Option<Vec<&str>> {
        Some(self.queries.get(query_id)?.iter().map(|e| e.doc_id.as_str()).collect())
    }

    pub fn parse(reader: impl Read) -> Result<Self> {
        let mut run = Run::default();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != 6 {
                return Err(parse_err(i + 1, format!("expected 6 fields, found {}", fields.len())));
            }
            let rank: usize = fields[3]
                .parse()
                .map_err(|_| parse_err(i + 1, format!("rank {:?} is not a positive integer", fields[3])))?;
            let score: f64 = fields[4]
                .parse()
                .map_err(|_| parse_err(i + 1, format!("score {:?} is not a number", fields[4])))?;
            run.tag.get_or_insert_with(|| fields[5].to_string());
            run.queries.entry(fields[0].to_string()).or_default().push(RunEntry {
                doc_id: fields[2].to_string(),
                rank,
                score,
            });
        }
        for entries in run.queries.values_mut() {
            entries.sort_by(|a, b| a.rank.cmp(&b.rank).then(b.score.total_cmp(&a.score)));
        }
        Ok(run)
    }
}

pub fn read_run(path: impl AsRef<Path>) -> Result<Run> {
    Run::parse(File::open(path)?)
}

/// Scores made strictly descending: a score that does not fall below its
/// predecessor is replaced by the next representable value below it. Without
/// scores, `n − position` is used.
pub fn run_scores(n: usize, scores: Option<&[f64]>) -> Vec<f64> {
    let mut out: Vec<f64> = match scores {
        Some(s) => s.iter().map(|&x| if x.is_finite() { x } else { 0.0 }).collect(),
        None => (0..n).map(|i| (n - i) as f64).collect(),
    };
    for i in 1..out.len() {
        if out[i] >= out[i - 1] {
            out[i] = out[i - 1].next_down();
        }
    }
    out
}

/// Writes one query's ranking as run lines. `scores[i]` belongs to
/// `doc_ids[i]`; scores are adjusted with [`run_scores`].
pub fn write_run_lines(
    mut out: impl Write,
    query_id: &str,
    doc_ids: &[impl AsRef<str>],
    scores: Option<&[f64]>,
    tag: &str,
) -> Result<()> {
    if let Some(s) = scores {
        if s.len() != doc_ids.len() {
            return Err(invalid(format!("{} scores for {} documents", s.len(), doc_ids.len())));
        }
    }
    for field in [query_id, tag].into_iter().chain(doc_ids.iter().map(AsRef::as_ref)) {
        if field.is_empty() || field.chars().any(char::is_whitespace) {
            return Err(invalid(format!("run field {field:?} is empty or contains whitespace")));
        }
    }
    let scores = run_scores(doc_ids.len(), scores);
    for (i, (doc, score)) in doc_ids.iter().zip(&scores).enumerate() {
        // `{}` on f64 prints the shortest string that parses back exactly.
        writeln!(out, "{query_id} Q0 {} {} {score} {tag}", doc.as_ref(), i + 1)?;
    }
    Ok(())
}

pub fn write_run(
    path: impl AsRef<Path>,
    query_id: &str,
    doc_ids: &[impl AsRef<str>],
    scores: Option<&[f64]>,
    tag: &str,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_run_lines(&mut out, query_id, doc_ids, scores, tag)?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunEvaluation {
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
}

/// Gain of a graded judgment: `2^grade − 1`.
pub fn grade_gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

/// Mean nDCG@`cutoff` over queries that appear in both the run and the
/// qrels. Unjudged documents have gain 0.
pub fn evaluate_run(run: &Run, qrels: &QrelSet, cutoff: usize) -> Result<RunEvaluation> {
    if cutoff == 0 {
        return Err(invalid("cutoff must be >= 1"));
    }
    let mut per_query = BTreeMap::new();
    for (qid, entries) in &run.queries {
        let Some(judged) = qrels.query(qid) else {
            log::warn!("query {qid} has no judgments; skipped");
            continue;
        };
        let gains: Vec<f64> = entries
            .iter()
            .map(|e| judged.get(&e.doc_id).map_or(0.0, |&g| grade_gain(g)))
            .collect();
        let mut ideal: Vec<f64> = judged.values().map(|&g| grade_gain(g)).collect();
        ideal.sort_by(|a, b| b.total_cmp(a));
        per_query.insert(qid.clone(), ndcg_at_k(&gains, &ideal, cutoff));
    }
    if per_query.is_empty() {
        return Err(Error::MissingRelevance("no run query has judgments".into()));
    }
    let mean = per_query.values().sum::<f64>() / per_query.len() as f64;
    Ok(RunEvaluation { per_query, mean })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qrels_line_format() {
        let q = QrelSet::parse("19335 0 D123 2\n\n19335 0 D9 0\n".as_bytes()).unwrap();
        assert_eq!(q.grade("19335", "D123"), Some(2));
        assert_eq!(q.grade("19335", "D9"), Some(0));
        assert_eq!(q.len(), 2);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let err = QrelSet::parse("1 0 a 1\n1 0 b x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = Run::parse("1 Q0 a 1 2.0 t\n1 Q0 b 2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn round_trip_with_tied_scores() {
        let ids: Vec<String> = (0..100).map(|i| format!("d{}", (i * 37) % 100)).collect();
        let scores: Vec<f64> = (0..100).map(|i| 0.5 - (i / 10) as f64 * 0.01).collect();
        let mut buf = Vec::new();
        write_run_lines(&mut buf, "q1", &ids, Some(&scores), "jr").unwrap();
        let run = Run::parse(buf.as_slice()).unwrap();
        let back = run.ranking("q1").unwrap();
        assert_eq!(back, ids.iter().map(String::as_str).collect::<Vec<_>>());
        let entries = &run.queries["q1"];
        for w in entries.windows(2) {
            assert!(w[0].score > w[1].score);
            assert_eq!(w[0].rank + 1, w[1].rank);
        }
        assert_eq!(entries[0].rank, 1);
        assert_eq!(entries[0].score, 0.5);
        assert_eq!(run.tag.as_deref(), Some("jr"));
    }

    #[test]
    fn rejects_whitespace_ids() {
        let mut buf = Vec::new();
        assert!(write_run_lines(&mut buf, "q", &["a b"], None, "t").is_err());
    }

    #[test]
    fn ideal_run_scores_one() {
        let mut qrels = QrelSet::new();
        for (d, g) in [("a", 0), ("b", 3), ("c", 1), ("d", 2)] {
            qrels.insert("q", d, g);
        }
        let mut buf = Vec::new();
        write_run_lines(&mut buf, "q", &["b", "d", "c", "a"], None, "t").unwrap();
        let run = Run::parse(buf.as_slice()).unwrap();
        let eval = evaluate_run(&run, &qrels, 10).unwrap();
        assert!((eval.mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gains_follow_exponential_grades() {
        let mut qrels = QrelSet::new();
        qrels.insert("q", "a", 1);
        qrels.insert("q", "b", 2);
        let mut buf = Vec::new();
        write_run_lines(&mut buf, "q", &["a", "b"], None, "t").unwrap();
        let run = Run::parse(buf.as_slice()).unwrap();
        // gains [1, 3] vs ideal [3, 1]
        let expected = (1.0 + 3.0 / 3f64.log2()) / (3.0 + 1.0 / 3f64.log2());
        assert!((evaluate_run(&run, &qrels, 10).unwrap().mean - expected).abs() < 1e-12);
    }
}
