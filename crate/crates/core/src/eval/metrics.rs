//! Ranking quality metrics.

use crate::model::Ranking;

/// `Σ_{i < cutoff} gain_i / log2(i + 2)`.
pub fn dcg(gains: &[f64], cutoff: usize) -> f64 {
    gains
        .iter()
        .take(cutoff)
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum()
}

/// nDCG at `cutoff`. `ideal_gains` must be sorted descending. Returns 0 when
/// the ideal DCG is zero.
pub fn ndcg_at_k(ranked_gains: &[f64], ideal_gains: &[f64], cutoff: usize) -> f64 {
    let ideal = dcg(ideal_gains, cutoff);
    if ideal <= 0.0 {
        return 0.0;
    }
    dcg(ranked_gains, cutoff) / ideal
}

/// nDCG of `ranking` against per-item gains indexed by item.
pub fn ndcg_of_ranking(ranking: &Ranking, gains: &[f64], cutoff: usize) -> f64 {
    let ranked: Vec<f64> = ranking.order().iter().take(cutoff).map(|&i| gains[i]).collect();
    let mut ideal = gains.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    ideal.truncate(cutoff);
    ndcg_at_k(&ranked, &ideal, cutoff)
}

/// 1 if the first-ranked item has the highest relevance, else 0.
pub fn accuracy_at_1(ranking: &Ranking, relevance: &[f64]) -> f64 {
    let best = relevance
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i);
    match (ranking.order().first(), best) {
        (Some(&top), Some(best)) if top == best => 1.0,
        _ => 0.0,
    }
}
