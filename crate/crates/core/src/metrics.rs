//! Retrieval quality metrics.
//!
//! Both metrics average over the queries that have at least one judged
//! document; queries without judgments are skipped. Evaluating a judgment
//! set in which *no* query has a judged document is an error rather than a
//! zero.

use crate::embed::RelevanceJudgments;
use crate::error::{Error, Result};
use crate::search::RankedResult;

/// Fraction of judged queries whose top-k results contain at least one
/// judged document.
pub fn recall_at_k(results: &[RankedResult], judgments: &RelevanceJudgments, k: usize) -> Result<f64> {
    metric_over_judged(results, judgments, k, |ranked, judged, k| {
        let hit = ranked
            .hits
            .iter()
            .take(k)
            .any(|h| judged.contains(&h.doc));
        if hit {
            1.0
        } else {
            0.0
        }
    })
}

/// Mean reciprocal rank of the first judged document within the top k,
/// zero when none appears. Ranks start at 1.
pub fn mrr_at_k(results: &[RankedResult], judgments: &RelevanceJudgments, k: usize) -> Result<f64> {
    metric_over_judged(results, judgments, k, |ranked, judged, k| {
        for (rank0, hit) in ranked.hits.iter().take(k).enumerate() {
            if judged.contains(&hit.doc) {
                return 1.0 / (rank0 + 1) as f64;
            }
        }
        0.0
    })
}

fn metric_over_judged(
    results: &[RankedResult],
    judgments: &RelevanceJudgments,
    k: usize,
    per_query: impl Fn(&RankedResult, &[u32], usize) -> f64,
) -> Result<f64> {
    if results.len() != judgments.query_count() {
        return Err(Error::Config(format!(
            "{} result lists for {} judged queries",
            results.len(),
            judgments.query_count()
        )));
    }
    if k == 0 {
        return Err(Error::Config("metric cutoff k must be >= 1".into()));
    }
    let mut total = 0.0;
    let mut judged_queries = 0usize;
    for (ranked, judged) in results.iter().zip(judgments.lists()) {
        if judged.is_empty() {
            continue;
        }
        judged_queries += 1;
        total += per_query(ranked, judged, k);
    }
    if judged_queries == 0 {
        return Err(Error::Config(
            "no query has a judged document; metrics are undefined".into(),
        ));
    }
    Ok(total / judged_queries as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::SearchHit;

    fn ranked(ids: &[u32]) -> RankedResult {
        RankedResult {
            hits: ids
                .iter()
                .enumerate()
                .map(|(i, d)| SearchHit {
                    doc: *d,
                    score: -(i as f32),
                })
                .collect(),
        }
    }

    #[test]
    fn recall_counts_any_hit_within_the_cutoff() {
        let results = vec![ranked(&[5, 1, 2]), ranked(&[7, 8, 9]), ranked(&[3, 0, 4])];
        let judgments = RelevanceJudgments::new(vec![vec![1], vec![4], vec![0, 4]]).unwrap();
        // Query 0 hits at rank 2, query 1 misses entirely, query 2 hits twice
        // (counted once).
        let r3 = recall_at_k(&results, &judgments, 3).unwrap();
        assert!((r3 - 2.0 / 3.0).abs() < 1e-12, "recall@3 = {r3}");
        let r1 = recall_at_k(&results, &judgments, 1).unwrap();
        assert!(r1.abs() < 1e-12, "recall@1 = {r1}");
    }

    #[test]
    fn mrr_uses_the_first_judged_rank() {
        let results = vec![ranked(&[5, 1, 2]), ranked(&[7, 8, 9]), ranked(&[3, 0, 4])];
        let judgments = RelevanceJudgments::new(vec![vec![1], vec![4], vec![0, 4]]).unwrap();
        // Ranks: 2, none, 2 -> (1/2 + 0 + 1/2) / 3.
        let m = mrr_at_k(&results, &judgments, 10).unwrap();
        assert!((m - (0.5 + 0.0 + 0.5) / 3.0).abs() < 1e-12, "mrr = {m}");
    }

    #[test]
    fn unjudged_queries_are_excluded_from_the_denominator() {
        let results = vec![ranked(&[1]), ranked(&[2])];
        let judgments = RelevanceJudgments::new(vec![vec![1], vec![]]).unwrap();
        let r = recall_at_k(&results, &judgments, 1).unwrap();
        assert_eq!(r, 1.0, "the unjudged query must not dilute the average");
    }

    #[test]
    fn all_unjudged_is_an_error() {
        let results = vec![ranked(&[1])];
        let judgments = RelevanceJudgments::new(vec![vec![]]).unwrap();
        assert!(recall_at_k(&results, &judgments, 1).is_err());
        assert!(mrr_at_k(&results, &judgments, 1).is_err());
    }

    #[test]
    fn shape_mismatch_and_zero_cutoff_are_errors() {
        let results = vec![ranked(&[1])];
        let judgments = RelevanceJudgments::new(vec![vec![1], vec![2]]).unwrap();
        assert!(recall_at_k(&results, &judgments, 5).is_err());
        let judgments = RelevanceJudgments::new(vec![vec![1]]).unwrap();
        assert!(recall_at_k(&results, &judgments, 0).is_err());
    }

    #[test]
    fn shorter_result_lists_than_k_still_score() {
        let results = vec![ranked(&[3])];
        let judgments = RelevanceJudgments::new(vec![vec![3]]).unwrap();
        assert_eq!(recall_at_k(&results, &judgments, 100).unwrap(), 1.0);
        assert_eq!(mrr_at_k(&results, &judgments, 100).unwrap(), 1.0);
    }
}
