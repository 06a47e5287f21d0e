//! Candidate document sampling for distillation.
//!
//! Each training query gets a candidate list drawn from up to three sources:
//! its judged (ground-truth) documents, its exact top-K documents under the
//! teacher scores, and — with in-batch sampling — the candidates the *other*
//! queries of the batch selected. Duplicates collapse to a single entry whose
//! origin tag follows source precedence: ground truth, then top-K, then
//! in-batch.

use std::collections::HashSet;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::embed::{read_ivecs, write_ivecs, EmbeddingSet, RelevanceJudgments};
use crate::error::{Error, Result};
use crate::topk::TopK;
use crate::vecmath::inner_product_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateOrigin {
    GroundTruth,
    TopK,
    InBatch,
}

/// Candidates for one query, with cached teacher scores.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub query_row: u32,
    pub doc_ids: Vec<u32>,
    pub teacher_scores: Vec<f64>,
    pub origins: Vec<CandidateOrigin>,
}

impl CandidateSet {
    pub fn new(
        query_row: u32,
        doc_ids: Vec<u32>,
        teacher_scores: Vec<f64>,
        origins: Vec<CandidateOrigin>,
    ) -> Result<Self> {
        if doc_ids.len() != teacher_scores.len() || doc_ids.len() != origins.len() {
            return Err(Error::Config("candidate buffers disagree in length".into()));
        }
        let mut seen = HashSet::with_capacity(doc_ids.len());
        if let Some(d) = doc_ids.iter().find(|d| !seen.insert(**d)) {
            return Err(Error::Config(format!(
                "duplicate candidate doc {d} for query {query_row}"
            )));
        }
        if teacher_scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite teacher score for query {query_row}"
            )));
        }
        Ok(Self {
            query_row,
            doc_ids,
            teacher_scores,
            origins,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }
}

/// How many top-K docs to keep per query: the whole pool, or a uniform
/// sample of `n` from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopkTake {
    All,
    Sample(usize),
}

impl FromStr for TopkTake {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(TopkTake::All);
        }
        s.parse::<usize>().map(TopkTake::Sample).map_err(|_| {
            Error::Config(format!("topk_take must be 'all' or an integer, got '{s}'"))
        })
    }
}

#[derive(Debug, Clone)]
pub struct SamplingStrategy {
    pub use_ground_truth: bool,
    /// Size of the per-query top-K pool (0 disables the source).
    pub topk_pool: usize,
    pub topk_take: TopkTake,
    pub use_in_batch: bool,
    pub seed: u64,
}

impl SamplingStrategy {
    /// In-batch sampling only redistributes what ground truth and top-K
    /// produced, so at least one of those must be enabled.
    pub fn validate(&self) -> Result<()> {
        if !self.use_ground_truth && self.topk_pool == 0 {
            return Err(Error::Config(
                "no candidate source yields documents: enable ground truth or a top-K pool"
                    .into(),
            ));
        }
        if let TopkTake::Sample(n) = self.topk_take {
            if n == 0 {
                return Err(Error::Config("topk_take sample size must be >= 1".into()));
            }
            if n > self.topk_pool {
                return Err(Error::Config(format!(
                    "cannot sample {n} docs from a top-{} pool",
                    self.topk_pool
                )));
            }
        }
        Ok(())
    }
}

/// Exact top-K doc ids per query under the teacher score, mined once and
/// reused across epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TopkCache {
    lists: Vec<Vec<u32>>,
}

impl TopkCache {
    pub fn new(lists: Vec<Vec<u32>>) -> Self {
        Self { lists }
    }

    pub fn query_count(&self) -> usize {
        self.lists.len()
    }

    pub fn docs_for(&self, query: usize) -> &[u32] {
        &self.lists[query]
    }

    pub fn read(path: impl AsRef<Path>, num_queries: usize) -> Result<Self> {
        let path = path.as_ref();
        let lists = read_ivecs(path)?;
        if lists.len() != num_queries {
            return Err(Error::file(
                path,
                format!(
                    "top-k cache holds {} records but the query set has {num_queries} rows",
                    lists.len()
                ),
            ));
        }
        Ok(Self { lists })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_ivecs(&self.lists, path)
    }
}

/// Teacher scores `<v_q, v_d>` for the given docs.
pub fn teacher_scores(
    query_row: u32,
    doc_ids: &[u32],
    queries: &EmbeddingSet,
    docs: &EmbeddingSet,
) -> Result<Vec<f64>> {
    if query_row as usize >= queries.count() {
        return Err(Error::Config(format!(
            "query row {query_row} out of range ({} queries)",
            queries.count()
        )));
    }
    let q = queries.row(query_row as usize);
    doc_ids
        .iter()
        .map(|d| {
            if *d as usize >= docs.count() {
                return Err(Error::Config(format!(
                    "doc id {d} out of range ({} docs)",
                    docs.count()
                )));
            }
            Ok(inner_product_f64(q, docs.row(*d as usize)))
        })
        .collect()
}

/// Exact top-K mining by teacher inner product, ties broken toward the lower
/// doc id. `k` larger than the corpus is clamped (with a warning).
pub fn mine_topk(queries: &EmbeddingSet, docs: &EmbeddingSet, k: usize) -> Result<TopkCache> {
    if queries.dim() != docs.dim() {
        return Err(Error::Config(format!(
            "query dim {} != doc dim {}",
            queries.dim(),
            docs.dim()
        )));
    }
    let k = if k > docs.count() {
        log::warn!(
            "top-k of {k} exceeds the corpus size {}; clamping",
            docs.count()
        );
        docs.count()
    } else {
        k
    };
    let lists: Vec<Vec<u32>> = (0..queries.count())
        .into_par_iter()
        .map(|qi| {
            let q = queries.row(qi);
            let mut top = TopK::new(k);
            for (d, row) in docs.rows().enumerate() {
                top.push(d as u32, inner_product_f64(q, row));
            }
            top.into_sorted().into_iter().map(|(d, _)| d).collect()
        })
        .collect();
    Ok(TopkCache { lists })
}

/// Builds candidate sets for a batch of query rows.
///
/// Per query: judged docs (if enabled), then its top-K selection, then — for
/// in-batch sampling — every other batch query's judged/top-K selection.
/// First occurrence wins on duplicates, which encodes the origin precedence.
/// Teacher scores are computed here for every surviving candidate.
pub fn sample_candidates(
    batch: &[u32],
    strategy: &SamplingStrategy,
    judgments: Option<&RelevanceJudgments>,
    topk: Option<&TopkCache>,
    queries: &EmbeddingSet,
    docs: &EmbeddingSet,
    rng: &mut impl Rng,
) -> Result<Vec<CandidateSet>> {
    strategy.validate()?;
    if strategy.use_ground_truth && judgments.is_none() {
        return Err(Error::Config(
            "ground-truth sampling requested but no judgments supplied".into(),
        ));
    }
    if strategy.topk_pool > 0 && topk.is_none() {
        return Err(Error::Config(
            "top-K sampling requested but no top-k cache supplied".into(),
        ));
    }

    // Own selections first; the RNG advances in batch order.
    let mut own: Vec<(Vec<u32>, Vec<u32>)> = Vec::with_capacity(batch.len());
    for q in batch {
        let qi = *q as usize;
        if qi >= queries.count() {
            return Err(Error::Config(format!(
                "batch query row {q} out of range ({} queries)",
                queries.count()
            )));
        }
        let gt: Vec<u32> = if strategy.use_ground_truth {
            judgments.unwrap().docs_for(qi).to_vec()
        } else {
            Vec::new()
        };
        let selected: Vec<u32> = if strategy.topk_pool > 0 {
            let cache = topk.unwrap();
            let full = cache.docs_for(qi);
            if full.len() < strategy.topk_pool.min(docs.count()) {
                return Err(Error::Config(format!(
                    "top-k cache for query {q} holds {} docs, pool of {} requested",
                    full.len(),
                    strategy.topk_pool
                )));
            }
            let pool = &full[..strategy.topk_pool.min(full.len())];
            match strategy.topk_take {
                TopkTake::All => pool.to_vec(),
                TopkTake::Sample(n) => sample_without_replacement(pool, n, rng),
            }
        } else {
            Vec::new()
        };
        own.push((gt, selected));
    }

    let mut out = Vec::with_capacity(batch.len());
    for (i, q) in batch.iter().enumerate() {
        let mut doc_ids = Vec::new();
        let mut origins = Vec::new();
        let mut seen = HashSet::new();
        let mut add = |d: u32, origin: CandidateOrigin,
                       doc_ids: &mut Vec<u32>,
                       origins: &mut Vec<CandidateOrigin>| {
            if seen.insert(d) {
                doc_ids.push(d);
                origins.push(origin);
            }
        };
        for d in &own[i].0 {
            add(*d, CandidateOrigin::GroundTruth, &mut doc_ids, &mut origins);
        }
        for d in &own[i].1 {
            add(*d, CandidateOrigin::TopK, &mut doc_ids, &mut origins);
        }
        if strategy.use_in_batch {
            for (j, other) in own.iter().enumerate() {
                if j == i {
                    continue;
                }
                for d in other.0.iter().chain(other.1.iter()) {
                    add(*d, CandidateOrigin::InBatch, &mut doc_ids, &mut origins);
                }
            }
        }
        let scores = teacher_scores(*q, &doc_ids, queries, docs)?;
        out.push(CandidateSet::new(*q, doc_ids, scores, origins)?);
    }
    Ok(out)
}

/// Uniform sample of `n` distinct elements via partial Fisher-Yates, order
/// as drawn.
fn sample_without_replacement(pool: &[u32], n: usize, rng: &mut impl Rng) -> Vec<u32> {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    let n = n.min(pool.len());
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let j = rng.gen_range(i..idx.len());
        idx.swap(i, j);
        out.push(pool[idx[i]]);
    }
    out
}
