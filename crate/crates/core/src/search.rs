//! Approximate search over the compressed index, plus the exact oracle.
//!
//! A query is first mapped through the learned transform, then routed to the
//! `nprobe` coarse lists whose centroids score highest under the inner
//! product. Within a probed list, each document's score decomposes as
//!
//! ```text
//! <q', o + u_hat> = <q', o> + sum_m <q'[m], c^m[b_m]>
//! ```
//!
//! so one table of per-codeword partial products per query covers every
//! document in the index. Accumulation is in f64; ties on the final score
//! break toward the lower doc id.

use rayon::prelude::*;

use crate::embed::EmbeddingSet;
use crate::error::{Error, Result};
use crate::index::IndexArtifact;
use crate::topk::TopK;
use crate::transform::QueryTransform;
use crate::vecmath::inner_product_f64;

pub const DEFAULT_NPROBE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchParams {
    /// Coarse lists visited per query.
    pub nprobe: usize,
    /// Results returned per query.
    pub k: usize,
}

impl SearchParams {
    pub fn new(nprobe: usize, k: usize) -> Result<Self> {
        if nprobe == 0 {
            return Err(Error::Config("nprobe must be >= 1".into()));
        }
        if k == 0 {
            return Err(Error::Config("search k must be >= 1".into()));
        }
        Ok(Self { nprobe, k })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchHit {
    pub doc: u32,
    pub score: f32,
}

/// Hits for one query, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedResult {
    pub hits: Vec<SearchHit>,
}

impl RankedResult {
    pub fn doc_ids(&self) -> Vec<u32> {
        self.hits.iter().map(|h| h.doc).collect()
    }
}

/// Per-query lookup table of codeword partial scores.
///
/// `partials[m][p]` holds `<q'_m, c^m_p>` for subvector m and codeword p.
#[derive(Debug, Clone)]
pub struct AdcTable {
    books: usize,
    codewords: usize,
    partials: Vec<f64>,
}

impl AdcTable {
    pub fn build(query: &[f32], index: &IndexArtifact) -> AdcTable {
        let books = index.books();
        let codewords = index.codewords();
        let sub = index.dim() / books;
        assert_eq!(
            query.len(),
            index.dim(),
            "query dim {} != index dim {}",
            query.len(),
            index.dim()
        );
        let mut partials = vec![0.0f64; books * codewords];
        for m in 0..books {
            let q_seg = &query[m * sub..(m + 1) * sub];
            for p in 0..codewords {
                partials[m * codewords + p] =
                    inner_product_f64(q_seg, index.codebooks().codeword(m, p));
            }
        }
        AdcTable {
            books,
            codewords,
            partials,
        }
    }

    /// Score of one document: the precomputed centroid term plus one table
    /// lookup per codebook.
    pub fn score(&self, list_bias: f64, pq_ids: &[u16]) -> f64 {
        debug_assert_eq!(pq_ids.len(), self.books);
        let mut s = list_bias;
        for (m, p) in pq_ids.iter().enumerate() {
            s += self.partials[m * self.codewords + *p as usize];
        }
        s
    }
}

/// Approximate top-k for one query.
///
/// Pass `transform: None` to search with the raw query vector. `nprobe`
/// larger than the list count is clamped (with a warning).
pub fn search(
    query: &[f32],
    index: &IndexArtifact,
    transform: Option<&QueryTransform>,
    params: SearchParams,
) -> Result<RankedResult> {
    if query.len() != index.dim() {
        return Err(Error::Config(format!(
            "query dim {} != index dim {}",
            query.len(),
            index.dim()
        )));
    }
    let q = match transform {
        Some(t) => {
            if t.dim() != index.dim() {
                return Err(Error::Config(format!(
                    "transform dim {} != index dim {}",
                    t.dim(),
                    index.dim()
                )));
            }
            t.apply(query)
        }
        None => query.to_vec(),
    };
    let nprobe = if params.nprobe > index.lists() {
        log::warn!(
            "nprobe {} exceeds list count {}; clamping",
            params.nprobe,
            index.lists()
        );
        index.lists()
    } else {
        params.nprobe
    };

    // Rank lists by centroid inner product, ties toward the lower list id.
    let mut list_scores: Vec<(u32, f64)> = (0..index.lists())
        .map(|l| (l as u32, inner_product_f64(&q, index.centroids().row(l))))
        .collect();
    list_scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    list_scores.truncate(nprobe);

    let table = AdcTable::build(&q, index);
    let mut top = TopK::new(params.k);
    for (list, bias) in &list_scores {
        for doc in index.posting_list(*list as usize) {
            let s = table.score(*bias, index.pq_ids_of(*doc));
            top.push(*doc, s);
        }
    }
    let hits = top
        .into_sorted()
        .into_iter()
        .map(|(doc, score)| SearchHit {
            doc,
            score: score as f32,
        })
        .collect();
    Ok(RankedResult { hits })
}

/// `search` over a query set, one result row per query.
pub fn search_batch(
    queries: &EmbeddingSet,
    index: &IndexArtifact,
    transform: Option<&QueryTransform>,
    params: SearchParams,
) -> Result<Vec<RankedResult>> {
    (0..queries.count())
        .into_par_iter()
        .map(|qi| search(queries.row(qi), index, transform, params))
        .collect()
}

/// Exact top-k under the uncompressed inner product `<q', v_d>`; the oracle
/// the compressed path approximates. Applies the same transform as `search`.
pub fn brute_force_search(
    query: &[f32],
    docs: &EmbeddingSet,
    transform: Option<&QueryTransform>,
    k: usize,
) -> Result<RankedResult> {
    if query.len() != docs.dim() {
        return Err(Error::Config(format!(
            "query dim {} != doc dim {}",
            query.len(),
            docs.dim()
        )));
    }
    if k == 0 {
        return Err(Error::Config("search k must be >= 1".into()));
    }
    let q = match transform {
        Some(t) => t.apply(query),
        None => query.to_vec(),
    };
    let mut top = TopK::new(k);
    for (d, row) in docs.rows().enumerate() {
        top.push(d as u32, inner_product_f64(&q, row));
    }
    let hits = top
        .into_sorted()
        .into_iter()
        .map(|(doc, score)| SearchHit {
            doc,
            score: score as f32,
        })
        .collect();
    Ok(RankedResult { hits })
}

/// `brute_force_search` over a query set.
pub fn brute_force_batch(
    queries: &EmbeddingSet,
    docs: &EmbeddingSet,
    transform: Option<&QueryTransform>,
    k: usize,
) -> Result<Vec<RankedResult>> {
    (0..queries.count())
        .into_par_iter()
        .map(|qi| brute_force_search(queries.row(qi), docs, transform, k))
        .collect()
}
