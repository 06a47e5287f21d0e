//! Synthetic retrieval corpora: Gaussian cluster mixtures with known
//! query-document ground truth, sized for desk-scale experiments.
//!
//! Cluster centers are standard normal; each document is its cluster's
//! center plus `doc_sigma` noise, L2-normalized onto the unit sphere (the
//! shape real dense-retriever embeddings take, and what makes a query's own
//! document its inner-product argmax); each query is a uniformly chosen
//! document plus `query_sigma` noise, and that document is the query's
//! single judged answer. Centers, documents, and queries draw from
//! independent seeded streams, so two runs that share a seed but differ in
//! `query_stream` produce byte-identical documents with fresh queries —
//! that is how a train/eval query pair over one corpus is made.
//!
//! With `nuisance_sigma > 0` the odd-numbered dimensions become
//! document-only variance: cluster centers and queries are zero there, so
//! relevance is decided entirely by the even dimensions while documents
//! still vary across all of them. That reproduces, in miniature, the trait
//! of real embedding corpora that makes rank-supervised quantizers worth
//! training at all: document vectors spread along directions that carry no
//! relevance signal, and a quantizer fit purely to reconstruction error
//! wastes its budget describing them. The two kinds of dimension are
//! interleaved so that every contiguous product-quantizer subspace
//! contains both.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embed::{EmbeddingSet, RelevanceJudgments};
use crate::error::{Error, Result};
use crate::seeds::derive_seed;

const CENTER_SEED_TAG: u64 = 0x5EED_0001;
const DOC_SEED_TAG: u64 = 0x5EED_0002;
const QUERY_SEED_TAG: u64 = 0x5EED_0003;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub docs: usize,
    pub queries: usize,
    pub clusters: usize,
    pub dim: usize,
    /// Noise scale of documents around their cluster center.
    pub doc_sigma: f64,
    /// Noise scale of queries around their judged document.
    pub query_sigma: f64,
    /// Multiplies every finished query vector. Inner-product rankings (and
    /// so ground truth and recall) are invariant to this positive factor;
    /// what it changes is the spread of raw query-document scores, i.e. how
    /// peaked their softmax is when they are used as teachers.
    pub query_scale: f64,
    /// Noise scale of document-only variance on the odd-numbered
    /// dimensions. Queries are exactly zero there, so inner-product
    /// relevance never depends on those coordinates — they model the
    /// off-topic variation real document embeddings carry. Interleaving
    /// them with the relevance-bearing even dimensions puts both kinds in
    /// every product-quantizer subspace, so a codebook fit purely to
    /// reconstruction error spends accuracy on coordinates that never
    /// affect a score — precisely the inefficiency score-distillation can
    /// win back. Zero (the default) disables the split and reproduces the
    /// plain cluster mixture bit for bit.
    pub nuisance_sigma: f64,
    pub seed: u64,
    /// Selects the query stream; documents ignore it.
    pub query_stream: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            docs: 1000,
            queries: 100,
            clusters: 10,
            dim: 16,
            doc_sigma: 0.5,
            query_sigma: 0.25,
            query_scale: 1.0,
            nuisance_sigma: 0.0,
            seed: 0,
            query_stream: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.docs == 0 {
            return Err(Error::Config("synthesis needs at least one document".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("dim must be >= 1".into()));
        }
        if self.clusters == 0 {
            return Err(Error::Config("clusters must be >= 1".into()));
        }
        for (name, s) in [
            ("doc_sigma", self.doc_sigma),
            ("query_sigma", self.query_sigma),
            ("nuisance_sigma", self.nuisance_sigma),
        ] {
            if !s.is_finite() || s < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {s}"
                )));
            }
        }
        if self.nuisance_sigma > 0.0 && self.dim < 2 {
            return Err(Error::Config(
                "nuisance_sigma needs at least two dimensions to split".into(),
            ));
        }
        if !self.query_scale.is_finite() || self.query_scale <= 0.0 {
            return Err(Error::Config(format!(
                "query_scale must be finite and positive, got {}",
                self.query_scale
            )));
        }
        Ok(())
    }
}

pub struct SynthOutput {
    pub docs: EmbeddingSet,
    pub queries: EmbeddingSet,
    pub judgments: RelevanceJudgments,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;

    // Odd dimensions carry document-only variance when the split is on.
    let nuisance_dim = |i: usize| cfg.nuisance_sigma > 0.0 && i % 2 == 1;

    let mut center_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, CENTER_SEED_TAG));
    let mut centers: Vec<f64> = (0..cfg.clusters * cfg.dim)
        .map(|_| center_rng.sample(StandardNormal))
        .collect();
    for center in centers.chunks_mut(cfg.dim) {
        for (i, x) in center.iter_mut().enumerate() {
            if nuisance_dim(i) {
                *x = 0.0;
            }
        }
    }

    let mut doc_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, DOC_SEED_TAG));
    let mut doc_values = Vec::with_capacity(cfg.docs * cfg.dim);
    let mut raw = vec![0f64; cfg.dim];
    for _ in 0..cfg.docs {
        let c = doc_rng.gen_range(0..cfg.clusters);
        let center = &centers[c * cfg.dim..(c + 1) * cfg.dim];
        for (i, (r, item)) in raw.iter_mut().zip(center).enumerate() {
            let n: f64 = doc_rng.sample(StandardNormal);
            *r = if nuisance_dim(i) {
                cfg.nuisance_sigma * n
            } else {
                item + cfg.doc_sigma * n
            };
        }
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let inv = if norm > 0.0 { 1.0 / norm } else { 1.0 };
        doc_values.extend(raw.iter().map(|x| (x * inv) as f32));
    }
    let docs = EmbeddingSet::new(cfg.dim, doc_values)?;

    let mut query_rng = ChaCha8Rng::seed_from_u64(derive_seed(
        derive_seed(cfg.seed, QUERY_SEED_TAG),
        cfg.query_stream,
    ));
    let mut query_values = Vec::with_capacity(cfg.queries * cfg.dim);
    let mut gt = Vec::with_capacity(cfg.queries);
    for _ in 0..cfg.queries {
        let d = query_rng.gen_range(0..cfg.docs);
        let row = docs.row(d);
        for (i, item) in row.iter().take(cfg.dim).enumerate() {
            let n: f64 = query_rng.sample(StandardNormal);
            query_values.push(if nuisance_dim(i) {
                0.0
            } else {
                ((*item as f64 + cfg.query_sigma * n) * cfg.query_scale) as f32
            });
        }
        gt.push(vec![d as u32]);
    }
    let queries = EmbeddingSet::new(cfg.dim, query_values)?;
    let judgments = RelevanceJudgments::new(gt)?;

    Ok(SynthOutput {
        docs,
        queries,
        judgments,
    })
}
