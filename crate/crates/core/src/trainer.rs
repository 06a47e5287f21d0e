//! Distillation training of the quantizer and query transform.
//!
//! The objective sums, over each query in a batch, a loss between the
//! teacher scores `<v_q, v_d>` and each of two student scores:
//!
//! ```text
//! s_alpha = <W v_q + b, centroid(d)>               (coarse stage)
//! s_beta  = <W v_q + b, centroid(d) + codewords(d)> (full reconstruction)
//! ```
//!
//! Both terms carry equal weight. Gradients are analytic and flow to the
//! transform (dense), the centroids of the candidates' lists, and the
//! candidates' assigned codewords (sparse). IVF assignments stay frozen the
//! whole run; PQ assignments are refreshed between epochs at a configured
//! cadence. Document embeddings are never modified.
//!
//! Determinism: batches come from a per-epoch seeded shuffle, gradients
//! accumulate in batch order, and every reduction is serial — results do not
//! depend on thread count, and a run resumed from a checkpoint reproduces
//! the uninterrupted run bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::embed::{EmbeddingSet, RelevanceJudgments};
use crate::error::{Error, Result};
use crate::index::IndexArtifact;
use crate::loss::{loss_and_grad, DistillLoss};
use crate::metrics::recall_at_k;
use crate::optim::{AdamW, AdamWConfig};
use crate::sampling::{sample_candidates, CandidateSet, SamplingStrategy, TopkCache};
use crate::search::{search_batch, SearchParams};
use crate::seeds::{derive_seed, shuffled};
use crate::transform::QueryTransform;
use crate::vecmath::inner_product_f64;

pub const DEFAULT_BATCH_SIZE: usize = 4;
pub const DEFAULT_EPOCHS: usize = 20;
pub const DEFAULT_LR_QUERY: f64 = 5e-6;
pub const DEFAULT_LR_IVF: f64 = 1e-3;
pub const DEFAULT_LR_PQ: f64 = 1e-4;
pub const DEFAULT_REENCODE_CADENCE: usize = 1;

const EPOCH_SEED_TAG: u64 = 0x45504F43;
const CHECKPOINT_MAGIC: &[u8; 8] = b"RVQTRAIN";
const CHECKPOINT_VERSION: u32 = 1;

/// Optimizer group ids, in declaration order.
const GROUP_TRANSFORM: usize = 0;
const GROUP_CENTROIDS: usize = 1;
const GROUP_CODEBOOKS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// Score against the coarse centroid only.
    Ivf,
    /// Score against centroid + codewords.
    Pq,
}

#[derive(Debug, Clone)]
pub struct DistillConfig {
    pub loss: DistillLoss,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_query: f64,
    pub lr_ivf: f64,
    pub lr_pq: f64,
    pub adamw: AdamWConfig,
    /// Refresh PQ assignments after every `n` epochs; 0 disables refresh.
    pub pq_reencode_cadence: usize,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            loss: DistillLoss::ListNet,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: DEFAULT_EPOCHS,
            lr_query: DEFAULT_LR_QUERY,
            lr_ivf: DEFAULT_LR_IVF,
            lr_pq: DEFAULT_LR_PQ,
            adamw: AdamWConfig::default(),
            pq_reencode_cadence: DEFAULT_REENCODE_CADENCE,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        for (name, lr) in [
            ("lr_query", self.lr_query),
            ("lr_ivf", self.lr_ivf),
            ("lr_pq", self.lr_pq),
        ] {
            if !lr.is_finite() || lr < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {lr}"
                )));
            }
        }
        self.adamw.validate()
    }
}

/// Student scores of `doc_ids` for one (already transformed) query.
pub fn student_scores(
    transformed_query: &[f32],
    doc_ids: &[u32],
    index: &IndexArtifact,
    mode: ScoreMode,
) -> Vec<f64> {
    let mut recon = vec![0f32; index.dim()];
    doc_ids
        .iter()
        .map(|d| {
            match mode {
                ScoreMode::Ivf => {
                    recon.copy_from_slice(index.centroids().row(index.ivf_id_of(*d) as usize))
                }
                ScoreMode::Pq => index.reconstruct_full_into(*d, &mut recon),
            }
            inner_product_f64(transformed_query, &recon)
        })
        .collect()
}

/// Gradient accumulators for one batch. Transform gradients are dense;
/// centroid and codeword gradients exist only for touched rows, keyed for
/// deterministic iteration order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffers {
    /// Row-major, `dim * dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub centroids: BTreeMap<u32, Vec<f64>>,
    pub codewords: BTreeMap<(u16, u16), Vec<f64>>,
}

impl GradBuffers {
    fn new(dim: usize) -> Self {
        Self {
            weight: vec![0.0; dim * dim],
            bias: vec![0.0; dim],
            centroids: BTreeMap::new(),
            codewords: BTreeMap::new(),
        }
    }

    /// Euclidean norm over every stored gradient entry.
    pub fn norm(&self) -> f64 {
        let mut sq = 0.0;
        for g in self.weight.iter().chain(self.bias.iter()) {
            sq += g * g;
        }
        for row in self.centroids.values() {
            sq += row.iter().map(|g| g * g).sum::<f64>();
        }
        for cw in self.codewords.values() {
            sq += cw.iter().map(|g| g * g).sum::<f64>();
        }
        sq.sqrt()
    }
}

/// Total batch objective: per query, loss(teachers, coarse students) +
/// loss(teachers, full students). The forward half of `backward`, kept
/// separate so tests can finite-difference it.
pub fn batch_loss(
    batch: &[CandidateSet],
    queries: &EmbeddingSet,
    transform: &QueryTransform,
    index: &IndexArtifact,
    loss: DistillLoss,
) -> f64 {
    let mut total = 0.0;
    for set in batch {
        if set.is_empty() {
            continue;
        }
        let tq = transform.apply(queries.row(set.query_row as usize));
        let s_ivf = student_scores(&tq, &set.doc_ids, index, ScoreMode::Ivf);
        let s_pq = student_scores(&tq, &set.doc_ids, index, ScoreMode::Pq);
        total += loss_and_grad(loss, &set.teacher_scores, &s_ivf).0;
        total += loss_and_grad(loss, &set.teacher_scores, &s_pq).0;
    }
    total
}

/// Batch loss plus analytic gradients for every touched parameter.
///
/// Score derivatives, per candidate `d` of query `q` (writing `tq` for the
/// transformed query and `g` for the loss gradient at that score):
/// both stages push `g * tq` onto centroid `ivf_id(d)`; the full stage also
/// pushes segment `m` of `g * tq` onto codeword `(m, pq_id_m(d))`; the
/// query side collects `g * reconstruction`, which chains onto the weight
/// as an outer product with `v_q` and onto the bias directly.
pub fn backward(
    batch: &[CandidateSet],
    queries: &EmbeddingSet,
    transform: &QueryTransform,
    index: &IndexArtifact,
    loss: DistillLoss,
) -> (f64, GradBuffers) {
    let dim = index.dim();
    let books = index.books();
    let sub = dim / books;
    let mut grads = GradBuffers::new(dim);
    let mut total = 0.0;

    let mut recon_ivf = vec![0f32; dim];
    let mut recon_full = vec![0f32; dim];
    for set in batch {
        if set.is_empty() {
            continue;
        }
        let q_row = queries.row(set.query_row as usize);
        let tq = transform.apply(q_row);
        let s_ivf = student_scores(&tq, &set.doc_ids, index, ScoreMode::Ivf);
        let s_pq = student_scores(&tq, &set.doc_ids, index, ScoreMode::Pq);
        let (l_ivf, g_ivf) = loss_and_grad(loss, &set.teacher_scores, &s_ivf);
        let (l_pq, g_pq) = loss_and_grad(loss, &set.teacher_scores, &s_pq);
        total += l_ivf + l_pq;

        let mut grad_tq = vec![0.0f64; dim];
        for (i, d) in set.doc_ids.iter().enumerate() {
            let list = index.ivf_id_of(*d);
            recon_ivf.copy_from_slice(index.centroids().row(list as usize));
            index.reconstruct_full_into(*d, &mut recon_full);

            // Centroid rows receive the loss gradient from both stages.
            let g_cent = g_ivf[i] + g_pq[i];
            if g_cent != 0.0 {
                let row = grads
                    .centroids
                    .entry(list)
                    .or_insert_with(|| vec![0.0; dim]);
                for (r, t) in row.iter_mut().zip(&tq) {
                    *r += g_cent * *t as f64;
                }
            }

            // Assigned codewords receive the full-stage gradient, split by
            // subvector segment.
            if g_pq[i] != 0.0 {
                for (m, code) in index.pq_ids_of(*d).iter().enumerate() {
                    let cw = grads
                        .codewords
                        .entry((m as u16, *code))
                        .or_insert_with(|| vec![0.0; sub]);
                    for (c, t) in cw.iter_mut().zip(&tq[m * sub..(m + 1) * sub]) {
                        *c += g_pq[i] * *t as f64;
                    }
                }
            }

            // Query side: d(score)/d(tq) is the reconstruction used.
            for j in 0..dim {
                grad_tq[j] +=
                    g_ivf[i] * recon_ivf[j] as f64 + g_pq[i] * recon_full[j] as f64;
            }
        }

        // Chain tq = W q + b onto the transform parameters.
        for (r, gt) in grad_tq.iter().enumerate() {
            grads.bias[r] += gt;
            let row = &mut grads.weight[r * dim..(r + 1) * dim];
            for (c, q) in q_row.iter().enumerate() {
                row[c] += gt * *q as f64;
            }
        }
    }
    (total, grads)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub recall: Option<f64>,
}

/// Per-epoch training log; serializes as TSV `epoch<TAB>mean_loss` with an
/// optional trailing recall column.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<EpochStats>,
}

impl TrainLog {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{}\t{:.6}", e.epoch, e.mean_loss));
            if let Some(r) = e.recall {
                out.push_str(&format!("\t{r:.6}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Holds the evolving index/transform plus optimizer state across epochs.
pub struct Trainer {
    config: DistillConfig,
    strategy: SamplingStrategy,
    index: IndexArtifact,
    transform: QueryTransform,
    optimizer: AdamW,
    completed_epochs: usize,
}

impl Trainer {
    pub fn new(
        index: IndexArtifact,
        transform: QueryTransform,
        config: DistillConfig,
        strategy: SamplingStrategy,
    ) -> Result<Self> {
        config.validate()?;
        strategy.validate()?;
        if transform.dim() != index.dim() {
            return Err(Error::Config(format!(
                "transform dim {} != index dim {}",
                transform.dim(),
                index.dim()
            )));
        }
        let dim = index.dim();
        let group_sizes = [
            dim * dim + dim,
            index.lists() * dim,
            index.books() * index.codewords() * (dim / index.books()),
        ];
        let optimizer = AdamW::new(config.adamw, &group_sizes)?;
        Ok(Self {
            config,
            strategy,
            index,
            transform,
            optimizer,
            completed_epochs: 0,
        })
    }

    pub fn index(&self) -> &IndexArtifact {
        &self.index
    }

    pub fn transform(&self) -> &QueryTransform {
        &self.transform
    }

    pub fn completed_epochs(&self) -> usize {
        self.completed_epochs
    }

    pub fn into_parts(self) -> (IndexArtifact, QueryTransform) {
        (self.index, self.transform)
    }

    /// Runs one epoch of shuffled batches and returns its mean per-query
    /// loss. The epoch's RNG stream depends only on (seed, epoch number), so
    /// resumed runs see identical batches.
    pub fn run_epoch(
        &mut self,
        queries: &EmbeddingSet,
        docs: &EmbeddingSet,
        judgments: Option<&RelevanceJudgments>,
        topk: Option<&TopkCache>,
    ) -> Result<f64> {
        if queries.dim() != self.index.dim() || docs.dim() != self.index.dim() {
            return Err(Error::Config(format!(
                "embedding dims (queries {}, docs {}) != index dim {}",
                queries.dim(),
                docs.dim(),
                self.index.dim()
            )));
        }
        if docs.count() != self.index.doc_count() {
            return Err(Error::Config(format!(
                "corpus has {} docs, index encodes {}",
                docs.count(),
                self.index.doc_count()
            )));
        }
        if queries.is_empty() {
            return Err(Error::Config("no training queries".into()));
        }
        let epoch = self.completed_epochs;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.config.seed,
            EPOCH_SEED_TAG.wrapping_add(epoch as u64),
        ));
        let order = shuffled(queries.count(), &mut rng);

        let dim = self.index.dim();
        let sub = dim / self.index.books();
        let codewords = self.index.codewords();
        let mut total_loss = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            let sets = sample_candidates(
                chunk,
                &self.strategy,
                judgments,
                topk,
                queries,
                docs,
                &mut rng,
            )?;
            let (loss, grads) =
                backward(&sets, queries, &self.transform, &self.index, self.config.loss);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {loss} in epoch {epoch}; aborting before the update"
                )));
            }
            total_loss += loss;

            self.optimizer.begin_step();

            // Transform: dense update over weight then bias.
            let mut tparams = self.transform.weight().to_vec();
            tparams.extend_from_slice(self.transform.bias());
            let sparse: Vec<(usize, f64)> = grads
                .weight
                .iter()
                .chain(grads.bias.iter())
                .copied()
                .enumerate()
                .collect();
            self.optimizer
                .update(GROUP_TRANSFORM, self.config.lr_query, &mut tparams, &sparse)?;
            self.transform
                .weight_mut()
                .copy_from_slice(&tparams[..dim * dim]);
            self.transform.bias_mut().copy_from_slice(&tparams[dim * dim..]);

            // Centroids: touched rows only.
            let mut sparse = Vec::new();
            for (list, row) in &grads.centroids {
                let base = *list as usize * dim;
                sparse.extend(row.iter().enumerate().map(|(i, g)| (base + i, *g)));
            }
            self.optimizer.update(
                GROUP_CENTROIDS,
                self.config.lr_ivf,
                self.index.centroids_mut().values_mut(),
                &sparse,
            )?;

            // Codewords: touched entries only.
            let mut sparse = Vec::new();
            for ((book, code), cw) in &grads.codewords {
                let base = (*book as usize * codewords + *code as usize) * sub;
                sparse.extend(cw.iter().enumerate().map(|(i, g)| (base + i, *g)));
            }
            self.optimizer.update(
                GROUP_CODEBOOKS,
                self.config.lr_pq,
                self.index.codebooks_mut().values_mut(),
                &sparse,
            )?;
        }

        let cadence = self.config.pq_reencode_cadence;
        if cadence > 0 && (epoch + 1).is_multiple_of(cadence) {
            self.index.reencode_pq(docs)?;
        }
        self.completed_epochs += 1;
        Ok(total_loss / queries.count() as f64)
    }

    /// Serializes epoch count, index, transform, and optimizer state.
    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.completed_epochs as u64).to_le_bytes());
        for blob in [
            self.index.to_bytes(),
            self.transform.to_bytes(),
            self.optimizer.to_bytes(),
        ] {
            out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
            out.extend_from_slice(&blob);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        let path = path.as_ref();
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Restores a trainer mid-run. `config` and `strategy` are supplied by
    /// the caller and must match the original run for the continuation to
    /// reproduce it.
    pub fn resume_checkpoint(
        path: impl AsRef<Path>,
        config: DistillConfig,
        strategy: SamplingStrategy,
    ) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let fail = |msg: &str| Error::file(path, msg.to_string());
        if bytes.len() < CHECKPOINT_MAGIC.len() + 32 {
            return Err(fail("checkpoint too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(fail("checkpoint checksum mismatch"));
        }
        let mut off = 0usize;
        let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
            let s = body
                .get(*off..*off + n)
                .ok_or_else(|| Error::file(path, "truncated checkpoint body"))?;
            *off += n;
            Ok(s)
        };
        if take(&mut off, 8)? != CHECKPOINT_MAGIC {
            return Err(fail("not a training checkpoint"));
        }
        let version = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(fail(&format!("unsupported checkpoint version {version}")));
        }
        let epochs = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize;
        let blob = |off: &mut usize| -> Result<&[u8]> {
            let len = u64::from_le_bytes(take(off, 8)?.try_into().unwrap()) as usize;
            take(off, len)
        };
        let index = IndexArtifact::from_bytes(blob(&mut off)?, path)?;
        let transform = QueryTransform::from_bytes(blob(&mut off)?, path)?;
        let optimizer = AdamW::from_bytes(blob(&mut off)?)?;
        if off != body.len() {
            return Err(fail("trailing bytes in checkpoint"));
        }

        let mut trainer = Trainer::new(index, transform, config, strategy)?;
        if optimizer.group_count() != trainer.optimizer.group_count()
            || (0..optimizer.group_count())
                .any(|g| optimizer.group_len(g) != trainer.optimizer.group_len(g))
        {
            return Err(fail("optimizer state does not match the index geometry"));
        }
        trainer.optimizer = optimizer;
        trainer.completed_epochs = epochs;
        Ok(trainer)
    }
}

/// Recall probe run against held-out queries after each epoch.
pub struct ValidationSpec<'a> {
    pub queries: &'a EmbeddingSet,
    pub judgments: &'a RelevanceJudgments,
    pub k: usize,
    pub nprobe: usize,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub index: IndexArtifact,
    pub transform: QueryTransform,
    pub log: TrainLog,
}

/// Runs `config.epochs` epochs end to end.
#[allow(clippy::too_many_arguments)]
pub fn train(
    queries: &EmbeddingSet,
    docs: &EmbeddingSet,
    judgments: Option<&RelevanceJudgments>,
    topk: Option<&TopkCache>,
    index: IndexArtifact,
    transform: QueryTransform,
    config: DistillConfig,
    strategy: SamplingStrategy,
    validation: Option<&ValidationSpec>,
) -> Result<TrainOutcome> {
    let epochs = config.epochs;
    let mut trainer = Trainer::new(index, transform, config, strategy)?;
    let mut log = TrainLog::default();
    for _ in 0..epochs {
        let mean_loss = trainer.run_epoch(queries, docs, judgments, topk)?;
        let recall = match validation {
            Some(v) => {
                let params = SearchParams::new(v.nprobe, v.k)?;
                let results =
                    search_batch(v.queries, trainer.index(), Some(trainer.transform()), params)?;
                Some(recall_at_k(&results, v.judgments, v.k)?)
            }
            None => None,
        };
        let epoch = trainer.completed_epochs();
        log.entries.push(EpochStats {
            epoch,
            mean_loss,
            recall,
        });
        log::info!(
            "epoch {epoch}: mean loss {mean_loss:.6}{}",
            recall.map(|r| format!(", recall {r:.4}")).unwrap_or_default()
        );
    }
    let (index, transform) = trainer.into_parts();
    Ok(TrainOutcome {
        index,
        transform,
        log,
    })
}
