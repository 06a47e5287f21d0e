//! The six pipeline commands. Each takes the fully resolved [`RunConfig`]
//! and reports errors upward; exit-code mapping happens in `main`.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rankvq::metrics::{mrr_at_k, recall_at_k};
use rankvq::optim::AdamWConfig;
use rankvq::sampling::mine_topk;
use rankvq::search::{search_batch, SearchParams};
use rankvq::synth::{self, SynthConfig};
use rankvq::trainer::{EpochStats, TrainLog, ValidationSpec};
use rankvq::{
    DistillConfig, EmbeddingSet, Error, IndexArtifact, IndexParams, QueryTransform,
    RelevanceJudgments, Result, SamplingStrategy, Trainer, TopkCache,
};

use crate::config::RunConfig;

fn load_embeddings(path: &Path, what: &str) -> Result<EmbeddingSet> {
    let set = EmbeddingSet::read_fvecs(path)?;
    log::info!("{what}: {} vectors of dim {}", set.count(), set.dim());
    Ok(set)
}

/// Builds a fresh quantization index from document embeddings and reports
/// how much geometry the encoding loses.
pub fn cmd_build(cfg: &RunConfig) -> Result<()> {
    let started = Instant::now();
    let docs = load_embeddings(cfg.need("docs")?, "docs")?;
    let params = IndexParams {
        lists: cfg.lists,
        books: cfg.books,
        codewords: cfg.codewords,
        kmeans_iters: cfg.kmeans_iters,
        kmeans_tol: cfg.kmeans_tol,
        seed: cfg.seed,
    };
    let index = IndexArtifact::build(&docs, &params)?;
    let out = cfg.need("index")?;
    index.save(out)?;
    let (ivf_err, full_err) = index.mean_distortion(&docs);
    println!(
        "built index: {} docs, dim {}, {} lists, {} books x {} codewords",
        index.doc_count(),
        index.dim(),
        index.lists(),
        index.books(),
        index.codewords()
    );
    println!("mean squared reconstruction error: ivf {ivf_err:.6}, full {full_err:.6}");
    println!("wrote {} ({:.1}s)", out.display(), started.elapsed().as_secs_f64());
    Ok(())
}

/// Mines each query's exact top-K documents under the dense inner-product
/// score and stores them for reuse as training candidates.
pub fn cmd_mine_topk(cfg: &RunConfig) -> Result<()> {
    let started = Instant::now();
    let queries = load_embeddings(cfg.need("queries")?, "queries")?;
    let docs = load_embeddings(cfg.need("docs")?, "docs")?;
    let cache = mine_topk(&queries, &docs, cfg.mine_k)?;
    let out = cfg.need("topk_cache")?;
    cache.write(out)?;
    let depth = cache.docs_for(0).len();
    println!(
        "mined top-{depth} of {} docs for {} queries",
        docs.count(),
        cache.query_count()
    );
    println!("wrote {} ({:.1}s)", out.display(), started.elapsed().as_secs_f64());
    Ok(())
}

fn epoch_line(stats: &EpochStats) -> String {
    match stats.recall {
        Some(r) => format!("{}\t{:.6}\t{:.6}", stats.epoch, stats.mean_loss, r),
        None => format!("{}\t{:.6}", stats.epoch, stats.mean_loss),
    }
}

/// Distills the index (and query transform) against dense teacher scores.
/// Writes a checkpoint after every epoch; on a numeric abort the checkpoint
/// of the last completed epoch is left in place.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let started = Instant::now();
    let queries = load_embeddings(cfg.need("queries")?, "queries")?;
    let docs = load_embeddings(cfg.need("docs")?, "docs")?;

    let strategy = SamplingStrategy {
        use_ground_truth: cfg.use_ground_truth,
        topk_pool: cfg.topk_pool,
        topk_take: cfg.topk_take,
        use_in_batch: cfg.use_in_batch,
        seed: cfg.seed,
    };
    strategy.validate()?;
    let judgments = if strategy.use_ground_truth {
        let j = RelevanceJudgments::read(cfg.need("judgments")?, queries.count())?;
        j.validate_doc_ids(docs.count())?;
        Some(j)
    } else {
        None
    };
    let topk = if strategy.topk_pool > 0 {
        Some(TopkCache::read(cfg.need("topk_cache")?, queries.count())?)
    } else {
        None
    };

    let distill = DistillConfig {
        loss: cfg.loss,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        lr_query: cfg.lr_query,
        lr_ivf: cfg.lr_ivf,
        lr_pq: cfg.lr_pq,
        adamw: AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
        pq_reencode_cadence: cfg.reencode_every,
        seed: cfg.seed,
    };

    let mut trainer = if cfg.resume {
        let ckpt = cfg.need("checkpoint")?;
        let t = Trainer::resume_checkpoint(ckpt, distill, strategy)?;
        println!("resumed after epoch {} from {}", t.completed_epochs(), ckpt.display());
        t
    } else {
        let index = IndexArtifact::load(cfg.need("index")?)?;
        let transform = match &cfg.transform {
            Some(p) => QueryTransform::load(p)?,
            None => QueryTransform::identity(index.dim()),
        };
        Trainer::new(index, transform, distill, strategy)?
    };

    let validation = match (&cfg.val_queries, &cfg.val_judgments) {
        (Some(vq), Some(vj)) => {
            let vqueries = load_embeddings(vq, "validation queries")?;
            let vjudg = RelevanceJudgments::read(vj, vqueries.count())?;
            vjudg.validate_doc_ids(docs.count())?;
            Some((vqueries, vjudg))
        }
        (None, None) => None,
        _ => {
            return Err(Error::Config(
                "validation needs both val_queries and val_judgments".into(),
            ))
        }
    };

    let mut log = TrainLog::default();
    while trainer.completed_epochs() < cfg.epochs {
        let mean_loss = trainer.run_epoch(&queries, &docs, judgments.as_ref(), topk.as_ref())?;
        let recall = match &validation {
            Some((vq, vj)) => {
                let spec = ValidationSpec {
                    queries: vq,
                    judgments: vj,
                    k: cfg.val_k,
                    nprobe: cfg.nprobe,
                };
                let params = SearchParams::new(spec.nprobe, spec.k)?;
                let results =
                    search_batch(spec.queries, trainer.index(), Some(trainer.transform()), params)?;
                Some(recall_at_k(&results, spec.judgments, spec.k)?)
            }
            None => None,
        };
        let stats = EpochStats {
            epoch: trainer.completed_epochs(),
            mean_loss,
            recall,
        };
        println!("{}", epoch_line(&stats));
        log.entries.push(stats);
        if let Some(ckpt) = &cfg.checkpoint {
            trainer.save_checkpoint(ckpt)?;
        }
    }

    let index_out = cfg.need("index_out")?;
    let transform_out = cfg.need("transform_out")?;
    let (index, transform) = trainer.into_parts();
    index.save(index_out)?;
    transform.save(transform_out)?;
    if let Some(log_out) = &cfg.log_out {
        log.write_tsv(log_out)?;
    }
    println!(
        "wrote {} and {} ({:.1}s)",
        index_out.display(),
        transform_out.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

/// Runs quantized search over a query file. Ranked ids go to an ivecs file
/// when `results_out` is set, otherwise every hit is printed as TSV.
pub fn cmd_search(cfg: &RunConfig) -> Result<()> {
    let started = Instant::now();
    let queries = load_embeddings(cfg.need("queries")?, "queries")?;
    let index = IndexArtifact::load(cfg.need("index")?)?;
    let transform = match &cfg.transform {
        Some(p) => Some(QueryTransform::load(p)?),
        None => None,
    };
    let params = SearchParams::new(cfg.nprobe, cfg.top_k)?;
    let results = search_batch(&queries, &index, transform.as_ref(), params)?;
    match &cfg.results_out {
        Some(out) => {
            let lists: Vec<Vec<u32>> = results.iter().map(|r| r.doc_ids()).collect();
            rankvq::embed::write_ivecs(&lists, out)?;
            println!(
                "wrote top-{} ids for {} queries to {} ({:.1}s)",
                cfg.top_k,
                results.len(),
                out.display(),
                started.elapsed().as_secs_f64()
            );
        }
        None => {
            println!("query\trank\tdoc\tscore");
            for (q, ranked) in results.iter().enumerate() {
                for (rank, hit) in ranked.hits.iter().enumerate() {
                    println!("{q}\t{}\t{}\t{:.6}", rank + 1, hit.doc, hit.score);
                }
            }
        }
    }
    Ok(())
}

/// Formats the metrics report as `metric<TAB>k<TAB>value` lines.
fn report_tsv(recalls: &[(usize, f64)], mrr_k: usize, mrr: f64) -> String {
    let mut out = String::new();
    for (k, v) in recalls {
        out.push_str(&format!("recall\t{k}\t{v:.6}\n"));
    }
    out.push_str(&format!("mrr\t{mrr_k}\t{mrr:.6}\n"));
    out
}

fn report_json(recalls: &[(usize, f64)], mrr_k: usize, mrr: f64) -> String {
    let mut map = serde_json::Map::new();
    for (k, v) in recalls {
        map.insert(format!("recall@{k}"), serde_json::json!(v));
    }
    map.insert(format!("mrr@{mrr_k}"), serde_json::json!(mrr));
    serde_json::Value::Object(map).to_string()
}

/// Searches every judged query and reports Recall@K for each configured
/// cutoff plus MRR.
pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let queries = load_embeddings(cfg.need("queries")?, "queries")?;
    let index = IndexArtifact::load(cfg.need("index")?)?;
    let judgments = RelevanceJudgments::read(cfg.need("judgments")?, queries.count())?;
    judgments.validate_doc_ids(index.doc_count())?;
    let transform = match &cfg.transform {
        Some(p) => Some(QueryTransform::load(p)?),
        None => None,
    };

    let depth = cfg
        .recall_ks
        .iter()
        .copied()
        .chain([cfg.mrr_k])
        .max()
        .expect("recall_ks is validated non-empty");
    let params = SearchParams::new(cfg.nprobe, depth)?;
    let results = search_batch(&queries, &index, transform.as_ref(), params)?;

    let mut recalls = Vec::with_capacity(cfg.recall_ks.len());
    for &k in &cfg.recall_ks {
        recalls.push((k, recall_at_k(&results, &judgments, k)?));
    }
    let mrr = mrr_at_k(&results, &judgments, cfg.mrr_k)?;

    let body = if cfg.json {
        report_json(&recalls, cfg.mrr_k, mrr)
    } else {
        report_tsv(&recalls, cfg.mrr_k, mrr)
    };
    if cfg.json {
        println!("{body}");
    } else {
        print!("{body}");
    }
    if let Some(out) = &cfg.report_out {
        let mut file_body = if cfg.json { format!("{body}\n") } else { body };
        if !cfg.json {
            // The saved report keeps the config echo so a result file is
            // self-describing.
            file_body = format!("{}{}", cfg.echo("eval"), file_body);
        }
        fs::write(out, file_body).map_err(|e| {
            Error::Config(format!("cannot write report {}: {e}", out.display()))
        })?;
    }
    Ok(())
}

/// Generates a clustered Gaussian corpus with one judged document per query
/// and writes docs, queries, and judgments to the configured paths.
pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let synth_cfg = SynthConfig {
        docs: cfg.synth_docs,
        queries: cfg.synth_queries,
        clusters: cfg.clusters,
        dim: cfg.dim,
        doc_sigma: cfg.doc_sigma,
        query_sigma: cfg.query_sigma,
        query_scale: cfg.query_scale,
        nuisance_sigma: cfg.nuisance_sigma,
        seed: cfg.seed,
        query_stream: cfg.query_stream,
    };
    let out = synth::generate(&synth_cfg)?;
    let docs_path = cfg.need("docs")?;
    let queries_path = cfg.need("queries")?;
    let judgments_path = cfg.need("judgments")?;
    out.docs.write_fvecs(docs_path)?;
    out.queries.write_fvecs(queries_path)?;
    out.judgments.write(judgments_path)?;
    println!(
        "synthesized {} docs and {} queries (dim {}, {} clusters)",
        out.docs.count(),
        out.queries.count(),
        cfg.dim,
        cfg.clusters
    );
    println!(
        "wrote {}, {}, {}",
        docs_path.display(),
        queries_path.display(),
        judgments_path.display()
    );
    Ok(())
}
