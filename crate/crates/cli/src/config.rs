//! Flat `key = value` run configuration shared by every subcommand.
//!
//! A config file holds one key per line; `#` starts a comment and blank
//! lines are skipped. Command-line flags carry the same key names and
//! override file values. Relative paths in a file resolve against the
//! file's directory; relative paths given as flags resolve against the
//! working directory. Unknown and duplicate keys are rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rankvq::sampling::TopkTake;
use rankvq::{DistillLoss, Error, Result};

/// Every tunable of the pipeline with its resolved value. Commands read the
/// subset they need; `echo` prints the whole thing so a run can be
/// reproduced from its output alone.
#[derive(Debug, Clone)]
pub struct RunConfig {
    // Input and output paths. All optional here; each command demands the
    // ones it cannot run without.
    pub queries: Option<PathBuf>,
    pub docs: Option<PathBuf>,
    pub judgments: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub index_out: Option<PathBuf>,
    pub transform: Option<PathBuf>,
    pub transform_out: Option<PathBuf>,
    pub topk_cache: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub log_out: Option<PathBuf>,
    pub results_out: Option<PathBuf>,
    pub report_out: Option<PathBuf>,
    pub val_queries: Option<PathBuf>,
    pub val_judgments: Option<PathBuf>,

    // Global knobs.
    pub seed: u64,
    /// Worker cap for data-parallel sections; 0 means hardware parallelism.
    pub threads: usize,

    // Index geometry.
    pub lists: usize,
    pub books: usize,
    pub codewords: usize,
    pub kmeans_iters: usize,
    pub kmeans_tol: f32,

    // Distillation.
    pub loss: DistillLoss,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_query: f64,
    pub lr_ivf: f64,
    pub lr_pq: f64,
    pub weight_decay: f64,
    /// Re-encode PQ assignments every this many epochs; 0 freezes them.
    pub reencode_every: usize,
    pub resume: bool,

    // Candidate sampling.
    pub use_ground_truth: bool,
    pub topk_pool: usize,
    pub topk_take: TopkTake,
    pub use_in_batch: bool,
    /// Depth of the exact top-K mining pass (`mine-topk`).
    pub mine_k: usize,

    // Search and evaluation.
    pub nprobe: usize,
    pub top_k: usize,
    pub recall_ks: Vec<usize>,
    pub mrr_k: usize,
    /// Cutoff for the optional per-epoch validation recall during training.
    pub val_k: usize,
    pub json: bool,

    // Synthetic data generation.
    pub synth_docs: usize,
    pub synth_queries: usize,
    pub clusters: usize,
    pub dim: usize,
    pub doc_sigma: f64,
    pub query_sigma: f64,
    pub query_scale: f64,
    pub nuisance_sigma: f64,
    pub query_stream: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            queries: None,
            docs: None,
            judgments: None,
            index: None,
            index_out: None,
            transform: None,
            transform_out: None,
            topk_cache: None,
            checkpoint: None,
            log_out: None,
            results_out: None,
            report_out: None,
            val_queries: None,
            val_judgments: None,
            seed: 0,
            threads: 0,
            lists: rankvq::index::DEFAULT_IVF_LISTS,
            books: rankvq::index::DEFAULT_BOOKS,
            codewords: rankvq::index::DEFAULT_CODEWORDS,
            kmeans_iters: rankvq::kmeans::DEFAULT_MAX_ITERS,
            kmeans_tol: rankvq::kmeans::DEFAULT_REL_TOLERANCE,
            loss: DistillLoss::ListNet,
            batch_size: rankvq::trainer::DEFAULT_BATCH_SIZE,
            epochs: rankvq::trainer::DEFAULT_EPOCHS,
            lr_query: rankvq::trainer::DEFAULT_LR_QUERY,
            lr_ivf: rankvq::trainer::DEFAULT_LR_IVF,
            lr_pq: rankvq::trainer::DEFAULT_LR_PQ,
            weight_decay: rankvq::optim::DEFAULT_WEIGHT_DECAY,
            reencode_every: rankvq::trainer::DEFAULT_REENCODE_CADENCE,
            resume: false,
            use_ground_truth: false,
            topk_pool: 200,
            topk_take: TopkTake::All,
            use_in_batch: true,
            mine_k: 200,
            nprobe: rankvq::search::DEFAULT_NPROBE,
            top_k: 100,
            recall_ks: vec![10, 50, 100],
            mrr_k: 10,
            val_k: 10,
            json: false,
            synth_docs: 1000,
            synth_queries: 100,
            clusters: 10,
            dim: 16,
            doc_sigma: 0.5,
            query_sigma: 0.25,
            query_scale: 1.0,
            nuisance_sigma: 0.0,
            query_stream: 0,
        }
    }
}

/// Keys holding paths, in echo order.
pub const PATH_KEYS: &[&str] = &[
    "queries",
    "docs",
    "judgments",
    "index",
    "index_out",
    "transform",
    "transform_out",
    "topk_cache",
    "checkpoint",
    "log_out",
    "results_out",
    "report_out",
    "val_queries",
    "val_judgments",
];

/// Scalar keys, in echo order.
pub const SCALAR_KEYS: &[&str] = &[
    "seed",
    "threads",
    "lists",
    "books",
    "codewords",
    "kmeans_iters",
    "kmeans_tol",
    "loss",
    "batch_size",
    "epochs",
    "lr_query",
    "lr_ivf",
    "lr_pq",
    "weight_decay",
    "reencode_every",
    "resume",
    "use_ground_truth",
    "topk_pool",
    "topk_take",
    "use_in_batch",
    "mine_k",
    "nprobe",
    "top_k",
    "recall_ks",
    "mrr_k",
    "val_k",
    "json",
    "synth_docs",
    "synth_queries",
    "clusters",
    "dim",
    "doc_sigma",
    "query_sigma",
    "query_scale",
    "nuisance_sigma",
    "query_stream",
];

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str, expected: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("{key} expects {expected}, got '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Config(format!(
            "{key} expects true or false, got '{other}'"
        ))),
    }
}

fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>> {
    let ks: Vec<usize> = value
        .split(',')
        .map(|s| parse_scalar::<usize>(key, s.trim(), "a comma-separated list of integers"))
        .collect::<Result<_>>()?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config(format!(
            "{key} expects one or more cutoffs >= 1, got '{value}'"
        )));
    }
    Ok(ks)
}

/// Turns a path value into an absolute-ish path: absolute values pass
/// through, relative ones are joined onto `base` (the config file's
/// directory, or nothing for command-line flags).
fn resolve_path(value: &str, base: Option<&Path>) -> PathBuf {
    let p = PathBuf::from(value);
    match base {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p,
    }
}

impl RunConfig {
    /// Applies one `key = value` assignment. `base` is the directory that
    /// relative path values resolve against.
    pub fn apply(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<()> {
        let path_slot: Option<&mut Option<PathBuf>> = match key {
            "queries" => Some(&mut self.queries),
            "docs" => Some(&mut self.docs),
            "judgments" => Some(&mut self.judgments),
            "index" => Some(&mut self.index),
            "index_out" => Some(&mut self.index_out),
            "transform" => Some(&mut self.transform),
            "transform_out" => Some(&mut self.transform_out),
            "topk_cache" => Some(&mut self.topk_cache),
            "checkpoint" => Some(&mut self.checkpoint),
            "log_out" => Some(&mut self.log_out),
            "results_out" => Some(&mut self.results_out),
            "report_out" => Some(&mut self.report_out),
            "val_queries" => Some(&mut self.val_queries),
            "val_judgments" => Some(&mut self.val_judgments),
            _ => None,
        };
        if let Some(slot) = path_slot {
            if value.is_empty() {
                return Err(Error::Config(format!("{key} expects a path")));
            }
            *slot = Some(resolve_path(value, base));
            return Ok(());
        }
        match key {
            "seed" => self.seed = parse_scalar(key, value, "an unsigned integer")?,
            "threads" => self.threads = parse_scalar(key, value, "an unsigned integer")?,
            "lists" => self.lists = parse_scalar(key, value, "an unsigned integer")?,
            "books" => self.books = parse_scalar(key, value, "an unsigned integer")?,
            "codewords" => self.codewords = parse_scalar(key, value, "an unsigned integer")?,
            "kmeans_iters" => self.kmeans_iters = parse_scalar(key, value, "an unsigned integer")?,
            "kmeans_tol" => self.kmeans_tol = parse_scalar(key, value, "a number")?,
            "loss" => self.loss = value.parse()?,
            "batch_size" => self.batch_size = parse_scalar(key, value, "an unsigned integer")?,
            "epochs" => self.epochs = parse_scalar(key, value, "an unsigned integer")?,
            "lr_query" => self.lr_query = parse_scalar(key, value, "a number")?,
            "lr_ivf" => self.lr_ivf = parse_scalar(key, value, "a number")?,
            "lr_pq" => self.lr_pq = parse_scalar(key, value, "a number")?,
            "weight_decay" => self.weight_decay = parse_scalar(key, value, "a number")?,
            "reencode_every" => {
                self.reencode_every = parse_scalar(key, value, "an unsigned integer")?
            }
            "resume" => self.resume = parse_bool(key, value)?,
            "use_ground_truth" => self.use_ground_truth = parse_bool(key, value)?,
            "topk_pool" => self.topk_pool = parse_scalar(key, value, "an unsigned integer")?,
            "topk_take" => self.topk_take = value.parse()?,
            "use_in_batch" => self.use_in_batch = parse_bool(key, value)?,
            "mine_k" => self.mine_k = parse_scalar(key, value, "an unsigned integer")?,
            "nprobe" => self.nprobe = parse_scalar(key, value, "an unsigned integer")?,
            "top_k" => self.top_k = parse_scalar(key, value, "an unsigned integer")?,
            "recall_ks" => self.recall_ks = parse_usize_list(key, value)?,
            "mrr_k" => self.mrr_k = parse_scalar(key, value, "an unsigned integer")?,
            "val_k" => self.val_k = parse_scalar(key, value, "an unsigned integer")?,
            "json" => self.json = parse_bool(key, value)?,
            "synth_docs" => self.synth_docs = parse_scalar(key, value, "an unsigned integer")?,
            "synth_queries" => {
                self.synth_queries = parse_scalar(key, value, "an unsigned integer")?
            }
            "clusters" => self.clusters = parse_scalar(key, value, "an unsigned integer")?,
            "dim" => self.dim = parse_scalar(key, value, "an unsigned integer")?,
            "doc_sigma" => self.doc_sigma = parse_scalar(key, value, "a number")?,
            "query_sigma" => self.query_sigma = parse_scalar(key, value, "a number")?,
            "query_scale" => self.query_scale = parse_scalar(key, value, "a number")?,
            "nuisance_sigma" => self.nuisance_sigma = parse_scalar(key, value, "a number")?,
            "query_stream" => self.query_stream = parse_scalar(key, value, "an unsigned integer")?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Parses a config file and applies every assignment. Duplicate keys in
    /// one file are rejected so a typo cannot silently lose a setting.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf);
        let mut seen: Vec<String> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let fail = |msg: String| {
                Error::Config(format!("{}:{}: {msg}", path.display(), lineno + 1))
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("expected 'key = value', got '{line}'")))?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(fail("empty key".into()));
            }
            if seen.iter().any(|k| k == key) {
                return Err(fail(format!("duplicate key '{key}'")));
            }
            seen.push(key.to_string());
            self.apply(key, value, base.as_deref()).map_err(|e| match e {
                Error::Config(msg) => fail(msg),
                other => other,
            })?;
        }
        Ok(())
    }

    fn scalar_value(&self, key: &str) -> String {
        match key {
            "seed" => self.seed.to_string(),
            "threads" => self.threads.to_string(),
            "lists" => self.lists.to_string(),
            "books" => self.books.to_string(),
            "codewords" => self.codewords.to_string(),
            "kmeans_iters" => self.kmeans_iters.to_string(),
            "kmeans_tol" => self.kmeans_tol.to_string(),
            "loss" => self.loss.as_str().to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "lr_query" => self.lr_query.to_string(),
            "lr_ivf" => self.lr_ivf.to_string(),
            "lr_pq" => self.lr_pq.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "reencode_every" => self.reencode_every.to_string(),
            "resume" => self.resume.to_string(),
            "use_ground_truth" => self.use_ground_truth.to_string(),
            "topk_pool" => self.topk_pool.to_string(),
            "topk_take" => match self.topk_take {
                TopkTake::All => "all".to_string(),
                TopkTake::Sample(n) => n.to_string(),
            },
            "use_in_batch" => self.use_in_batch.to_string(),
            "mine_k" => self.mine_k.to_string(),
            "nprobe" => self.nprobe.to_string(),
            "top_k" => self.top_k.to_string(),
            "recall_ks" => self
                .recall_ks
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "mrr_k" => self.mrr_k.to_string(),
            "val_k" => self.val_k.to_string(),
            "json" => self.json.to_string(),
            "synth_docs" => self.synth_docs.to_string(),
            "synth_queries" => self.synth_queries.to_string(),
            "clusters" => self.clusters.to_string(),
            "dim" => self.dim.to_string(),
            "doc_sigma" => self.doc_sigma.to_string(),
            "query_sigma" => self.query_sigma.to_string(),
            "query_scale" => self.query_scale.to_string(),
            "nuisance_sigma" => self.nuisance_sigma.to_string(),
            "query_stream" => self.query_stream.to_string(),
            _ => unreachable!("echo covers every scalar key"),
        }
    }

    fn path_value(&self, key: &str) -> &Option<PathBuf> {
        match key {
            "queries" => &self.queries,
            "docs" => &self.docs,
            "judgments" => &self.judgments,
            "index" => &self.index,
            "index_out" => &self.index_out,
            "transform" => &self.transform,
            "transform_out" => &self.transform_out,
            "topk_cache" => &self.topk_cache,
            "checkpoint" => &self.checkpoint,
            "log_out" => &self.log_out,
            "results_out" => &self.results_out,
            "report_out" => &self.report_out,
            "val_queries" => &self.val_queries,
            "val_judgments" => &self.val_judgments,
            _ => unreachable!("echo covers every path key"),
        }
    }

    /// Renders the resolved configuration as `# key = value` lines: set
    /// paths first, then every scalar. Commands print this before any work.
    pub fn echo(&self, command: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# command = {command}");
        for key in PATH_KEYS {
            if let Some(p) = self.path_value(key) {
                let _ = writeln!(out, "# {key} = {}", p.display());
            }
        }
        for key in SCALAR_KEYS {
            let _ = writeln!(out, "# {key} = {}", self.scalar_value(key));
        }
        out
    }

    /// The path a command cannot run without, or a usage error naming the
    /// missing key.
    pub fn need(&self, key: &str) -> Result<&Path> {
        self.path_value(key)
            .as_deref()
            .ok_or_else(|| Error::Config(format!("missing required config key '{key}'")))
    }
}
