//! `rankvq` — build, distill, and query a retrieval-oriented quantization
//! index from the command line.
//!
//! Every subcommand reads the same flat `key = value` config (see
//! [`config::RunConfig`]); flags repeat the key names and win over file
//! values. Exit codes: 0 success, 2 usage or config error, 3 malformed data
//! file, 4 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use rankvq::{Error, Result};

/// Declares one optional string flag per config key, plus the collector
/// that feeds whichever were given into [`RunConfig::apply`]. Keeping flags
/// untyped here means file values and flag values go through the exact same
/// parsing and error paths.
macro_rules! key_args {
    ($($key:ident),* $(,)?) => {
        #[derive(Args, Debug, Default)]
        struct KeyArgs {
            /// Flat `key = value` config file; the flags below override it.
            #[arg(long, value_name = "FILE")]
            config: Option<PathBuf>,
            $(
                #[arg(long = stringify!($key), value_name = "VALUE")]
                $key: Option<String>,
            )*
        }

        impl KeyArgs {
            fn overrides(&self) -> Vec<(&'static str, &str)> {
                let mut pairs = Vec::new();
                $(
                    if let Some(v) = &self.$key {
                        pairs.push((stringify!($key), v.as_str()));
                    }
                )*
                pairs
            }
        }
    };
}

key_args!(
    queries,
    docs,
    judgments,
    index,
    index_out,
    transform,
    transform_out,
    topk_cache,
    checkpoint,
    log_out,
    results_out,
    report_out,
    val_queries,
    val_judgments,
    seed,
    threads,
    lists,
    books,
    codewords,
    kmeans_iters,
    kmeans_tol,
    loss,
    batch_size,
    epochs,
    lr_query,
    lr_ivf,
    lr_pq,
    weight_decay,
    reencode_every,
    resume,
    use_ground_truth,
    topk_pool,
    topk_take,
    use_in_batch,
    mine_k,
    nprobe,
    top_k,
    recall_ks,
    mrr_k,
    val_k,
    json,
    synth_docs,
    synth_queries,
    clusters,
    dim,
    doc_sigma,
    query_sigma,
    query_scale,
    nuisance_sigma,
    query_stream,
);

#[derive(Parser, Debug)]
#[command(
    name = "rankvq",
    version,
    about = "Distilled vector-quantization retrieval: build, train, search, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Build a quantization index from document embeddings
    Build(KeyArgs),
    /// Mine each query's exact top-K documents by dense inner product
    #[command(name = "mine-topk")]
    MineTopk(KeyArgs),
    /// Distill the index and query transform against dense scores
    Train(KeyArgs),
    /// Search an index with query embeddings
    Search(KeyArgs),
    /// Evaluate retrieval metrics over a judged query set
    Eval(KeyArgs),
    /// Generate a synthetic corpus with known ground truth
    Synth(KeyArgs),
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Build(_) => "build",
            Cmd::MineTopk(_) => "mine-topk",
            Cmd::Train(_) => "train",
            Cmd::Search(_) => "search",
            Cmd::Eval(_) => "eval",
            Cmd::Synth(_) => "synth",
        }
    }

    fn args(&self) -> &KeyArgs {
        match self {
            Cmd::Build(a)
            | Cmd::MineTopk(a)
            | Cmd::Train(a)
            | Cmd::Search(a)
            | Cmd::Eval(a)
            | Cmd::Synth(a) => a,
        }
    }
}

fn resolve_config(args: &KeyArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    for (key, value) in args.overrides() {
        cfg.apply(key, value, None)?;
    }
    Ok(cfg)
}

/// Caps the global worker pool. Results never depend on the cap; it only
/// bounds resource use.
fn init_threads(threads: usize) -> Result<()> {
    if threads == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli.command.args())?;
    init_threads(cfg.threads)?;
    // The echo makes every run reproducible from captured output alone. In
    // JSON mode it moves to stderr so stdout stays machine-parseable.
    let echo = cfg.echo(cli.command.name());
    if cfg.json {
        eprint!("{echo}");
    } else {
        print!("{echo}");
    }
    match &cli.command {
        Cmd::Build(_) => commands::cmd_build(&cfg),
        Cmd::MineTopk(_) => commands::cmd_mine_topk(&cfg),
        Cmd::Train(_) => commands::cmd_train(&cfg),
        Cmd::Search(_) => commands::cmd_search(&cfg),
        Cmd::Eval(_) => commands::cmd_eval(&cfg),
        Cmd::Synth(_) => commands::cmd_synth(&cfg),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Err(err) = run(&cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code() as i32);
    }
}
