//! End-to-end tests that drive the `rankvq` binary the way a user would:
//! real processes, real files, parsed stdout.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rankvq::search::{brute_force_batch, search_batch, SearchParams};
use rankvq::{EmbeddingSet, IndexArtifact, QueryTransform, RelevanceJudgments, TopkCache};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rankvq")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("failed to spawn the rankvq binary")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "rankvq {:?} failed with {:?}\nstdout:\n{}\nstderr:\n{}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("stdout was not utf-8")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Paths of one synthesized corpus (docs, queries, judgments).
struct Corpus {
    docs: PathBuf,
    queries: PathBuf,
    judgments: PathBuf,
}

fn synth(dir: &Path, docs: usize, queries: usize, dim: usize, seed: u64, extra: &[&str]) -> Corpus {
    let c = Corpus {
        docs: dir.join("docs.fvecs"),
        queries: dir.join("queries.fvecs"),
        judgments: dir.join("gt.tsv"),
    };
    let docs_n = docs.to_string();
    let queries_n = queries.to_string();
    let dim_n = dim.to_string();
    let seed_n = seed.to_string();
    let mut args = vec![
        "synth",
        "--docs",
        s(&c.docs),
        "--queries",
        s(&c.queries),
        "--judgments",
        s(&c.judgments),
        "--synth_docs",
        &docs_n,
        "--synth_queries",
        &queries_n,
        "--dim",
        &dim_n,
        "--seed",
        &seed_n,
    ];
    args.extend_from_slice(extra);
    run_ok(&args);
    c
}

fn build_index(c: &Corpus, out: &Path, lists: usize, books: usize, codewords: usize, seed: u64) {
    run_ok(&[
        "build",
        "--docs",
        s(&c.docs),
        "--index",
        s(out),
        "--lists",
        &lists.to_string(),
        "--books",
        &books.to_string(),
        "--codewords",
        &codewords.to_string(),
        "--seed",
        &seed.to_string(),
    ]);
}

/// Pulls `metric\tk\tvalue` rows out of an eval report, skipping the echo.
fn parse_report(stdout: &str) -> Vec<(String, usize, f64)> {
    stdout
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let mut it = l.split('\t');
            let metric = it.next().unwrap().to_string();
            let k = it.next().unwrap().parse().unwrap();
            let v = it.next().unwrap().parse().unwrap();
            (metric, k, v)
        })
        .collect()
}

fn metric(report: &[(String, usize, f64)], name: &str, k: usize) -> f64 {
    report
        .iter()
        .find(|(m, kk, _)| m == name && *kk == k)
        .unwrap_or_else(|| panic!("report lacks {name}@{k}: {report:?}"))
        .2
}

#[test]
fn build_output_loads_and_rebuild_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let c = synth(dir.path(), 100, 10, 16, 3, &[]);
    let index_a = dir.path().join("a.rvq");
    let index_b = dir.path().join("b.rvq");
    build_index(&c, &index_a, 8, 4, 16, 42);
    build_index(&c, &index_b, 8, 4, 16, 42);

    let bytes_a = fs::read(&index_a).unwrap();
    let bytes_b = fs::read(&index_b).unwrap();
    assert_eq!(bytes_a, bytes_b, "same config and seed must give identical index bytes");

    let loaded = IndexArtifact::load(&index_a).expect("built index must load back");
    assert_eq!(loaded.doc_count(), 100);

    // And the artifact is directly consumable by eval.
    let stdout = run_ok(&[
        "eval",
        "--queries",
        s(&c.queries),
        "--index",
        s(&index_a),
        "--judgments",
        s(&c.judgments),
        "--nprobe",
        "8",
        "--recall_ks",
        "10",
    ]);
    let report = parse_report(&stdout);
    assert!(metric(&report, "recall", 10) > 0.0);
}

#[test]
fn indivisible_dimension_fails_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let c = synth(dir.path(), 60, 5, 16, 0, &[]);
    let out = run(&[
        "build",
        "--docs",
        s(&c.docs),
        "--index",
        s(&dir.path().join("x.rvq")),
        "--lists",
        "4",
        "--books",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(2), "misconfigured geometry must exit 2");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("not divisible"),
        "error should say the dimension does not split: {stderr}"
    );
}

#[test]
fn mine_topk_matches_brute_force_and_clamps_oversized_k() {
    let dir = tempfile::tempdir().unwrap();
    let c = synth(dir.path(), 120, 15, 8, 9, &[]);
    let cache_path = dir.path().join("topk.ivecs");
    run_ok(&[
        "mine-topk",
        "--queries",
        s(&c.queries),
        "--docs",
        s(&c.docs),
        "--topk_cache",
        s(&cache_path),
        "--mine_k",
        "7",
    ]);

    let cache = TopkCache::read(&cache_path, 15).unwrap();
    let queries = EmbeddingSet::read_fvecs(&c.queries).unwrap();
    let docs = EmbeddingSet::read_fvecs(&c.docs).unwrap();
    let exact = brute_force_batch(&queries, &docs, None, 7).unwrap();
    for q in 0..15 {
        assert_eq!(
            cache.docs_for(q),
            exact[q].doc_ids().as_slice(),
            "mined ids for query {q} disagree with exhaustive search"
        );
    }

    // Asking for more neighbours than documents clamps with a warning.
    let out = run(&[
        "mine-topk",
        "--queries",
        s(&c.queries),
        "--docs",
        s(&c.docs),
        "--topk_cache",
        s(&dir.path().join("big.ivecs")),
        "--mine_k",
        "5000",
    ]);
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("clamp"), "expected a clamp warning, got: {stderr}");
    let clamped = TopkCache::read(dir.path().join("big.ivecs"), 15).unwrap();
    assert_eq!(clamped.docs_for(0).len(), 120);
}

#[test]
fn train_zero_epochs_copies_the_input_index() {
    let dir = tempfile::tempdir().unwrap();
    let c = synth(dir.path(), 90, 12, 16, 5, &[]);
    let index_in = dir.path().join("in.rvq");
    build_index(&c, &index_in, 6, 4, 8, 5);
    let cache = dir.path().join("topk.ivecs");
    run_ok(&[
        "mine-topk",
        "--queries",
        s(&c.queries),
        "--docs",
        s(&c.docs),
        "--topk_cache",
        s(&cache),
        "--mine_k",
        "20",
    ]);

    let index_out = dir.path().join("out.rvq");
    let xform_out = dir.path().join("xform.rvq");
    run_ok(&[
        "train",
        "--queries",
        s(&c.queries),
        "--docs",
        s(&c.docs),
        "--index",
        s(&index_in),
        "--topk_cache",
        s(&cache),
        "--topk_pool",
        "20",
        "--index_out",
        s(&index_out),
        "--transform_out",
        s(&xform_out),
        "--epochs",
        "0",
    ]);

    assert_eq!(
        fs::read(&index_in).unwrap(),
        fs::read(&index_out).unwrap(),
        "zero training epochs must leave the index untouched"
    );
    let xform = QueryTransform::load(&xform_out).unwrap();
    assert_eq!(
        xform.to_bytes(),
        QueryTransform::identity(16).to_bytes(),
        "zero training epochs must emit the identity transform"
    );
}

#[test]
fn training_log_is_finite_and_resume_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let c = synth(dir.path(), 250, 30, 16, 11, &[]);
    let index_in = dir.path().join("in.rvq");
    build_index(&c, &index_in, 8, 4, 16, 11);
    let cache = dir.path().join("topk.ivecs");
    run_ok(&[
        "mine-topk",
        "--queries",
        s(&c.queries),
        "--docs",
        s(&c.docs),
        "--topk_cache",
        s(&cache),
        "--mine_k",
        "25",
    ]);

    let train_args = |epochs: &str, index_out: &Path, xform_out: &Path, ckpt: &Path| {
        vec![
            "train".to_string(),
            "--queries".into(),
            s(&c.queries).into(),
            "--docs".into(),
            s(&c.docs).into(),
            "--index".into(),
            s(&index_in).into(),
            "--topk_cache".into(),
            s(&cache).into(),
            "--topk_pool".into(),
            "25".into(),
            "--seed".into(),
            "11".into(),
            "--epochs".into(),
            epochs.into(),
            "--index_out".into(),
            s(index_out).into(),
            "--transform_out".into(),
            s(xform_out).into(),
            "--checkpoint".into(),
            s(ckpt).into(),
        ]
    };

    // Uninterrupted 4-epoch run with a log.
    let a_index = dir.path().join("a.rvq");
    let a_xform = dir.path().join("a_xform.rvq");
    let log_path = dir.path().join("log.tsv");
    let mut args = train_args("4", &a_index, &a_xform, &dir.path().join("a_ckpt.rvq"));
    args.push("--log_out".into());
    args.push(s(&log_path).into());
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    let stdout = run_ok(&argv);

    let log = fs::read_to_string(&log_path).unwrap();
    let mut epochs_seen = 0;
    for line in log.lines() {
        let mut it = line.split('\t');
        let epoch: usize = it.next().unwrap().parse().unwrap();
        let loss: f64 = it.next().unwrap().parse().unwrap();
        assert!(loss.is_finite(), "epoch {epoch} logged a non-finite loss: {loss}");
        epochs_seen += 1;
    }
    assert_eq!(epochs_seen, 4, "one log line per epoch:\n{log}");
    assert!(
        stdout.lines().filter(|l| !l.starts_with('#')).count() >= 4,
        "per-epoch progress should be printed:\n{stdout}"
    );

    // Interrupted twin: stop after 2 epochs, then resume to 4.
    let b_ckpt = dir.path().join("b_ckpt.rvq");
    let argv = train_args("2", &dir.path().join("b2.rvq"), &dir.path().join("b2x.rvq"), &b_ckpt);
    let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
    run_ok(&argv);

    let b_index = dir.path().join("b.rvq");
    let b_xform = dir.path().join("b_xform.rvq");
    let mut args = train_args("4", &b_index, &b_xform, &b_ckpt);
    args.push("--resume".into());
    args.push("true".into());
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    let stdout = run_ok(&argv);
    assert!(
        stdout.contains("resumed after epoch 2"),
        "resume should report where it picked up:\n{stdout}"
    );

    assert_eq!(
        fs::read(&a_index).unwrap(),
        fs::read(&b_index).unwrap(),
        "resumed run must reproduce the uninterrupted index bytes"
    );
    assert_eq!(
        fs::read(&a_xform).unwrap(),
        fs::read(&b_xform).unwrap(),
        "resumed run must reproduce the uninterrupted transform bytes"
    );
}

#[test]
fn eval_lossless_index_scores_one_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    // Zero query noise: every query IS its judged document. One list per
    // document makes the index reconstruct each document exactly.
    let c = synth(dir.path(), 80, 40, 16, 21, &["--query_sigma", "0"]);
    let index = dir.path().join("index.rvq");
    build_index(&c, &index, 80, 4, 16, 21);

    let stdout = run_ok(&[
        "eval",
        "--queries",
        s(&c.queries),
        "--index",
        s(&index),
        "--judgments",
        s(&c.judgments),
        "--nprobe",
        "80",
        "--recall_ks",
        "1,10,50",
    ]);
    let report = parse_report(&stdout);
    assert_eq!(metric(&report, "recall", 1), 1.0, "report:\n{stdout}");
    assert_eq!(metric(&report, "recall", 10), 1.0);
    assert_eq!(metric(&report, "recall", 50), 1.0);
    assert_eq!(metric(&report, "mrr", 10), 1.0);
}

#[test]
fn eval_metrics_match_the_library_and_ignore_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let c = synth(dir.path(), 300, 40, 16, 13, &[]);
    let index_path = dir.path().join("index.rvq");
    build_index(&c, &index_path, 12, 4, 16, 13);

    let eval_args = |threads: &'static str| {
        vec![
            "eval",
            "--queries",
            s(&c.queries),
            "--index",
            s(&index_path),
            "--judgments",
            s(&c.judgments),
            "--nprobe",
            "4",
            "--recall_ks",
            "10,100",
            "--threads",
            threads,
        ]
    };
    let stdout = run_ok(&eval_args("1"));
    let report = parse_report(&stdout);

    // Same numbers straight from the library.
    let queries = EmbeddingSet::read_fvecs(&c.queries).unwrap();
    let index = IndexArtifact::load(&index_path).unwrap();
    let judgments = RelevanceJudgments::read(&c.judgments, queries.count()).unwrap();
    let params = SearchParams::new(4, 100).unwrap();
    let results = search_batch(&queries, &index, None, params).unwrap();
    for (k, want) in [
        (10usize, rankvq::metrics::recall_at_k(&results, &judgments, 10).unwrap()),
        (100, rankvq::metrics::recall_at_k(&results, &judgments, 100).unwrap()),
    ] {
        let got = metric(&report, "recall", k);
        assert!(
            (got - want).abs() < 5e-7,
            "recall@{k}: CLI printed {got}, library computed {want}"
        );
    }
    let want_mrr = rankvq::metrics::mrr_at_k(&results, &judgments, 10).unwrap();
    assert!((metric(&report, "mrr", 10) - want_mrr).abs() < 5e-7);

    // A different worker cap must not move any number.
    let stdout2 = run_ok(&eval_args("2"));
    assert_eq!(parse_report(&stdout), parse_report(&stdout2));

    // JSON variant carries the same fields as a flat object.
    let mut args = eval_args("1");
    args.extend_from_slice(&["--json", "true"]);
    let json_out = run_ok(&args);
    let parsed: serde_json::Value = serde_json::from_str(json_out.trim()).unwrap();
    let obj = parsed.as_object().expect("eval --json must print one flat object");
    // The TSV rounds to six decimals, JSON keeps full precision.
    assert!((obj["recall@10"].as_f64().unwrap() - metric(&report, "recall", 10)).abs() < 5e-7);
    assert!((obj["mrr@10"].as_f64().unwrap() - metric(&report, "mrr", 10)).abs() < 5e-7);
}

#[test]
fn recall_at_100_never_drops_as_nprobe_grows() {
    let dir = tempfile::tempdir().unwrap();
    let c = synth(dir.path(), 600, 60, 16, 17, &[]);
    let index = dir.path().join("index.rvq");
    build_index(&c, &index, 16, 4, 16, 17);

    // Judge each query by its exact dense nearest neighbour.
    let judged = dir.path().join("nn.ivecs");
    run_ok(&[
        "mine-topk",
        "--queries",
        s(&c.queries),
        "--docs",
        s(&c.docs),
        "--topk_cache",
        s(&judged),
        "--mine_k",
        "1",
    ]);

    let mut last = -1.0;
    for nprobe in ["1", "2", "4", "8", "16"] {
        let stdout = run_ok(&[
            "eval",
            "--queries",
            s(&c.queries),
            "--index",
            s(&index),
            "--judgments",
            s(&judged),
            "--nprobe",
            nprobe,
            "--recall_ks",
            "100",
        ]);
        let r100 = metric(&parse_report(&stdout), "recall", 100);
        assert!(
            r100 >= last,
            "recall@100 dropped from {last} to {r100} when nprobe grew to {nprobe}"
        );
        last = r100;
    }
    assert!(last > 0.5, "probing all lists should find most nearest neighbours");
}

#[test]
fn synth_zero_noise_queries_equal_their_judged_docs() {
    let dir = tempfile::tempdir().unwrap();
    let c = synth(dir.path(), 50, 20, 8, 31, &["--query_sigma", "0"]);

    let docs = EmbeddingSet::read_fvecs(&c.docs).unwrap();
    let queries = EmbeddingSet::read_fvecs(&c.queries).unwrap();
    let judgments = RelevanceJudgments::read(&c.judgments, 20).unwrap();
    for q in 0..20 {
        let gt = judgments.docs_for(q);
        assert_eq!(gt.len(), 1);
        assert_eq!(
            queries.row(q),
            docs.row(gt[0] as usize),
            "query {q} should be a bit-exact copy of its judged doc"
        );
    }

    let results = brute_force_batch(&queries, &docs, None, 1).unwrap();
    let r1 = rankvq::metrics::recall_at_k(&results, &judgments, 1).unwrap();
    assert_eq!(r1, 1.0, "self-retrieval recall@1 must be perfect");
}

#[test]
fn synth_counts_match_config_and_seeds_change_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), 64, 9, 8, 1, &[]);
    let docs = EmbeddingSet::read_fvecs(&a.docs).unwrap();
    let queries = EmbeddingSet::read_fvecs(&a.queries).unwrap();
    assert_eq!((docs.count(), docs.dim()), (64, 8));
    assert_eq!((queries.count(), queries.dim()), (9, 8));
    assert_eq!(RelevanceJudgments::read(&a.judgments, 9).unwrap().query_count(), 9);

    let dir_b = tempfile::tempdir().unwrap();
    let b = synth(dir_b.path(), 64, 9, 8, 2, &[]);
    assert_ne!(
        fs::read(&a.docs).unwrap(),
        fs::read(&b.docs).unwrap(),
        "different seeds must synthesize different corpora"
    );

    let dir_c = tempfile::tempdir().unwrap();
    let c = synth(dir_c.path(), 64, 9, 8, 1, &[]);
    assert_eq!(
        fs::read(&a.docs).unwrap(),
        fs::read(&c.docs).unwrap(),
        "equal seeds must synthesize identical corpora"
    );
}

#[test]
fn unknown_and_missing_keys_exit_two() {
    let dir = tempfile::tempdir().unwrap();

    // Unknown key in a config file, with its line number.
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "lists = 8\nfrobnicate = 1\n").unwrap();
    let out = run(&["build", "--config", s(&conf)]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("unknown config key 'frobnicate'") && stderr.contains(":2:"),
        "got: {stderr}"
    );

    // Unknown flag is a usage error too.
    let out = run(&["build", "--frobnicate", "1"]);
    assert_eq!(out.status.code(), Some(2));

    // A command without its required inputs names the missing key.
    let out = run(&["build", "--index", s(&dir.path().join("x.rvq"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("missing required config key 'docs'"),
        "got: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn flags_override_file_values_and_paths_resolve_against_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let c = synth(dir.path(), 100, 10, 16, 3, &[]);

    // The config file names its inputs relative to itself.
    let conf = dir.path().join("run.conf");
    fs::write(
        &conf,
        "docs = docs.fvecs\nindex = from_file.rvq\nlists = 4\nbooks = 4\ncodewords = 8\nseed = 3\n",
    )
    .unwrap();

    let stdout = run_ok(&["build", "--config", s(&conf), "--lists", "8"]);
    assert!(
        stdout.contains("# lists = 8"),
        "echo must show the flag value, not the file value:\n{stdout}"
    );
    assert!(
        stdout.contains("8 lists"),
        "the build must actually use the overridden value:\n{stdout}"
    );
    let built = IndexArtifact::load(dir.path().join("from_file.rvq")).unwrap();
    assert_eq!(built.lists(), 8);
    assert_eq!(built.doc_count(), 100, "relative docs path should resolve next to the file");

    // Echo precedes the work for every command and names the command.
    let first_line = stdout.lines().next().unwrap();
    assert_eq!(first_line, "# command = build");
    let _ = c;
}
