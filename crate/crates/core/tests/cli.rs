use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nnose::cli::predictions::read_prediction_tags;
use nnose::datastore::load_datastore;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    /// Writes `train.ets`, `dev.ets` and `test.ets` under `sub`.
    fn synth(&self, sub: &str, sets: &[&str]) {
        let mut args = vec!["synth".to_string(), "--out-dir".into(), self.p(sub)];
        for kv in [
            "n_train_sentences=300",
            "n_dev_sentences=80",
            "n_test_sentences=80",
        ]
        .iter()
        .chain(sets)
        {
            args.push("--set".into());
            args.push((*kv).into());
        }
        ok(&run(&args));
    }
}

fn run<S: AsRef<str>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nnose"))
        .args(args.iter().map(AsRef::as_ref))
        .env("NNOSE_THREADS", "2")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn infer(store: &str, input: &str, extra: &[&str], out: &str) {
    let mut args = vec!["infer", "--store", store, "--input", input, "--out", out];
    args.extend_from_slice(extra);
    ok(&run(&args));
}

fn record(report: &str, name: &str, slice: &str) -> f64 {
    report
        .lines()
        .find_map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f.len() == 3 && f[0] == name && f[1] == slice).then(|| f[2].parse().unwrap())
        })
        .unwrap_or_else(|| panic!("no record {name}/{slice} in:\n{report}"))
}

/// Gold tags as a prediction file, for evaluating against itself.
fn gold_as_predictions(ets: &Path, out: &Path) {
    let sentences = nnose::stream::read_token_stream(ets).unwrap();
    let preds: Vec<_> = sentences
        .iter()
        .map(|s| {
            s.tokens
                .iter()
                .map(|t| (t.gold, nnose::model::Distribution3::one_hot(t.gold)))
                .collect()
        })
        .collect();
    nnose::cli::predictions::write_predictions(&preds, out).unwrap();
}

#[test]
fn build_reports_sources_and_rejects_missing_input() {
    let ws = Workspace::new();
    ws.synth("a", &["dataset_id=house"]);
    ws.synth("b", &["dataset_id=tech", "skill_seed=1"]);
    ws.synth("c", &["dataset_id=sayfullina", "skill_seed=2"]);

    let one = ok(&run(&["build", &ws.p("a/train.ets"), "--centroids", "16", "--out", &ws.p("one.nds")]));
    assert!(one.contains("source\thouse\t"));
    assert!(one.contains("whitening\ton"));
    assert_eq!(load_datastore(ws.path("one.nds")).unwrap().sources().count(), 1);

    let all = ok(&run(&[
        "build",
        &ws.p("a/train.ets"),
        &ws.p("b/train.ets"),
        &ws.p("c/train.ets"),
        "--no-whitening",
        "--centroids",
        "16",
        "--out",
        &ws.p("all.nds"),
    ]));
    assert!(all.contains("whitening\toff"));
    let store = load_datastore(ws.path("all.nds")).unwrap();
    let sources: Vec<&str> = store.sources().collect();
    assert_eq!(sources, vec!["house", "tech", "sayfullina"]);

    let missing = run(&["build", &ws.p("nope.ets"), "--out", &ws.p("missing.nds")]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(!missing.stderr.is_empty());
    assert!(!ws.path("missing.nds").exists());
    assert!(!ws.path("missing.nds.partial").exists());
}

#[test]
fn infer_is_deterministic_and_lambda_zero_is_base_decode() {
    let ws = Workspace::new();
    ws.synth("d", &[]);
    ok(&run(&["build", &ws.p("d/train.ets"), "--out", &ws.p("s.nds")]));
    let args = ["--k", "8", "--lambda", "0.4", "--temperature", "1"];
    infer(&ws.p("s.nds"), &ws.p("d/test.ets"), &args, &ws.p("p1.tsv"));
    infer(&ws.p("s.nds"), &ws.p("d/test.ets"), &args, &ws.p("p2.tsv"));
    assert_eq!(std::fs::read(ws.path("p1.tsv")).unwrap(), std::fs::read(ws.path("p2.tsv")).unwrap());

    infer(&ws.p("s.nds"), &ws.p("d/test.ets"), &["--lambda", "0"], &ws.p("zero.tsv"));
    let tags = read_prediction_tags(&ws.path("zero.tsv")).unwrap();
    let test = nnose::stream::read_token_stream(ws.path("d/test.ets")).unwrap();
    assert_eq!(tags, nnose::cli::pipeline::base_tags(&test));

    let line = std::fs::read_to_string(ws.path("p1.tsv")).unwrap().lines().next().unwrap().to_string();
    let fields: Vec<&str> = line.split('\t').collect();
    assert_eq!(fields.len(), 6);
    assert_eq!(&fields[..2], &["0", "0"]);
    assert!(fields[3..].iter().all(|p| p.split('.').nth(1).map(str::len) == Some(6)));
}

#[test]
fn clustered_agrees_with_exact() {
    let ws = Workspace::new();
    ws.synth("d", &["n_train_sentences=1000", "n_test_sentences=200"]);
    ok(&run(&["build", &ws.p("d/train.ets"), "--out", &ws.p("s.nds")]));
    let args = ["--k", "16", "--lambda", "0.5", "--temperature", "1"];
    let exact: Vec<&str> = args.iter().copied().chain(["--mode", "exact"]).collect();
    let clustered: Vec<&str> = args.iter().copied().chain(["--mode", "clustered"]).collect();
    infer(&ws.p("s.nds"), &ws.p("d/test.ets"), &exact, &ws.p("e.tsv"));
    infer(&ws.p("s.nds"), &ws.p("d/test.ets"), &clustered, &ws.p("c.tsv"));
    let e: Vec<_> = read_prediction_tags(&ws.path("e.tsv")).unwrap().concat();
    let c: Vec<_> = read_prediction_tags(&ws.path("c.tsv")).unwrap().concat();
    let agree = e.iter().zip(&c).filter(|(a, b)| a == b).count() as f64 / e.len() as f64;
    assert!(agree >= 0.99, "tag agreement {agree:.4}");
}

#[test]
fn infer_rejects_dimension_mismatch() {
    let ws = Workspace::new();
    ws.synth("d16", &[]);
    ws.synth("d8", &["dim=8"]);
    ok(&run(&["build", &ws.p("d16/train.ets"), "--out", &ws.p("s.nds")]));
    let out = run(&["infer", "--store", &ws.p("s.nds"), "--input", &ws.p("d8/test.ets"), "--out", &ws.p("x.tsv")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension"));
}

#[test]
fn sweep_grid_shape_and_selection() {
    let ws = Workspace::new();
    ws.synth("d", &[]);
    ok(&run(&["build", &ws.p("d/train.ets"), "--out", &ws.p("s.nds")]));

    let single = ok(&run(&[
        "sweep", "--store", &ws.p("s.nds"), "--dev", &ws.p("d/dev.ets"), "--ks", "8", "--lambdas", "0.3",
        "--temperatures", "2",
    ]));
    assert!(single.contains("best\tk=8\tlambda=0.30\ttemperature=2\t"));

    let full = ok(&run(&[
        "sweep",
        "--store",
        &ws.p("s.nds"),
        "--dev",
        &ws.p("d/dev.ets"),
        "--grid-out",
        &ws.p("grid.tsv"),
        "--params-out",
        &ws.p("best.params"),
    ]));
    let grid = std::fs::read_to_string(ws.path("grid.tsv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 6 * 17 * 7);
    let best_f1: f64 = full.trim().rsplit("f1=").next().unwrap().parse().unwrap();
    let floor = grid
        .lines()
        .skip(1)
        .find(|l| l.split('\t').nth(1) == Some("0.10"))
        .map(|l| l.rsplit('\t').next().unwrap().parse::<f64>().unwrap())
        .unwrap();
    assert!(best_f1 >= floor);
    let params = nnose::cli::crossmatrix::RunParams::from_file(&ws.path("best.params")).unwrap();
    assert!(params.fusion.k >= 4);
}

#[test]
fn sweep_on_noiseless_corpus_reaches_one() {
    let ws = Workspace::new();
    ws.synth("d", &["base_noise=0"]);
    ok(&run(&["build", &ws.p("d/train.ets"), "--out", &ws.p("s.nds")]));
    let out = ok(&run(&["sweep", "--store", &ws.p("s.nds"), "--dev", &ws.p("d/dev.ets"), "--grid-out", &ws.p("g.tsv")]));
    assert!(out.trim().ends_with("f1=1.000000"), "{out}");
}

#[test]
fn eval_reports_scores_bins_and_mcnemar() {
    let ws = Workspace::new();
    ws.synth("d", &[]);
    gold_as_predictions(&ws.path("d/test.ets"), &ws.path("gold.tsv"));
    let report = ok(&run(&[
        "eval",
        "--gold",
        &ws.p("d/test.ets"),
        "--pred",
        &ws.p("gold.tsv"),
        "--train",
        &ws.p("d/train.ets"),
        "--baseline-pred",
        &ws.p("gold.tsv"),
        "--records",
    ]));
    assert_eq!(record(&report, "f1", "all"), 1.0);
    assert_eq!(record(&report, "mcnemar_p", "tokens"), 1.0);
    assert_eq!(record(&report, "mcnemar_degenerate", "tokens"), 1.0);
    for bin in ["low", "mid_low", "mid_high", "high"] {
        record(&report, "f1", bin);
    }

    let table = ok(&run(&["eval", "--gold", &ws.p("d/test.ets"), "--pred", &ws.p("gold.tsv")]));
    assert!(table.contains("span-F1"));
}

#[test]
fn eval_rejects_misaligned_predictions() {
    let ws = Workspace::new();
    ws.synth("d", &[]);
    std::fs::write(ws.path("short.tsv"), "0\t0\tO\t1\t0\t0\n").unwrap();
    let out = run(&["eval", "--gold", &ws.p("d/test.ets"), "--pred", &ws.p("short.tsv")]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn crossmatrix_single_cell_matches_eval_and_marks_absent() {
    let ws = Workspace::new();
    ws.synth("d", &[]);
    std::fs::create_dir_all(ws.path("stores")).unwrap();
    ok(&run(&["build", &ws.p("d/train.ets"), "--out", &ws.p("stores/house.nds")]));
    std::fs::copy(ws.path("d/test.ets"), ws.path("house__house.ets")).unwrap();
    std::fs::write(ws.path("run.params"), "k=8\nlambda=0.4\ntemperature=1\nmode=exact\n").unwrap();

    let matrix = ok(&run(&[
        "crossmatrix",
        "--stores",
        &ws.p("stores"),
        "--datasets",
        &ws.p("house__house.ets"),
        "--params",
        &ws.p("run.params"),
        "--records",
    ]));
    infer(
        &ws.p("stores/house.nds"),
        &ws.p("d/test.ets"),
        &["--k", "8", "--lambda", "0.4", "--temperature", "1", "--mode", "exact"],
        &ws.p("p.tsv"),
    );
    let report = ok(&run(&["eval", "--gold", &ws.p("d/test.ets"), "--pred", &ws.p("p.tsv"), "--records"]));
    let fused_line = matrix.lines().find(|l| l.starts_with("knn\thouse\thouse\t")).unwrap();
    let fused: f64 = fused_line.split('\t').nth(3).unwrap().parse().unwrap();
    assert!((fused - record(&report, "f1", "all")).abs() < 1e-6);
    assert!(fused_line.ends_with("\t1"));

    // a cell whose store is missing is reported, not fatal
    std::fs::copy(ws.path("d/test.ets"), ws.path("tech__house.ets")).unwrap();
    let out = run(&[
        "crossmatrix",
        "--stores",
        &ws.p("stores"),
        "--datasets",
        &ws.p("house__house.ets"),
        &ws.p("tech__house.ets"),
        "--params",
        &ws.p("run.params"),
    ]);
    let table = ok(&out);
    assert!(table.contains('*'));
    assert!(table.contains(" -"));
}

#[test]
fn crossmatrix_off_diagonal_vanilla_drops() {
    let ws = Workspace::new();
    std::fs::create_dir_all(ws.path("stores")).unwrap();
    for (name, seed) in [("alpha", "0"), ("beta", "1")] {
        let skill = format!("skill_seed={seed}");
        let id = format!("dataset_id={name}");
        ws.synth(name, &[&skill, &id]);
        ws.synth(&format!("{name}_shift"), &[&skill, &id, "base_noise=0.5"]);
        ok(&run(&["build", &ws.p(&format!("{name}/train.ets")), "--out", &ws.p(&format!("stores/{name}.nds"))]));
    }
    let mut files = Vec::new();
    for train in ["alpha", "beta"] {
        for eval in ["alpha", "beta"] {
            let src = if train == eval { format!("{eval}/test.ets") } else { format!("{eval}_shift/test.ets") };
            let dst = format!("{train}__{eval}.ets");
            std::fs::copy(ws.path(&src), ws.path(&dst)).unwrap();
            files.push(ws.p(&dst));
        }
    }
    std::fs::write(ws.path("run.params"), "k=8\nlambda=0.5\ntemperature=2\n").unwrap();
    let mut args = vec!["crossmatrix".to_string(), "--stores".into(), ws.p("stores"), "--records".into(), "--params".into()];
    args.push(ws.p("run.params"));
    args.push("--datasets".into());
    args.extend(files);
    let records = ok(&run(&args));
    let get = |block: &str, train: &str, eval: &str| -> f64 {
        records
            .lines()
            .find(|l| l.starts_with(&format!("{block}\t{train}\t{eval}\t")))
            .unwrap()
            .split('\t')
            .nth(3)
            .unwrap()
            .parse()
            .unwrap()
    };
    for (train, eval) in [("alpha", "beta"), ("beta", "alpha")] {
        assert!(get("vanilla", train, eval) < get("vanilla", eval, eval));
        assert!(get("knn", train, eval) >= get("vanilla", train, eval));
    }
}

#[test]
fn provenance_counts_every_source() {
    let ws = Workspace::new();
    ws.synth("a", &["dataset_id=house"]);
    ws.synth("b", &["dataset_id=tech", "skill_seed=1"]);
    ok(&run(&["build", &ws.p("a/train.ets"), &ws.p("b/train.ets"), "--out", &ws.p("s.nds")]));
    let out = ok(&run(&["provenance", "--store", &ws.p("s.nds"), "--input", &ws.p("a/test.ets"), "--k", "4"]));
    let test = nnose::stream::read_token_stream(ws.path("a/test.ets")).unwrap();
    let tokens: usize = test.iter().map(|s| s.len()).sum();
    let total: usize = out.lines().map(|l| l.rsplit('\t').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 4 * tokens);
    assert!(out.contains("retrieved\thouse\t") && out.contains("retrieved\ttech\t"));
}

#[test]
fn bad_thread_setting_and_unknown_command_fail() {
    let out = Command::new(env!("CARGO_BIN_EXE_nnose"))
        .args(["synth", "--out-dir", "/nonexistent/x"])
        .env("NNOSE_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
