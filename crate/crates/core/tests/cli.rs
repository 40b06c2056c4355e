use std::fs;
use std::path::Path;

use itgpt::checkpoint::Checkpoint;
use itgpt::cli::{run, CHECKPOINT_FILE, RESULTS_FILE, TRACE_FILE};
use itgpt::manifest::MANIFEST_FILE;
use itgpt::report::read_results;

fn itgpt(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("itgpt").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn small_spec(dir: &Path) -> String {
    let p = dir.join("spec.txt");
    fs::write(
        &p,
        "observations = 30\nmodalities = a:2:2.0, b:1:1.0:0.2\nhorizon = 10.0\nlabel_rule = latent[0] > 0.0\n",
    )
    .unwrap();
    p.display().to_string()
}

fn synth(dir: &Path, name: &str, seed: &str) -> String {
    let out = dir.join(name);
    let spec = small_spec(dir);
    let (code, _, err) = itgpt(&["synth", "--spec", &spec, "--seed", seed, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    out.display().to_string()
}

const SMALL: [&str; 10] = ["--d_k", "4", "--d_a", "8", "--epochs", "2", "--batch_size", "8", "--anchor_len", "8"];

#[test]
fn synth_is_reproducible_and_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a", "3");
    let b = synth(dir.path(), "b", "3");
    let fa = itgpt::manifest::dataset_fingerprint(Path::new(&a)).unwrap();
    let fb = itgpt::manifest::dataset_fingerprint(Path::new(&b)).unwrap();
    assert_eq!(fa, fb);
    assert!(fs::read_to_string(Path::new(&a).join(MANIFEST_FILE)).unwrap().contains("seed.synth = 3"));
    let spec = small_spec(dir.path());
    let (code, _, err) = itgpt(&["synth", "--spec", &spec, "--out", &a]);
    assert_eq!(code, 1);
    assert!(err.contains("not empty"), "{err}");
}

#[test]
fn train_then_eval_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "data", "1");
    let run_dir = dir.path().join("run");
    let mut args = vec!["train", "--data", &data, "--out", run_dir.to_str().unwrap(), "--folds", "3"];
    args.extend(SMALL);
    let (code, out, err) = itgpt(&args);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("epoch   2"), "{out}");
    for f in [CHECKPOINT_FILE, TRACE_FILE, RESULTS_FILE, MANIFEST_FILE] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let manifest = fs::read_to_string(run_dir.join(MANIFEST_FILE)).unwrap();
    assert!(manifest.contains("artifact.checkpoint.bin = "));
    assert!(manifest.contains("config.folds = 3"));
    let ck = Checkpoint::load(&run_dir.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ck.config.folds, 3);

    let eval_dir = dir.path().join("eval");
    let ck_path = run_dir.join(CHECKPOINT_FILE);
    let (code, _, err) = itgpt(&[
        "eval",
        "--data",
        &data,
        "--checkpoint",
        ck_path.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let trained = read_results(&run_dir.join(RESULTS_FILE)).unwrap();
    let evaluated = read_results(&eval_dir.join(RESULTS_FILE)).unwrap();
    assert_eq!(trained, evaluated);
}

#[test]
fn gpt_then_ce_trace_has_both_phases() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "data", "2");
    let run_dir = dir.path().join("run");
    let mut args = vec!["train", "--data", &data, "--out", run_dir.to_str().unwrap(), "--scheme", "GPT_then_CE"];
    args.extend(SMALL);
    let (code, _, err) = itgpt(&args);
    assert_eq!(code, 0, "{err}");
    let trace = fs::read_to_string(run_dir.join(TRACE_FILE)).unwrap();
    let objectives: Vec<&str> = trace.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(objectives, ["mse", "mse", "ce", "ce", "ce", "ce", "ce"]);
}

#[test]
fn grid_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "data", "4");
    let grid = dir.path().join("grid.txt");
    fs::write(
        &grid,
        "d_k = 4\nd_a = 8\nepochs = 1\nbatch_size = 8\nanchor_len = 8\nfolds = 3\nschemes = CE, CE+SSL\nseeds = 0, 1\n",
    )
    .unwrap();
    let grid_dir = dir.path().join("grid");
    let (code, out, err) = itgpt(&["grid", "--data", &data, "--grid", grid.to_str().unwrap(), "--out", grid_dir.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().filter(|l| l.starts_with("fold ")).count(), 12);

    let results = grid_dir.join(RESULTS_FILE);
    let report = dir.path().join("report.csv");
    let (code, out, err) = itgpt(&[
        "report",
        results.to_str().unwrap(),
        "--group-by",
        "scheme",
        "--metric",
        "auroc",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("scheme"), "{out}");
    let csv = fs::read_to_string(&report).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("CE,auroc,6,"), "{csv}");
}

#[test]
fn empty_report_warns_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let (code, _, err) = itgpt(&["report", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(err.contains("warning"), "{err}");
}

#[test]
fn exit_codes_separate_usage_data_and_numeric_failures() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    assert_eq!(itgpt(&["train", "--data", missing.to_str().unwrap()]).0, 2);
    assert_eq!(itgpt(&["train", "--data", "x", "--scheme", "SSL"]).0, 1);
    assert_eq!(itgpt(&["train"]).0, 1);

    let data = synth(dir.path(), "data", "5");
    let run_dir = dir.path().join("run");
    let mut args = vec!["train", "--data", &data, "--out", run_dir.to_str().unwrap(), "--learning_rate", "1e300"];
    args.extend(SMALL);
    let (code, _, err) = itgpt(&args);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("diverged"), "{err}");
    assert!(run_dir.join(CHECKPOINT_FILE).exists());
    assert!(run_dir.join(MANIFEST_FILE).exists());

    let bad_ck = dir.path().join("bad.bin");
    fs::write(&bad_ck, b"not a checkpoint").unwrap();
    assert_eq!(itgpt(&["eval", "--data", &data, "--checkpoint", bad_ck.to_str().unwrap()]).0, 2);
}

#[test]
fn checks_report_pass_lines() {
    let (code, out, _) = itgpt(&["check", "oracle", "--size", "20", "--seed", "3"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("PASS oracle"), "{out}");
    assert_eq!(itgpt(&["check", "grad", "--depth", "0"]).0, 1);
}
