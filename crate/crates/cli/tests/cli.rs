use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn kge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kge-spr"))
        .args(args)
        .env_remove("KGE_SPR_SEED")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn one_line_error(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    serde_json::from_str(err.trim()).expect("machine-parseable error")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const RESULT_HEADER: &str = "run_id,status,error,dataset,model,dim,epochs,batch_size,learning_rate,optimizer,negatives,seed,reg,lambda,delta,delta_mode,eval_every,patience,reciprocal,rank_mode,loss_orientation,init_scale,split,mrr,mr,hits1,hits3,hits10,query_count,best_epoch,epochs_run,seconds";
const CURVE_HEADER: &str = "epoch,split,loss,mrr,mr,hits1,hits3,hits10";
const GAP_HEADER: &str = "run,model,reg,epoch,train_mrr,valid_mrr,gap_loss,gap_mrr,gap_mr,gap_hits1,gap_hits3,gap_hits10";

fn first_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn train_small(out: &Path, extra: &[&str]) -> serde_json::Value {
    let umls = data("umls");
    let mut args = vec!["train", "--dataset", s(&umls), "--dim", "10", "--epochs", "2", "--eval-every", "1", "--out", s(out)];
    args.extend_from_slice(extra);
    serde_json::from_str(&ok(&kge(&args))).unwrap()
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    train_small(&out, &["--reg", "spr", "--lambda", "0.5", "--delta", "0.3"]);
    for f in ["curves.csv", "result.json", "result.csv", "model.ckpt"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert_eq!(first_line(&out.join("curves.csv")), CURVE_HEADER);
    assert_eq!(first_line(&out.join("result.csv")), RESULT_HEADER);
    let result: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("result.json")).unwrap()).unwrap();

    let umls = data("umls");
    let ckpt = out.join("model.ckpt");
    let eval: serde_json::Value =
        serde_json::from_str(&ok(&kge(&["eval", "--checkpoint", s(&ckpt), "--dataset", s(&umls)]))).unwrap();
    assert_eq!(eval["both"], result["test"]);
    let raw: serde_json::Value =
        serde_json::from_str(&ok(&kge(&["eval", "--checkpoint", s(&ckpt), "--dataset", s(&umls), "--raw"]))).unwrap();
    assert!(raw["both"]["mrr"].as_f64().unwrap() <= eval["both"]["mrr"].as_f64().unwrap());

    let kinship = data("kinship");
    let err = one_line_error(&kge(&["eval", "--checkpoint", s(&ckpt), "--dataset", s(&kinship)]));
    assert_eq!(err["error"], "checkpoint");
    assert!(err["message"].as_str().unwrap().contains("mismatch"));
}

#[test]
fn zero_epochs_writes_header_only_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("zero");
    let umls = data("umls");
    ok(&kge(&["train", "--dataset", s(&umls), "--dim", "4", "--epochs", "0", "--out", s(&out)]));
    assert_eq!(fs::read_to_string(out.join("curves.csv")).unwrap(), format!("{CURVE_HEADER}\n"));
}

#[test]
fn missing_dataset_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no-such-dataset");
    let out = dir.path().join("out");
    let err = one_line_error(&kge(&["train", "--dataset", s(&missing), "--out", s(&out)]));
    assert!(err["message"].as_str().unwrap().contains("no-such-dataset"));
    assert!(!out.join("curves.csv").exists());
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    let umls = data("umls");
    fs::write(
        &cfg,
        format!("# small run\ndataset = {}\nmodel = distmult\ndim = 12\nepochs = 1\nseed = 4\n", s(&umls)),
    )
    .unwrap();
    let out = dir.path().join("o");
    let r: serde_json::Value =
        serde_json::from_str(&ok(&kge(&["train", "--config", s(&cfg), "--dim", "6", "--out", s(&out)]))).unwrap();
    assert_eq!(r["config"]["model"], "distmult");
    assert_eq!(r["config"]["dim"], 6);
    assert_eq!(r["config"]["seed"], 4);

    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "colour = blue\n").unwrap();
    assert_eq!(one_line_error(&kge(&["train", "--config", s(&bad)]))["error"], "config");
}

#[test]
fn seed_environment_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let umls = data("umls");
    let run = |seed_env: &str, extra: &[&str]| -> serde_json::Value {
        let out = dir.path().join(format!("s{seed_env}{}", extra.len()));
        let mut args = vec!["train", "--dataset", s(&umls), "--dim", "4", "--epochs", "0", "--out", s(&out)];
        args.extend_from_slice(extra);
        let o = Command::new(env!("CARGO_BIN_EXE_kge-spr"))
            .args(&args)
            .env("KGE_SPR_SEED", seed_env)
            .output()
            .unwrap();
        serde_json::from_str(&ok(&o)).unwrap()
    };
    assert_eq!(run("17", &[])["config"]["seed"], 17);
    assert_eq!(run("17", &["--seed", "2"])["config"]["seed"], 2);
}

#[test]
fn lambda_sweep_is_ordered_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let umls = data("umls");
    let args = [
        "sweep", "--dataset", s(&umls), "--model", "cp", "--reg", "n3", "--lambda", "1", "--dim", "6", "--epochs", "1",
        "--sweep-lambda", "5e-1,5e-2,5e-3,5e-4,5e-5", "--workers", "2", "--out", s(&out),
    ];
    let summary: serde_json::Value = serde_json::from_str(&ok(&kge(&args))).unwrap();
    assert_eq!(summary["executed"], 5);
    let sweep = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = sweep.lines();
    assert_eq!(lines.next().unwrap(), RESULT_HEADER);
    let lambdas: Vec<String> = lines.map(|l| l.split(',').nth(13).unwrap().to_string()).collect();
    assert_eq!(lambdas, ["0.5", "0.05", "0.005", "0.0005", "5e-05"]);
    assert!(sweep.lines().skip(1).all(|l| l.split(',').nth(1) == Some("ok") && l.contains(",valid,")));
    let test_rows = fs::read_to_string(out.join("sweep_test.csv")).unwrap();
    assert_eq!(test_rows.lines().count(), 6);
    let best: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("best.json")).unwrap()).unwrap();
    assert!(best["run_id"].is_string());

    let snapshot = |names: &[&str]| -> Vec<Vec<u8>> { names.iter().map(|n| fs::read(out.join(n)).unwrap()).collect() };
    let files = ["sweep.csv", "sweep_test.csv", "best.json"];
    let before = snapshot(&files);
    let again: serde_json::Value = serde_json::from_str(&ok(&kge(&args))).unwrap();
    assert_eq!(again["executed"], 0);
    assert_eq!(again["skipped"], 5);
    assert_eq!(snapshot(&files), before);

    let report = ok(&kge(&["report", s(&out)]));
    assert!(report.contains("gap_rows"));
    assert!(fs::read_to_string(out.join("summary.md")).unwrap().contains("Sweep"));
}

#[test]
fn failed_runs_are_recorded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let umls = data("umls");
    // A huge learning rate with SGD overflows for the large dimension only.
    let args = [
        "sweep", "--dataset", s(&umls), "--model", "cp", "--optimizer", "sgd", "--lr", "1e6", "--epochs", "2",
        "--sweep-dim", "2,64", "--out", s(&out),
    ];
    let summary: serde_json::Value = serde_json::from_str(&ok(&kge(&args))).unwrap();
    assert_eq!(summary["planned"], 2);
    let sweep = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
    let failed = summary["failed"].as_u64().unwrap() as usize;
    assert_eq!(sweep.matches(",failed,").count(), failed);
    assert!(failed >= 1);
}

#[test]
fn empty_axis_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let umls = data("umls");
    let out = dir.path().join("s");
    let err = one_line_error(&kge(&["sweep", "--dataset", s(&umls), "--sweep-dim", "", "--out", s(&out)]));
    assert_eq!(err["error"], "config");
    let err = one_line_error(&kge(&["sweep", "--dataset", s(&umls), "--out", s(&out)]));
    assert_eq!(err["error"], "config");
}

#[test]
fn report_compares_runs() {
    let dir = tempfile::tempdir().unwrap();
    train_small(&dir.path().join("none"), &[]);
    train_small(&dir.path().join("spr"), &["--reg", "spr", "--lambda", "1"]);
    let r: serde_json::Value = serde_json::from_str(&ok(&kge(&["report", s(dir.path())]))).unwrap();
    assert_eq!(r["runs"], serde_json::json!(["none", "spr"]));
    let gap = fs::read_to_string(dir.path().join("gap.csv")).unwrap();
    assert_eq!(gap.lines().next().unwrap(), GAP_HEADER);
    assert_eq!(gap.lines().count(), 1 + 4);
    let md = fs::read_to_string(dir.path().join("summary.md")).unwrap();
    assert!(md.contains("| cp | none |") && md.contains("| cp | spr |"));

    let empty = tempfile::tempdir().unwrap();
    one_line_error(&kge(&["report", s(empty.path())]));
}

#[test]
fn report_handles_single_epoch_curves() {
    let dir = tempfile::tempdir().unwrap();
    let umls = data("umls");
    ok(&kge(&["train", "--dataset", s(&umls), "--dim", "4", "--epochs", "1", "--out", s(dir.path())]));
    ok(&kge(&["report", s(dir.path())]));
    let gap = fs::read_to_string(dir.path().join("gap.csv")).unwrap();
    assert_eq!(gap.lines().count(), 2);
}
