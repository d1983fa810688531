use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn kglm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kglm"))
        .arg("--config")
        .arg(fixture("small.toml"))
        .args(args)
        .output()
        .expect("spawn kglm")
}

fn ok(args: &[&str]) -> String {
    let out = kglm(args);
    assert!(
        out.status.success(),
        "kglm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ingest(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&[
        "ingest",
        "--triples",
        s(&fixture("countries.tsv")),
        "--xlinks",
        s(&fixture("countries_xlinks.tsv")),
        "--test",
        s(&fixture("countries_test.tsv")),
        "--out",
        s(&data),
    ]);
    data
}

fn train(data: &Path, out: &Path) -> PathBuf {
    ok(&["train", "--data", s(data), "--out", s(out), "--checkpoint-every", "200"]);
    out.join("model.ckpt")
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for e in walk(dir) {
        let rel = e.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
        files.push((rel, fs::read(&e).unwrap()));
    }
    files.sort();
    files
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn ingest_keeps_given_test_split() {
    let tmp = TempDir::new().unwrap();
    let data = ingest(tmp.path());
    let test = fs::read_to_string(data.join("test.tsv")).unwrap();
    assert_eq!(test.lines().count(), 2);
    assert!(test.contains("Peru\tcapital\tLima"));
    let train = fs::read_to_string(data.join("train.tsv")).unwrap();
    assert!(train.contains("en\tEngland\tcapital\tLondon"));
    assert!(!train.contains("Peru\tcapital\tLima"));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "ingest");
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 3);
}

#[test]
fn england_capital_is_london() {
    let tmp = TempDir::new().unwrap();
    let data = ingest(tmp.path());
    let ckpt = train(&data, &tmp.path().join("model"));
    let stdout = ok(&[
        "predict",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ckpt),
        "--subject",
        "England",
        "--relation",
        "capital",
        "--lang",
        "en",
        "--k",
        "50",
    ]);
    let first: Vec<&str> = stdout.lines().next().unwrap().split('\t').collect();
    assert_eq!(&first[..5], ["en", "England", "capital", "1", "London"]);

    let stdout = ok(&[
        "predict",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ckpt),
        "--subject",
        "Inglaterra",
        "--target-lang",
        "en",
        "--lang",
        "es",
    ]);
    assert_eq!(stdout.lines().next().unwrap().split('\t').nth(4), Some("England"));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let data = ingest(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let ckpt = train(&data, &a);
    train(&data, &b);
    let fa = dir_contents(&a);
    assert!(fa.iter().any(|(n, _)| n.starts_with("checkpoints")));
    assert_eq!(fa, dir_contents(&b));

    for d in ["ea", "eb"] {
        ok(&["eval-lp", "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&tmp.path().join(d))]);
    }
    assert_eq!(dir_contents(&tmp.path().join("ea")), dir_contents(&tmp.path().join("eb")));
}

#[test]
fn pipeline_commands_write_their_artifacts() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path();
    let data = ingest(t);
    let ckpt = train(&data, &t.join("model"));

    ok(&["eval-lp", "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&t.join("eval"))]);
    let report = fs::read_to_string(t.join("eval/report.jsonl")).unwrap();
    assert!(report.lines().count() >= 2);
    assert!(fs::read_to_string(t.join("eval/table.txt")).unwrap().contains("H@10"));

    ok(&["calibrate", "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&t.join("cal"))]);
    assert!(t.join("cal/model.ckpt").exists());
    assert!(t.join("cal/tokenizer.txt").exists());

    let align = t.join("align");
    ok(&[
        "align",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ckpt),
        "--src-lang",
        "en",
        "--tgt-lang",
        "es",
        "--out",
        s(&align),
    ]);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(align.join("align.json")).unwrap()).unwrap();
    assert!(summary["orthogonality_residual"].as_f64().unwrap() < 1e-9);

    let emb = align.join("embeddings.txt");
    ok(&[
        "retrieve",
        "--embeddings",
        s(&emb),
        "--map",
        s(&align.join("map.txt")),
        "--src-lang",
        "en",
        "--tgt-lang",
        "es",
        "--pairs",
        s(&align.join("test_links.tsv")),
        "--out",
        s(&t.join("ret")),
    ]);
    assert!(t.join("ret/retrieval_summary.json").exists());
    ok(&[
        "retrieve",
        "--embeddings",
        s(&emb),
        "--src-lang",
        "en",
        "--tgt-lang",
        "es",
        "--query",
        "England",
        "--out",
        s(&t.join("ret2")),
    ]);
    assert!(fs::read_to_string(t.join("ret2/retrieval.jsonl")).unwrap().contains("England"));

    ok(&["baseline", "--data", s(&data), "--model", "transe", "--out", s(&t.join("kge"))]);
    assert!(t.join("kge/transe.kge.txt").exists());
    assert!(t.join("kge/report.jsonl").exists());
}

#[test]
fn transfer_experiment_runs() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("tr");
    ok(&["transfer-exp", "--out", s(&out), "--seeds", "1", "--n-entities", "12", "--epochs", "2", "--k", "5"]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("transfer.json")).unwrap()).unwrap();
    assert!(v.is_object());
}

#[test]
fn missing_checkpoint_leaves_no_report() {
    let tmp = TempDir::new().unwrap();
    let data = ingest(tmp.path());
    let out = tmp.path().join("eval");
    let res = kglm(&[
        "eval-lp",
        "--data",
        s(&data),
        "--checkpoint",
        s(&tmp.path().join("missing/model.ckpt")),
        "--out",
        s(&out),
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.join("report.jsonl").exists());
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let data = ingest(tmp.path());
    let model = tmp.path().join("model");
    let ckpt = train(&data, &model);
    let mut bytes = fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(&ckpt, bytes).unwrap();
    let res = kglm(&["eval-lp", "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&tmp.path().join("e"))]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!tmp.path().join("e").exists());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(kglm(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(kglm(&["ingest"]).status.code(), Some(1));
    assert_eq!(kglm(&["--threads", "0", "transfer-exp", "--out", "x"]).status.code(), Some(1));
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "no_such_key = 1\n").unwrap();
    let res = Command::new(env!("CARGO_BIN_EXE_kglm"))
        .args(["--config", s(&bad), "transfer-exp", "--out", s(&tmp.path().join("o"))])
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn missing_data_exits_two() {
    let tmp = TempDir::new().unwrap();
    let res = kglm(&["tokenize", "--data", s(&tmp.path().join("nope")), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(kglm(&["--help"]).status.code(), Some(0));
    assert_eq!(kglm(&["--version"]).status.code(), Some(0));
}
