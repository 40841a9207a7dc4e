use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qsor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsor")).args(args).env("RUST_LOG", "warn").output().expect("spawn qsor")
}

fn ok(args: &[&str]) -> Output {
    let out = qsor(args);
    assert!(out.status.success(), "qsor {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic corpus plus a stratified split inside a fresh directory.
fn corpus(n: usize) -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let split = dir.path().join("split.json");
    ok(&["synth", "--n", &n.to_string(), "--labels", "5", "--output", s(&data)]);
    ok(&["split", "--input", s(&data), "--output", s(&split)]);
    (dir, data, split)
}

#[test]
fn split_is_reproducible_byte_for_byte() {
    let (dir, data, first) = corpus(90);
    let second = dir.path().join("again.json");
    ok(&["split", "--input", s(&data), "--output", s(&second)]);
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());

    let other = dir.path().join("other.json");
    ok(&["--seed", "5", "split", "--input", s(&data), "--output", s(&other)]);
    assert_ne!(std::fs::read(&first).unwrap(), std::fs::read(&other).unwrap());

    let split: Value = serde_json::from_slice(&std::fs::read(&first).unwrap()).unwrap();
    assert_eq!(split["ids"].as_array().unwrap().len(), 90);
}

#[test]
fn folds_cover_every_molecule_once() {
    let (dir, data, _) = corpus(60);
    let out = dir.path().join("folds.json");
    ok(&["split", "--input", s(&data), "--output", s(&out), "--folds", "4"]);
    let split: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    let groups = split["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 60);
    assert!(groups.iter().all(|g| g.as_u64().unwrap() < 4));
    assert_eq!(split["group_names"][3], "fold3");
}

#[test]
fn train_then_eval_reports_mean_auroc() {
    let (dir, data, split) = corpus(120);
    let model = dir.path().join("gcn.json");
    let history = dir.path().join("history.csv");
    ok(&["train", "--model", "gcn", "--input", s(&data), "--split", s(&split), "--epochs", "4", "--output", s(&model), "--history", s(&history)]);
    assert_eq!(std::fs::read_to_string(&history).unwrap().lines().count(), 5);

    let report = dir.path().join("eval.json");
    let preds = dir.path().join("pred.csv");
    ok(&["eval", "--model", s(&model), "--input", s(&data), "--split", s(&split), "--subset", "all", "--resamples", "50", "--output", s(&report), "--predictions", s(&preds)]);
    let v: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    let auroc = v["mean_auroc"].as_f64().expect("mean_auroc");
    assert!((0.0..=1.0).contains(&auroc));
    assert_eq!(v["n_molecules"], 120);
    assert_eq!(v["metrics"]["per_label"].as_array().unwrap().len(), 5);
    assert_eq!(std::fs::read_to_string(&preds).unwrap().lines().count(), 121);

    for artifact in [&model, &report] {
        let manifest = PathBuf::from(format!("{}.manifest.json", artifact.display()));
        let m: Value = serde_json::from_slice(&std::fs::read(&manifest).unwrap()).unwrap();
        assert_eq!(m["tool"], "qsor");
        assert!(!m["inputs"].as_array().unwrap().is_empty());
    }
}

#[test]
fn baselines_train_and_evaluate() {
    let (dir, data, split) = corpus(120);
    for (kind, extra) in [("rf", ["--trees", "10"]), ("knn", ["--k", "5"])] {
        let model = dir.path().join(format!("{kind}.json"));
        let mut args = vec!["train", "--model", kind, "--input", s(&data), "--split", s(&split), "--output", s(&model)];
        args.extend(extra);
        ok(&args);
        let report = dir.path().join(format!("{kind}_eval.json"));
        ok(&["eval", "--model", s(&model), "--input", s(&data), "--split", s(&split), "--resamples", "0", "--output", s(&report)]);
        let v: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
        assert_eq!(v["model"], kind);
    }
}

fn read_embeddings(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let mut cells = line.split(',');
        ids.push(cells.next().unwrap().to_string());
        rows.push(cells.map(|c| c.parse::<f64>().unwrap()).collect());
    }
    (ids, rows)
}

#[test]
fn nearest_neighbors_match_linear_scan() {
    let (dir, data, split) = corpus(80);
    let model = dir.path().join("gcn.json");
    ok(&["train", "--model", "gcn", "--input", s(&data), "--split", s(&split), "--epochs", "2", "--output", s(&model)]);
    let emb = dir.path().join("emb.csv");
    ok(&["embed", "--model", s(&model), "--input", s(&data), "--output", s(&emb)]);
    let (ids, rows) = read_embeddings(&emb);

    let out = ok(&["nn", "--embeddings", s(&emb), "--k", "5", "--metric", "cosine", "--query", &ids[0], "--query", &ids[7]]);
    let text = String::from_utf8(out.stdout).unwrap();
    let got: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(got.len(), 10);

    let cosine = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        1.0 - dot / (na * nb)
    };
    for (qi, q) in [0usize, 7].into_iter().enumerate() {
        let mut scan: Vec<(f64, &str)> = (0..ids.len()).filter(|&j| j != q).map(|j| (cosine(&rows[q], &rows[j]), ids[j].as_str())).collect();
        scan.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
        for (rank, (d, id)) in scan.iter().take(5).enumerate() {
            let row = &got[qi * 5 + rank];
            assert_eq!(row[0], ids[q]);
            assert_eq!(row[1], (rank + 1).to_string());
            assert_eq!(row[2], *id);
            assert!((row[3].parse::<f64>().unwrap() - d).abs() < 1e-12);
        }
    }
}

#[test]
fn smiles_inspection_prints_canonical_forms() {
    let out = ok(&["parse", "--smiles", "OC1=CC=CC=C1", "--smiles", "c1ccccc1O"]);
    let lines: Vec<Value> = String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["canonical"], lines[1]["canonical"]);
    assert_eq!(lines[1]["atoms"], 7);
    assert_eq!(lines[1]["rings"], 1);
}

#[test]
fn parse_filters_and_writes_vocabulary() {
    let (dir, data, _) = corpus(100);
    let out = dir.path().join("clean.csv");
    let vocab = dir.path().join("vocab.json");
    ok(&["parse", "--input", s(&data), "--min-count", "5", "--output", s(&out), "--vocabulary", s(&vocab)]);
    let header = std::fs::read_to_string(&out).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "id,smiles,descriptors,source");
    assert!(vocab.exists());
    assert!(dir.path().join("clean.csv.manifest.json").exists());
}

#[test]
fn report_writes_tables() {
    let (dir, data, _) = corpus(100);
    let emb = dir.path().join("fp.csv");
    ok(&["embed", "--input", s(&data), "--output", s(&emb)]);
    let out = dir.path().join("report");
    ok(&["report", "--input", s(&data), "--out-dir", s(&out), "--embeddings", s(&emb), "--kde-labels", "fruity", "--grid", "16"]);
    for name in ["label_counts.csv", "cooccurrence_normalized.csv", "projection.csv", "pca.json", "kde_fruity.csv", "summary.json", "manifest.json"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    assert_eq!(std::fs::read_to_string(out.join("kde_fruity.csv")).unwrap().lines().count(), 16 * 16 + 1);
}

#[test]
fn input_errors_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = dir.path().join("split.json");
    let res = qsor(&["split", "--input", s(&missing), "--output", s(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());

    assert_eq!(qsor(&["split", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(qsor(&["train", "--model", "svm"]).status.code(), Some(2));
    assert_eq!(qsor(&["parse", "--smiles", "C1CC"]).status.code(), Some(2));

    let (dir, data, split) = corpus(60);
    let res = qsor(&["transfer", "--input", s(&data), "--split", s(&split), "--held-out", "nonexistent", "--output", s(&dir.path().join("t.json"))]);
    assert_eq!(res.status.code(), Some(2));
}
