use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn xmoco(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xmoco"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn xmoco")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &[&str] = &[
    "--set", "synth.n_pairs=200",
    "--set", "synth.input_dim_a=12",
    "--set", "synth.input_dim_b=10",
    "--set", "encoder_a.input_dim=12",
    "--set", "encoder_b.input_dim=10",
    "--set", "encoder_a.hidden_dims=[16]",
    "--set", "encoder_b.hidden_dims=[16]",
    "--set", "train.batch_size=20",
    "--set", "train.epochs=4",
    "--set", "train.queue_capacity=60",
];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(SMALL);
    v
}

#[test]
fn gen_data_is_reproducible_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let o = xmoco(dir.path(), &with_small(&["gen-data", "--out", "a.jsonl"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("200 pairs"));
    xmoco(dir.path(), &with_small(&["gen-data", "--out", "b.jsonl"]));
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.jsonl")).unwrap());
    assert_eq!(a.iter().filter(|&&c| c == b'\n').count(), 200);

    let o = xmoco(dir.path(), &["gen-data", "--out", "c.jsonl", "--set", "synth.input_dim_b=0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("synth.input_dim_b"), "{}", stderr(&o));
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(xmoco(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(xmoco(dir.path(), &["eval"]).status.code(), Some(1));
    assert_eq!(xmoco(dir.path(), &["--help"]).status.code(), Some(0));
    let o = xmoco(dir.path(), &["train", "--data", "nope.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.jsonl"));
    std::fs::write(dir.path().join("cfg.json"), r#"{"train": {"epochs": 2}, "extra": 1}"#).unwrap();
    let o = xmoco(dir.path(), &["--config", "cfg.json", "gen-data", "--out", "x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("extra"), "{}", stderr(&o));
}

#[test]
fn train_eval_embed_retrieve_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(xmoco(d, &with_small(&["gen-data", "--out", "pairs.jsonl"])).status.success());

    for ck in ["m1.xmco", "m2.xmco"] {
        let o = xmoco(d, &with_small(&["train", "--data", "pairs.jsonl", "--checkpoint", ck]));
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let report: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(report["num_queries"], 100);
    }
    // Checkpoints embed their own path, so compare the second run to a
    // third with the same path instead.
    let first = std::fs::read(d.join("m2.xmco")).unwrap();
    xmoco(d, &with_small(&["train", "--data", "pairs.jsonl", "--checkpoint", "m2.xmco"]));
    assert_eq!(first, std::fs::read(d.join("m2.xmco")).unwrap());

    let history = std::fs::read_to_string(d.join("m1.xmco.history.jsonl")).unwrap();
    let kinds: Vec<String> = history
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["kind"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(kinds.iter().filter(|k| *k == "step").count(), 20);
    assert_eq!(kinds.last().unwrap(), "eval");

    let o = xmoco(d, &["eval", "--checkpoint", "m1.xmco", "--data", "pairs.jsonl"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    let keys: Vec<&str> = report.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(
        keys,
        ["i2t_r1", "i2t_r5", "i2t_r10", "t2i_r1", "t2i_r5", "t2i_r10", "ndcg5", "ndcg10", "ndcg20", "map", "num_queries"]
    );

    std::fs::write(
        d.join("rows.jsonl"),
        "{\"id\":\"x\",\"features\":[1,0,0,0,0,0,0,0,0,0]}\n{\"id\":\"x\",\"features\":[1,0,0,0,0,0,0,0,0,0]}\n",
    )
    .unwrap();
    let o = xmoco(d, &["embed", "--checkpoint", "m1.xmco", "--modality", "b", "--input", "rows.jsonl"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows: Vec<Value> = String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0], rows[1]);
    let e: Vec<f64> = serde_json::from_value(rows[0]["embedding"].clone()).unwrap();
    assert_eq!(e.len(), 32);
    assert!((e.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);

    // Pair rows work too; wrong width names the line.
    let o = xmoco(d, &["embed", "--checkpoint", "m1.xmco", "--modality", "a", "--input", "pairs.jsonl"]);
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 200);
    let o = xmoco(d, &["embed", "--checkpoint", "m1.xmco", "--modality", "a", "--input", "rows.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));

    let first: Value = serde_json::from_str(std::fs::read_to_string(d.join("pairs.jsonl")).unwrap().lines().next().unwrap()).unwrap();
    let query = first["feat_b"].to_string();
    let o = xmoco(d, &["retrieve", "--checkpoint", "m1.xmco", "--corpus", "pairs.jsonl", "--modality", "b", "--query", &query, "--k", "500"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["ids"].as_array().unwrap().len(), 200);
    let scores: Vec<f64> = serde_json::from_value(r["scores"].clone()).unwrap();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    let o = xmoco(d, &["retrieve", "--checkpoint", "m1.xmco", "--corpus", "pairs.jsonl", "--modality", "b", "--query", "oops"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn synthetic_training_without_a_data_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = xmoco(dir.path(), &with_small(&["train", "--set", "train.epochs=1"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("model.xmco").exists());
    let mut args = with_small(&["train"]);
    args.extend(["--set", "encoder_a.input_dim=13"]);
    let o = xmoco(dir.path(), &args);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("encoder_a.input_dim"));
}
