mod common;

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::thread;

use common::*;
use serde_json::Value;
use tempalign::llmgate::TOP_P_SWEEP;

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// `retrieve` + `prompt` for `strategy` at `k`, then scripted answers into the cassette.
fn prepare_cassette(fx: &Fixture, work: &Path, strategy: &str, k: usize, extra: &[&str]) -> std::path::PathBuf {
    let sel = work.join(format!("sel-{strategy}-{k}.jsonl"));
    let prompts = work.join(format!("prompts-{strategy}-{k}.jsonl"));
    let mut args: Vec<String> = vec!["retrieve".into()];
    args.extend(fx.retrieval_args());
    args.extend(["--strategy".into(), strategy.into(), "--k".into(), k.to_string(), "--output".into(), s(&sel).into()]);
    args.extend(extra.iter().map(|x| x.to_string()));
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    ok(&["prompt", "--selections", s(&sel), "--queries", s(&fx.path("low_test.jsonl")), "--rich-corpus", s(&fx.path("rich.jsonl")), "--output", s(&prompts)]);
    let cassette = work.join("cassette.jsonl");
    add_to_cassette(&cassette, &prompts, &fx.queries());
    cassette
}

fn run_args(fx: &Fixture, strategy: &str, cassette: &Path, out: &Path) -> Vec<String> {
    let mut args: Vec<String> = vec!["run".into()];
    args.extend(fx.retrieval_args());
    args.extend(
        ["--strategy", strategy, "--cassette", s(cassette), "--model", MODEL, "--out-dir", s(out)]
            .map(String::from),
    );
    args
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[test]
fn run_without_backend_fails_before_anything_else() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let r = tempalign(&["run", "--queries", "/nonexistent.jsonl", "--model", "m", "--out-dir", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("no completion backend"));
    assert!(!out.exists());
}

#[test]
fn replay_run_scores_scripted_answers() {
    let dir = tempfile::tempdir().unwrap();
    let fx = Fixture::new(dir.path(), 16, 90, 60);
    let cassette = prepare_cassette(&fx, dir.path(), "cross-lingual", 3, &[]);
    let out = dir.path().join("out");
    ok(&strs(&run_args(&fx, "cross-lingual", &cassette, &out)));

    let n = fx.queries().len();
    let report = json(&out.join("aggregate.json"));
    assert_eq!(report["n"], n);
    let mut means = Vec::new();
    for (j, top_p) in TOP_P_SWEEP.into_iter().enumerate() {
        // Oracle: scripted answers are gold unless (i + j) % 3 == 0.
        let expected = (0..n).filter(|i| (i + j) % 3 != 0).count() as f64 / n as f64;
        let agg = json(&out.join(format!("top_p-{top_p}/aggregate.json")));
        assert!((agg["mean_em"].as_f64().unwrap() - expected).abs() < 1e-12, "top_p {top_p}");
        assert!((agg["mean_f1"].as_f64().unwrap() - expected).abs() < 1e-12);
        let preds = fs::read_to_string(out.join(format!("top_p-{top_p}/predictions.jsonl"))).unwrap();
        assert!(!preds.contains("ignored"));
        means.push(expected);
    }
    let mean = means.iter().sum::<f64>() / 3.0;
    assert!((report["mean_em"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert!(out.join("run.manifest.json").is_file());
}

#[test]
fn replay_miss_is_backend_error_unless_lenient() {
    let dir = tempfile::tempdir().unwrap();
    let fx = Fixture::new(dir.path(), 8, 40, 30);
    let cassette = prepare_cassette(&fx, dir.path(), "cross-lingual", 2, &[]);
    let mut args = run_args(&fx, "cross-lingual", &cassette, &dir.path().join("out"));
    args.extend(["--k".into(), "2".into(), "--top-p".into(), "0.5".into()]);
    assert_eq!(tempalign(&strs(&args)).status.code(), Some(4));
    args.push("--lenient".into());
    ok(&strs(&args));
    let agg = json(&dir.path().join("out/top_p-0.5/aggregate.json"));
    assert_eq!(agg["mean_em"], 0.0);
}

#[test]
fn ablate_kshot_writes_one_report_per_k() {
    let dir = tempfile::tempdir().unwrap();
    let fx = Fixture::new(dir.path(), 8, 60, 40);
    let mut cassette = dir.path().join("cassette.jsonl");
    for k in 1..=3 {
        cassette = prepare_cassette(&fx, dir.path(), "in-language", k, &[]);
    }
    let out = dir.path().join("kshot");
    let mut args = run_args(&fx, "in-language", &cassette, &out);
    args[0] = "ablate-kshot".into();
    args.extend(["--ks".into(), "1,2,3".into()]);
    ok(&strs(&args));
    for k in 1..=3 {
        let report = json(&out.join(format!("report-k{k}.json")));
        assert_eq!(report["k"], k);
        assert_eq!(report["runs"].as_array().unwrap().len(), 3);
        assert!(out.join(format!("k{k}/aggregate.json")).is_file());
    }
}

#[test]
fn ablate_hw_grid() {
    let dir = tempfile::tempdir().unwrap();
    let fx = Fixture::new(dir.path(), 8, 80, 60);
    let out = dir.path().join("hw.json");
    ok(&[
        "ablate-hw",
        "--low-corpus",
        s(&fx.path("low_train.jsonl")),
        "--low-store",
        s(&fx.path("low.clts")),
        "--translated-store",
        s(&fx.path("translated.clts")),
        "--id-map",
        s(&fx.path("id_map.json")),
        "--output",
        s(&out),
    ]);
    let report = json(&out);
    let cells = report["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 9);
    for c in cells {
        let (h, w) = (c["h"].as_u64().unwrap() as usize, c["w"].as_u64().unwrap() as usize);
        assert_eq!(c["sample_size"].as_u64().unwrap() as usize, 60 * (h + w));
        assert!((c["prioritization"].as_f64().unwrap() - h as f64 / (h + w) as f64).abs() < 1e-15);
        assert!(c["kl"].as_f64().unwrap() >= 0.0);
    }
    assert!(report["selected"].is_object());
}

#[test]
fn strict_mode_detects_modified_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let fx = Fixture::new(dir.path(), 8, 30, 20);
    let sel = dir.path().join("sel.jsonl");
    let mut args: Vec<String> = vec!["--strict".into(), "retrieve".into()];
    args.extend(fx.retrieval_args());
    args.extend(["--strategy".into(), "cross-lingual".into(), "--output".into(), s(&sel).into()]);
    ok(&strs(&args));

    let rich = fx.path("rich.jsonl");
    let mut text = fs::read_to_string(&rich).unwrap();
    text.push('\n');
    fs::write(&rich, text).unwrap();
    let r = tempalign(&strs(&args));
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stderr).contains("checksum mismatch"));
    ok(&strs(&args[1..]));
}

#[test]
fn corrupt_store_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let fx = Fixture::new(dir.path(), 8, 30, 20);
    let store = fx.path("rich.clts");
    let bytes = fs::read(&store).unwrap();
    fs::write(&store, &bytes[..bytes.len() - 3]).unwrap();
    let mut args: Vec<String> = vec!["retrieve".into()];
    args.extend(fx.retrieval_args());
    args.extend(["--strategy".into(), "cross-lingual".into(), "--output".into(), s(&dir.path().join("x")).into()]);
    assert_eq!(tempalign(&strs(&args)).status.code(), Some(3));
}

#[test]
fn missing_prerequisite_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let fx = Fixture::new(dir.path(), 8, 30, 20);
    let mut args: Vec<String> = vec!["retrieve".into()];
    args.extend(fx.retrieval_args());
    args.extend(["--strategy".into(), "aligned".into(), "--output".into(), s(&dir.path().join("x")).into()]);
    assert_eq!(tempalign(&strs(&args)).status.code(), Some(2));
}

#[test]
fn train_pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let fx = Fixture::new(d, 8, 60, 40);
    let pairs = d.join("pairs.jsonl");
    ok(&[
        "pairgen",
        "--low-corpus",
        s(&fx.path("low_train.jsonl")),
        "--low-store",
        s(&fx.path("low.clts")),
        "--translated-store",
        s(&fx.path("translated.clts")),
        "--id-map",
        s(&fx.path("id_map.json")),
        "--h",
        "10",
        "--w",
        "5",
        "--val-fraction",
        "0.1",
        "--output",
        s(&pairs),
    ]);
    let val = d.join("pairs.val.jsonl");
    assert!(val.is_file());
    let train = |name: &str| {
        let head = d.join(name);
        ok(&[
            "--threads",
            "2",
            "train",
            "--pairs",
            s(&pairs),
            "--val-pairs",
            s(&val),
            "--low-store",
            s(&fx.path("low.clts")),
            "--rich-store",
            s(&fx.path("rich.clts")),
            "--epochs",
            "2",
            "--learning-rate",
            "0.01",
            "--seed",
            "5",
            "--output",
            s(&head),
            "--report",
            s(&d.join(format!("{name}.report.json"))),
        ]);
        fs::read(head).unwrap()
    };
    assert_eq!(train("a.clhd"), train("b.clhd"));
    let report = json(&d.join("a.clhd.report.json"));
    assert_eq!(report["train_loss"].as_array().unwrap().len(), 2);
    assert_eq!(report["val_loss"].as_array().unwrap().len(), 2);

    let hist = d.join("hist");
    ok(&[
        "histograms",
        "--low-store",
        s(&fx.path("low.clts")),
        "--rich-store",
        s(&fx.path("rich.clts")),
        "--pairs",
        s(&fx.path("translation_pairs.json")),
        "--after",
        s(&d.join("a.clhd")),
        "--out-dir",
        s(&hist),
    ]);
    for name in ["positive_before", "positive_after", "antagonist_before", "antagonist_after"] {
        let csv = fs::read_to_string(hist.join(format!("{name}.csv"))).unwrap();
        assert!(csv.starts_with("bin_lo,bin_hi,count\n"));
        assert_eq!(csv.lines().count(), 51);
    }
    assert!(json(&hist.join("shift.json"))["positive"]["pairs"].as_u64().unwrap() == 60);
}

#[test]
fn ingest_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let emb = d.join("emb.jsonl");
    fs::write(&emb, "{\"id\":\"a\",\"vector\":[1.0,0.0]}\n{\"id\":\"b\",\"vector\":[0.5,0.5]}\n").unwrap();
    let store = d.join("emb.clts");
    ok(&["ingest", "embeddings", "--input", s(&emb), "--output", s(&store)]);
    let loaded = tempalign::embedstore::EmbeddingStore::from_bytes(&fs::read(&store).unwrap()).unwrap();
    assert_eq!(loaded.len(), 2);
    assert!(d.join("emb.clts.manifest.json").is_file());

    fs::write(&emb, "{\"id\":\"a\",\"vector\":[1.0,0.0]}\n{\"id\":\"b\",\"vector\":[0.5]}\n").unwrap();
    assert_eq!(tempalign(&["ingest", "embeddings", "--input", s(&emb), "--output", s(&store)]).status.code(), Some(3));

    let corpus = d.join("c.jsonl");
    fs::write(
        &corpus,
        "{\"id\":\"q1\",\"language\":\"fr\",\"level\":\"L1\",\"question\":\"Quel mois ?\",\"answers\":[\"mars 1999\"]}\n",
    )
    .unwrap();
    let canon = d.join("canon.jsonl");
    ok(&["ingest", "corpus", "--input", s(&corpus), "--output", s(&canon)]);
    let stats = ok(&["stats", "--corpus", s(&canon)]);
    let v: Value = serde_json::from_slice(&stats.stdout).unwrap();
    assert_eq!(v["count"], 1);
    assert_eq!(v["year_range"], serde_json::json!([1999, 1999]));
}

#[test]
fn score_with_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let fx = Fixture::new(d, 8, 40, 20);
    let queries = fx.queries();
    let write_preds = |name: &str, good: bool| {
        let path = d.join(name);
        let lines: Vec<String> = queries
            .iter()
            .map(|q| {
                let p = if good { q.answers[0].clone() } else { "nimic".to_string() };
                serde_json::json!({"query_id": q.id, "prediction": p}).to_string()
            })
            .collect();
        fs::write(&path, lines.join("\n") + "\n").unwrap();
        path
    };
    let bad = write_preds("bad.jsonl", false);
    let good = write_preds("good.jsonl", true);
    let q = fx.path("low_test.jsonl");
    ok(&["score", "--queries", s(&q), "--predictions", s(&bad), "--output", s(&d.join("bad.scores.jsonl"))]);
    ok(&[
        "score",
        "--queries",
        s(&q),
        "--predictions",
        s(&good),
        "--output",
        s(&d.join("good.scores.jsonl")),
        "--aggregate",
        s(&d.join("good.agg.json")),
        "--baseline",
        s(&d.join("bad.scores.jsonl")),
    ]);
    let agg = json(&d.join("good.agg.json"));
    assert_eq!(agg["mean_em"], 1.0);
    assert!(agg["p_value"].as_f64().unwrap() < 1e-6);
}

#[test]
fn config_file_supplies_paths() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let fx = Fixture::new(d, 8, 30, 20);
    let cassette = prepare_cassette(&fx, d, "cross-lingual", 3, &[]);
    fs::write(
        d.join("run.toml"),
        "strategy = \"cross-lingual\"\nmodel = \"test-model\"\n[paths]\nqueries = \"fx/low_test.jsonl\"\n\
         low_store = \"fx/low.clts\"\nrich_corpus = \"fx/rich.jsonl\"\nrich_store = \"fx/rich.clts\"\n\
         cassette = \"cassette.jsonl\"\nout_dir = \"cfg-out\"\n",
    )
    .unwrap();
    assert!(cassette.is_file());
    ok(&["--config", s(&d.join("run.toml")), "run"]);
    assert!(d.join("cfg-out/aggregate.json").is_file());

    fs::write(d.join("bad.toml"), "stratgy = 1\n").unwrap();
    assert_eq!(tempalign(&["--config", s(&d.join("bad.toml")), "run"]).status.code(), Some(2));
}

/// Answers every request with `{"choices":[{"text":"ianuarie 2001"}]}`.
fn answering_stub() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((name, value)) = line.split_once(':') {
                    if name.eq_ignore_ascii_case("content-length") {
                        length = value.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0u8; length];
            reader.read_exact(&mut body).unwrap();
            let reply = r#"{"choices":[{"text":"ianuarie 2001"}]}"#;
            let mut out = stream;
            write!(
                out,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
        }
    });
    url
}

#[test]
fn record_then_replay_offline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let fx = Fixture::new(d, 8, 30, 20);
    let url = answering_stub();
    let cassette = d.join("rec.jsonl");
    let mut args = run_args(&fx, "cross-lingual", &cassette, &d.join("live"));
    args.extend(["--base-url".into(), url, "--record".into()]);
    ok(&strs(&args));
    let entries = fs::read_to_string(&cassette).unwrap().lines().count();
    assert_eq!(entries, 10 * 3);

    ok(&strs(&run_args(&fx, "cross-lingual", &cassette, &d.join("replay"))));
    for top_p in TOP_P_SWEEP {
        let rel = format!("top_p-{top_p}/predictions.jsonl");
        assert_eq!(fs::read(d.join("live").join(&rel)).unwrap(), fs::read(d.join("replay").join(&rel)).unwrap());
    }
}
