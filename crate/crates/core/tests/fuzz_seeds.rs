//! Replays the checked-in fuzz seeds through the same entry points as the
//! fuzz targets. Every seed is a valid input and must decode.

use std::fs;
use std::path::PathBuf;

use tempalign::aligner::AlignmentHead;
use tempalign::corpus::{parse_corpus, MonthYear, SplitName, TaskLevel};
use tempalign::embedstore::EmbeddingStore;
use tempalign::evalkit::read_scores;
use tempalign::llmgate::Cassette;
use tempalign::pairgen::{read_id_map, TrainingSet};
use tempalign::promptkit::{normalize_answer, PromptTemplate};
use tempalign::retriever::read_selections;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            (path.display().to_string(), fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn corpus_seeds() {
    for (name, data) in seeds("corpus_parse") {
        let first: serde_json::Value = serde_json::from_slice(data.split(|&b| b == b'\n').next().unwrap()).unwrap();
        let level: TaskLevel = first["level"].as_str().unwrap().parse().unwrap();
        let lang = first["language"].as_str().unwrap();
        let split = parse_corpus(&data[..], lang, level, SplitName::Train).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(parse_corpus(&split.to_jsonl()[..], lang, level, SplitName::Train).unwrap(), split);
    }
}

#[test]
fn binary_seeds_round_trip() {
    for (name, data) in seeds("store_bytes") {
        let store = EmbeddingStore::from_bytes(&data).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(store.to_bytes(), data);
    }
    for (name, data) in seeds("head_bytes") {
        let head = AlignmentHead::from_bytes(&data).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(head.to_bytes(), data);
    }
    for (name, data) in seeds("store_jsonl") {
        EmbeddingStore::from_jsonl(&data[..], None).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn jsonl_seeds() {
    for (name, data) in seeds("pairs_jsonl") {
        let set = TrainingSet::read_jsonl(&data[..]).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(set.to_jsonl(), data);
    }
    for (name, data) in seeds("id_map") {
        read_id_map(&data[..]).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    for (name, data) in seeds("cassette_jsonl") {
        let c = Cassette::read_jsonl(&data[..]).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(c.to_jsonl(), data);
    }
    for (name, data) in seeds("selections") {
        read_selections(&data[..]).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    for (name, data) in seeds("scores") {
        read_scores(&data[..]).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn text_seeds() {
    for (name, data) in seeds("template_parse") {
        PromptTemplate::parse("seed", std::str::from_utf8(&data).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    for (name, data) in seeds("month_year") {
        let text = std::str::from_utf8(&data).unwrap();
        assert!(["en", "fr", "de", "ro"].iter().any(|l| MonthYear::parse(text, l).is_ok()), "{name}");
    }
    for (_, data) in seeds("normalize_answer") {
        let text = std::str::from_utf8(&data).unwrap();
        for level in TaskLevel::ALL {
            let once = normalize_answer(text, level, "fr");
            assert_eq!(normalize_answer(&once, level, "fr"), once);
        }
    }
}
