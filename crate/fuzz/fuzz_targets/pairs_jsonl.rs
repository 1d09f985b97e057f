#![no_main]

use libfuzzer_sys::fuzz_target;
use tempalign::pairgen::TrainingSet;

fuzz_target!(|data: &[u8]| {
    if let Ok(set) = TrainingSet::read_jsonl(data) {
        let again = TrainingSet::read_jsonl(&set.to_jsonl()[..]).expect("written set reads back");
        assert_eq!(again.pairs.len(), set.pairs.len());
    }
});
