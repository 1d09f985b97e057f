#![no_main]

use libfuzzer_sys::fuzz_target;
use tempalign::llmgate::Cassette;

fuzz_target!(|data: &[u8]| {
    if let Ok(cassette) = Cassette::read_jsonl(data) {
        let again = Cassette::read_jsonl(&cassette.to_jsonl()[..]).expect("written cassette reads back");
        assert_eq!(again.len(), cassette.len());
    }
});
