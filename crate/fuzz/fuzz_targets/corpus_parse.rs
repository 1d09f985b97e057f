#![no_main]

use libfuzzer_sys::fuzz_target;
use tempalign::corpus::{parse_corpus, SplitName, TaskLevel};

fuzz_target!(|data: &[u8]| {
    for level in TaskLevel::ALL {
        if let Ok(split) = parse_corpus(data, "ro", level, SplitName::Train) {
            let again = parse_corpus(&split.to_jsonl()[..], "ro", level, SplitName::Train).expect("canonical form parses");
            assert_eq!(again, split);
        }
    }
});
