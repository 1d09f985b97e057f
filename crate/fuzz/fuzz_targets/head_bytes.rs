#![no_main]

use libfuzzer_sys::fuzz_target;
use tempalign::aligner::AlignmentHead;

fuzz_target!(|data: &[u8]| {
    if let Ok(head) = AlignmentHead::from_bytes(data) {
        assert_eq!(head.to_bytes(), data);
    }
});
