#![no_main]

use libfuzzer_sys::fuzz_target;
use tempalign::corpus::TaskLevel;
use tempalign::promptkit::normalize_answer;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        for level in TaskLevel::ALL {
            let once = normalize_answer(text, level, "fr");
            assert_eq!(normalize_answer(&once, level, "fr"), once);
        }
    }
});
