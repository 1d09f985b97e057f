#![no_main]

use libfuzzer_sys::fuzz_target;
use tempalign::corpus::MonthYear;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        for lang in ["en", "fr", "de", "ro"] {
            if let Ok(my) = MonthYear::parse(text, lang) {
                let rendered = my.render(lang).unwrap();
                assert_eq!(MonthYear::parse(&rendered, lang).unwrap(), my);
            }
        }
    }
});
