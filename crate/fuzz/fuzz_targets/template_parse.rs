#![no_main]

use libfuzzer_sys::fuzz_target;
use tempalign::promptkit::PromptTemplate;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(t) = PromptTemplate::parse("fuzz", text) {
            let _ = t.render_exemplar("{query}", "{answer}");
            let _ = t.render_query("{question}");
        }
    }
});
