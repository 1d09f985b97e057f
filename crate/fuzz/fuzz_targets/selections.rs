#![no_main]

use libfuzzer_sys::fuzz_target;
use tempalign::retriever::{read_selections, write_selections};

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = read_selections(data) {
        let mut buf = Vec::new();
        write_selections(&mut buf, &records).unwrap();
        assert_eq!(read_selections(&buf[..]).unwrap().len(), records.len());
    }
});
