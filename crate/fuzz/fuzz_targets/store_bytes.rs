#![no_main]

use libfuzzer_sys::fuzz_target;
use tempalign::embedstore::EmbeddingStore;

fuzz_target!(|data: &[u8]| {
    if let Ok(store) = EmbeddingStore::from_bytes(data) {
        assert_eq!(store.to_bytes(), data);
    }
});
