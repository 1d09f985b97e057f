#![no_main]

use libfuzzer_sys::fuzz_target;
use tempalign::embedstore::EmbeddingStore;

fuzz_target!(|data: &[u8]| {
    if let Ok(store) = EmbeddingStore::from_jsonl(data, None) {
        let back = EmbeddingStore::from_bytes(&store.to_bytes()).expect("encoded store decodes");
        assert_eq!(back.len(), store.len());
    }
});
