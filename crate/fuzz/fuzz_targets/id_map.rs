#![no_main]

use libfuzzer_sys::fuzz_target;
use tempalign::pairgen::{read_id_map, write_id_map};

fuzz_target!(|data: &[u8]| {
    if let Ok(map) = read_id_map(data) {
        let mut buf = Vec::new();
        write_id_map(&mut buf, &map).unwrap();
        assert_eq!(read_id_map(&buf[..]).unwrap(), map);
    }
});
