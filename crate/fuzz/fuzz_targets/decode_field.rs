#![no_main]

use libfuzzer_sys::fuzz_target;

use holorec::io::{decode_field, encode_field};

fuzz_target!(|data: &[u8]| {
    // The format has exactly one encoding per array, so anything accepted
    // must re-encode to the same bytes.
    if let Ok(field) = decode_field(data) {
        assert_eq!(encode_field(&field), data);
    }
});
