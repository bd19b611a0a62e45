#![no_main]

use libfuzzer_sys::fuzz_target;

use holorec::io::Sidecar;

fuzz_target!(|data: &[u8]| {
    if let Ok(meta) = Sidecar::parse(data) {
        let text = serde_json::to_vec(&meta).expect("sidecar serializes");
        assert_eq!(Sidecar::parse(&text).expect("round trip parses"), meta);
    }
});
