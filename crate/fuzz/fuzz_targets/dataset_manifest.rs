#![no_main]

use libfuzzer_sys::fuzz_target;

use holorec::dataset::parse_dataset_manifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = parse_dataset_manifest(data) {
        assert_eq!(m.fov_seeds.len(), m.n_fovs);
    }
});
