#![no_main]

use libfuzzer_sys::fuzz_target;

use holorec_neural::checkpoint::{decode_params, encode_params};

fuzz_target!(|data: &[u8]| {
    if let Ok(tensors) = decode_params(data) {
        let view: Vec<(&str, _)> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let again = decode_params(&encode_params(&view)).expect("re-encoded parameters decode");
        assert_eq!(again.len(), tensors.len());
        for ((n1, t1), (n2, t2)) in tensors.iter().zip(&again) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
        }
    }
});
