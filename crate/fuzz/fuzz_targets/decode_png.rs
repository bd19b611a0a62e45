#![no_main]

use libfuzzer_sys::fuzz_target;

use holorec::io::{decode_intensity_png, PngMapping};

fuzz_target!(|data: &[u8]| {
    let Some((&depth, png)) = data.split_first() else {
        return;
    };
    let mapping = PngMapping {
        bit_depth: if depth & 1 == 0 { 8 } else { 16 },
        scale: 1.0,
        offset: 0.0,
    };
    if let Ok(img) = decode_intensity_png(png, &mapping) {
        assert!(img.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
});
