#![no_main]

use libfuzzer_sys::fuzz_target;

use holorec::superres::ShiftTable;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(table) = ShiftTable::from_csv(text) {
        assert_eq!(ShiftTable::from_csv(&table.to_csv()).expect("round trip parses"), table);
    }
});
