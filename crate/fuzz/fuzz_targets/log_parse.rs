#![no_main]

use libfuzzer_sys::fuzz_target;
use slalom_core::log::parse;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(log) = parse(text) else { return };
    // Whatever parses must survive a write/read cycle unchanged.
    let again = parse(&log.serialize().expect("parsed logs serialize")).expect("serialized logs parse");
    assert_eq!(again.header, log.header);
    assert_eq!(again.records, log.records);
});
