#![no_main]

use libfuzzer_sys::fuzz_target;
use slalom_core::session::parse_client_message;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(msg) = parse_client_message(text) {
        assert_eq!(parse_client_message(&msg.to_json()), Ok(msg));
    }
});
