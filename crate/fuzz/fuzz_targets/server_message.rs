#![no_main]

use libfuzzer_sys::fuzz_target;
use slalom_core::session::ServerMessage;

fuzz_target!(|data: &[u8]| {
    if let Ok(msg) = serde_json::from_slice::<ServerMessage>(data) {
        let again: ServerMessage = serde_json::from_str(&msg.to_json()).expect("encoded frames decode");
        assert_eq!(again, msg);
    }
});
