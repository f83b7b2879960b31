#![no_main]

use libfuzzer_sys::fuzz_target;
use slalom_core::bots::BotSpec;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = text.parse::<BotSpec>() {
            let _ = spec.build(&slalom_core::config::Config::default());
        }
    }
});
