#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // every input yields a config or located diagnostics, never a panic
        match gcsim_cli::parse_config(text) {
            Ok(config) => {
                let _ = config.scenario_list();
            }
            Err(e) => assert!(!e.diagnostics.is_empty()),
        }
    }
});
