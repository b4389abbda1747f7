// SPDX-License-Identifier: MIT OR Apache-2.0

#![no_main]

use capattn_core::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = RunConfig::from_json_slice(data) {
        let _ = cfg.effective_k_grid();
        let again = RunConfig::from_json_slice(&cfg.to_json_bytes()).expect("round trip");
        assert_eq!(again, cfg);
    }
});
