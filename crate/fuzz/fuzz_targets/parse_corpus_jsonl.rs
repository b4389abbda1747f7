// SPDX-License-Identifier: MIT OR Apache-2.0

#![no_main]

use capattn_core::harness::{parse_corpus_jsonl, PlantedModelSpec};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    if let Ok(records) = parse_corpus_jsonl(&text) {
        let spec = PlantedModelSpec::default();
        for r in records.iter().take(16) {
            if let Ok(entry) = r.materialize(&spec) {
                entry.probe_pair().expect("validated records form inputs");
            }
        }
    }
});
