// SPDX-License-Identifier: MIT OR Apache-2.0

#![no_main]

use capattn_core::manifest::ArtifactIndex;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(idx) = ArtifactIndex::from_json_slice(data) {
        assert_eq!(ArtifactIndex::from_json_slice(&idx.to_json_bytes()).unwrap(), idx);
    }
});
