// SPDX-License-Identifier: MIT OR Apache-2.0

//! Weight files: parse, and anything accepted must re-encode to the same
//! model.

#![no_main]

use capattn_core::model::DecoderWeights;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(w) = DecoderWeights::from_json_slice(data) {
        let again = DecoderWeights::from_json_slice(&w.to_json_bytes()).expect("re-encoded weights parse");
        assert_eq!(again, w);
    }
});
