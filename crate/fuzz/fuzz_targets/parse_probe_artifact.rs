// SPDX-License-Identifier: MIT OR Apache-2.0

#![no_main]

use capattn_core::probe::ProbeArtifact;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(a) = ProbeArtifact::from_json_slice(data) {
        // Accepted artifacts must be usable.
        let ranking = a.ranking(None).expect("validated ranking");
        let _ = a.ranking(Some(ranking.k() as i64 + 1));
        a.bank().expect("validated bank");
        let again = ProbeArtifact::from_json_slice(&a.to_json_bytes()).expect("round trip");
        assert_eq!(again, a);
    }
});
