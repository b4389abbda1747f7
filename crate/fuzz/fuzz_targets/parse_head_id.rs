// SPDX-License-Identifier: MIT OR Apache-2.0

#![no_main]

use capattn_core::HeadId;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(id) = s.parse::<HeadId>() {
            assert_eq!(id.to_string().parse::<HeadId>().unwrap(), id);
        }
    }
});
