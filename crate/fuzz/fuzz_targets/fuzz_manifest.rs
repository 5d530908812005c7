#![no_main]

//! Manifest JSON parsing and structural validation must never panic on
//! arbitrary bytes.

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = exblurf::io::manifest::DatasetManifest::from_json_str(text);
    }
});
