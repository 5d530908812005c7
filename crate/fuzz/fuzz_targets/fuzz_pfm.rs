#![no_main]

//! PFM image decoding on arbitrary bytes.

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = exblurf::io::pfm::decode(data) {
        // Decoded images re-encode without panicking.
        let _ = exblurf::io::pfm::encode(&img);
    }
});
