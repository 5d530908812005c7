#![no_main]

//! Checkpoint decoding validates every length before allocating; arbitrary
//! bytes must produce errors, not panics or OOM.

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = exblurf::io::checkpoint::decode(data);
});
