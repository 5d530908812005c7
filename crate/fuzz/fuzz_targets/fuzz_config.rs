#![no_main]

//! Command config parsing plus validation on arbitrary JSON.

use libfuzzer_sys::fuzz_target;

use exblurf::io::config::{
    BenchmarkConfig, EvalCliConfig, GenerateConfig, RenderCliConfig, TrainCliConfig,
};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = serde_json::from_str::<GenerateConfig>(text) {
        let _ = cfg.validate();
    }
    if let Ok(cfg) = serde_json::from_str::<TrainCliConfig>(text) {
        let _ = cfg.validate();
    }
    if let Ok(cfg) = serde_json::from_str::<RenderCliConfig>(text) {
        let _ = cfg.validate();
    }
    if let Ok(cfg) = serde_json::from_str::<EvalCliConfig>(text) {
        let _ = cfg.validate();
    }
    if let Ok(cfg) = serde_json::from_str::<BenchmarkConfig>(text) {
        let _ = cfg.validate();
    }
});
