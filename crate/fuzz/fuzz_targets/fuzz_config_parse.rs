//! The config parser backs `--config` and must never panic on arbitrary
//! bytes; valid parses must also re-parse from their own rendering.

#![no_main]

use haven::harness::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::parse_str(text) {
        let rendered = cfg.to_config_text();
        let again = RunConfig::parse_str(&rendered).expect("rendered config must re-parse");
        assert_eq!(again.env_id, cfg.env_id);
        assert_eq!(again.train.seed, cfg.train.seed);
        assert_eq!(again.train.k, cfg.train.k);
    }
});
