#![no_main]

use libfuzzer_sys::fuzz_target;
use tgnn::ExperimentConfig;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = ExperimentConfig::from_toml(text) {
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).expect("resolved config must reparse");
        assert_eq!(cfg, again);
    }
});
