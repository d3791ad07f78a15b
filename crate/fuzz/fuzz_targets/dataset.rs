#![no_main]

use libfuzzer_sys::fuzz_target;
use tgnn::physics::Dataset;

fuzz_target!(|text: &str| {
    if let Ok(ds) = Dataset::from_csv(text) {
        let canonical = ds.to_csv();
        assert_eq!(Dataset::from_csv(&canonical).expect("canonical dataset must reparse"), ds);
    }
});
