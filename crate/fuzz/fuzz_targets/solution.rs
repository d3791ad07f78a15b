#![no_main]

use libfuzzer_sys::fuzz_target;
use tgnn::fdm::ReferenceSolution;

fuzz_target!(|text: &str| {
    if let Ok(sol) = ReferenceSolution::from_text(text) {
        let canonical = sol.to_text();
        let again = ReferenceSolution::from_text(&canonical).expect("canonical solution must reparse");
        assert_eq!(again.to_text(), canonical);
    }
});
