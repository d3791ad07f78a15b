#![no_main]

use libfuzzer_sys::fuzz_target;
use tgnn::kle::FieldRealization;

fuzz_target!(|text: &str| {
    if let Ok(field) = FieldRealization::from_text(text) {
        let canonical = field.to_text();
        let again = FieldRealization::from_text(&canonical).expect("canonical field text must reparse");
        assert_eq!(again.to_text(), canonical);
        let b = field.basis();
        let _ = field.eval_log_k(0.5 * b.length_x, 0.5 * b.length_y);
    }
});
