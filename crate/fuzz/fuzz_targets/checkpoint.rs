#![no_main]

use libfuzzer_sys::fuzz_target;
use tgnn::net::{predict, NetworkParams};

fuzz_target!(|text: &str| {
    if let Ok((params, iteration)) = NetworkParams::from_checkpoint(text) {
        let canonical = params.to_checkpoint(iteration);
        let (again, it) = NetworkParams::from_checkpoint(&canonical).expect("canonical checkpoint must reparse");
        assert_eq!((again, it), (params.clone(), iteration));
        let _ = predict(&params, &[[1.0, 2.0, 3.0]]);
    }
});
