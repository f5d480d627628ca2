//! The checkpoint decoder consumes files from disk and must never panic;
//! sound parses must round-trip value-exactly through a ParamSet.

#![no_main]

use haven_tensor::{parse_checkpoint, ParamSet, Tensor};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(entries) = parse_checkpoint(text) {
        // rebuild a matching set and load the same text into it
        let mut set = ParamSet::new();
        for (name, shape, values) in &entries {
            if name.contains(char::is_whitespace) {
                return;
            }
            set.register(name, Tensor::param(values.clone(), shape));
        }
        set.load_text(text).expect("parsed checkpoint must load");
        let rendered = set.to_text();
        let again = parse_checkpoint(&rendered).expect("rendered checkpoint must re-parse");
        for ((n0, s0, v0), (n1, s1, v1)) in entries.iter().zip(&again) {
            assert_eq!(n0, n1);
            assert_eq!(s0, s1);
            assert_eq!(v0.len(), v1.len());
            for (a, b) in v0.iter().zip(v1) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
});
