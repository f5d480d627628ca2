//! Runs the checked-in fuzz corpus (plus seeded random mutations of it)
//! through the two parser entry points the fuzz targets cover, so the
//! no-panic property is exercised on every `cargo test` even without a
//! libFuzzer toolchain.

use std::fs;
use std::path::PathBuf;

use haven::harness::config::RunConfig;
use haven_tensor::parse_checkpoint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn corpus_dir(target: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target)
}

fn corpus_inputs(target: &str) -> Vec<Vec<u8>> {
    let dir = corpus_dir(target);
    let mut inputs = Vec::new();
    if let Ok(entries) = fs::read_dir(&dir) {
        for entry in entries.flatten() {
            if let Ok(bytes) = fs::read(entry.path()) {
                inputs.push(bytes);
            }
        }
    }
    assert!(
        !inputs.is_empty(),
        "no corpus seeds found under {}",
        dir.display()
    );
    inputs
}

fn mutations(seed: &[u8], rng: &mut ChaCha12Rng, count: usize) -> Vec<Vec<u8>> {
    (0..count)
        .map(|_| {
            let mut m = seed.to_vec();
            for _ in 0..rng.random_range(1..8) {
                match rng.random_range(0..4) {
                    0 if !m.is_empty() => {
                        let i = rng.random_range(0..m.len());
                        m[i] = rng.random();
                    }
                    1 => {
                        let i = rng.random_range(0..=m.len());
                        m.insert(i, rng.random());
                    }
                    2 if !m.is_empty() => {
                        let i = rng.random_range(0..m.len());
                        m.remove(i);
                    }
                    _ if !m.is_empty() => {
                        let cut = rng.random_range(0..m.len());
                        m.truncate(cut);
                    }
                    _ => {}
                }
            }
            m
        })
        .collect()
}

#[test]
fn config_parser_never_panics_on_corpus_mutations() {
    let mut rng = ChaCha12Rng::seed_from_u64(0xC0FF);
    let mut parsed_ok = 0;
    for seed in corpus_inputs("fuzz_config_parse") {
        // the pristine seeds must parse
        let text = String::from_utf8(seed.clone()).unwrap();
        if RunConfig::parse_str(&text).is_ok() {
            parsed_ok += 1;
        }
        for input in mutations(&seed, &mut rng, 400) {
            if let Ok(text) = std::str::from_utf8(&input) {
                if let Ok(cfg) = RunConfig::parse_str(text) {
                    let again = RunConfig::parse_str(&cfg.to_config_text()).unwrap();
                    assert_eq!(again.env_id, cfg.env_id);
                }
            }
        }
    }
    assert!(parsed_ok >= 4, "only {parsed_ok} corpus configs parsed");
}

#[test]
fn checkpoint_parser_never_panics_on_corpus_mutations() {
    let mut rng = ChaCha12Rng::seed_from_u64(0xBEEF);
    let mut parsed_ok = 0;
    for seed in corpus_inputs("fuzz_checkpoint_load") {
        let text = String::from_utf8(seed.clone()).unwrap();
        if parse_checkpoint(&text).is_ok() {
            parsed_ok += 1;
        }
        for input in mutations(&seed, &mut rng, 400) {
            if let Ok(text) = std::str::from_utf8(&input) {
                let _ = parse_checkpoint(text);
            }
        }
    }
    assert!(parsed_ok >= 3, "only {parsed_ok} corpus checkpoints parsed");
}
