#![allow(dead_code)]

use penhwr::dataset::prepare_samples;
use penhwr::synth::{generate_dataset, CaseSet, GeneratorConfig};
use penhwr::{LetterCase, PreprocessConfig, TensorSample};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_penhwr")
}

/// Generated and preprocessed with default settings.
pub fn prepared(writers: usize, reps: usize, cases: CaseSet, seed: u64) -> Vec<TensorSample> {
    let ds = generate_dataset(&GeneratorConfig {
        n_writers: writers,
        reps_per_letter: reps,
        cases,
        master_seed: seed,
    })
    .unwrap();
    prepare_samples(ds.samples(), &PreprocessConfig::default()).unwrap().samples
}

/// Two accepted samples of every uppercase letter from one writer.
pub fn toy_set(seed: u64) -> Vec<TensorSample> {
    let all = prepared(1, 4, CaseSet::Upper, seed);
    let mut out = Vec::new();
    for class in 0..26 {
        out.extend(all.iter().filter(|s| s.label_index == class).take(2).cloned());
    }
    assert_eq!(out.len(), 52, "toy set needs two accepted samples per letter");
    assert!(out.iter().all(|s| s.case == LetterCase::Upper));
    out
}
