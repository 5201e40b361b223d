//! Fixtures shared by the benchmarks.

use rnaforge_core::dataset::gen_random_sequences;
use rnaforge_core::{fold, EnergyParams, Sequence, Structure};

/// A random sequence of exactly `len` nucleotides.
pub fn random_sequence(len: usize, seed: u64) -> Sequence {
    gen_random_sequences(1, len, len, seed).expect("valid length").remove(0)
}

/// The MFE structure of a random sequence, i.e. a natural design target.
pub fn random_target(len: usize, seed: u64) -> Structure {
    fold::mfe(&random_sequence(len, seed), &EnergyParams::default()).1
}
