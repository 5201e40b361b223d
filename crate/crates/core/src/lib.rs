//! Structure-conditioned RNA sequence design.
//!
//! The crate bundles an exact folding engine for a simplified
//! nearest-neighbor energy model, a small autoregressive policy that
//! generates sequences for a target dot-bracket structure, grammar-constrained
//! decoding that keeps every generated sequence pairable with its target,
//! supervised and group-relative policy-gradient training, and the dataset
//! and evaluation tooling around them.

pub mod dataset;
pub mod decode;
pub mod error;
pub mod fold;
pub mod harness;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod sequence;
pub mod structure;
pub mod thermo;
pub mod train;

pub use error::{Error, ErrorClass, Result};
pub use fold::{DesignEvaluation, DesignMetrics, FoldSummary, PairProbabilities};
pub use sequence::{Nucleotide, PairType, Sequence};
pub use structure::{Structure, StructureSet};
pub use thermo::EnergyParams;
