use rand::Rng;

use crate::rng::{hash_bytes, stream};
use crate::sequence::{Nucleotide, PairType, Sequence};
use crate::structure::Structure;

/// Cumulative pair distribution: GC-class 7/12, AU-class 4/12, wobble 1/12,
/// split evenly within each class.
const PAIR_CDF: [(f64, PairType); 6] = [
    (7.0 / 24.0, PairType::GC),
    (14.0 / 24.0, PairType::CG),
    (18.0 / 24.0, PairType::AU),
    (22.0 / 24.0, PairType::UA),
    (23.0 / 24.0, PairType::GU),
    (1.0, PairType::UG),
];

pub(crate) fn sample_pair(rng: &mut impl Rng) -> PairType {
    let u: f64 = rng.random();
    PAIR_CDF.iter().find(|(c, _)| u < *c).map_or(PairType::UG, |&(_, p)| p)
}

pub(crate) fn sample_unpaired(rng: &mut impl Rng) -> Nucleotide {
    let u: f64 = rng.random();
    if u < 0.9 {
        Nucleotide::A
    } else {
        [Nucleotide::C, Nucleotide::G, Nucleotide::U][(((u - 0.9) / 0.1) * 3.0).min(2.0) as usize]
    }
}

pub fn target_init_with_rng(y: &Structure, rng: &mut impl Rng) -> Sequence {
    let mut nts = vec![Nucleotide::A; y.len()];
    for i in 0..y.len() {
        match y.partner(i) {
            None => nts[i] = sample_unpaired(rng),
            Some(j) if j > i => {
                let (a, b) = sample_pair(rng).nucleotides();
                nts[i] = a;
                nts[j] = b;
            }
            Some(_) => {}
        }
    }
    Sequence::new(nts)
}

/// Heuristic baseline design: unpaired sites mostly `A`, pairs mostly G·C.
pub fn target_init_sample(y: &Structure, seed: u64) -> Sequence {
    let mut rng = stream(&[seed, hash_bytes(y.text().as_bytes()), 0x7a12]);
    target_init_with_rng(y, &mut rng)
}
