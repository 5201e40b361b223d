//! Exhaustive-enumeration reference for the folding engine.
//!
//! Everything here is computed by listing every structure explicitly and
//! summing over it; nothing is shared with the dynamic programs in
//! [`crate::fold`] beyond the energy function itself. Only usable for
//! short sequences.

use num_bigint::BigUint;

use crate::error::{Error, Result};
use crate::sequence::Sequence;
use crate::structure::{d_struct, is_valid_design, Structure};
use crate::thermo::{energy, EnergyParams};

pub const MAX_ENUMERATION_LEN: usize = 18;

/// All dot-bracket strings of length `n` whose pairs enclose more than
/// `min_hairpin` bases, in lexicographic order with `.` < `(` < `)`.
pub fn enumerate_structures(n: usize, min_hairpin: usize) -> Result<Vec<Structure>> {
    if n > MAX_ENUMERATION_LEN {
        return Err(Error::TooLong {
            len: n,
            limit: MAX_ENUMERATION_LEN,
        });
    }
    fn rec(
        pos: usize,
        n: usize,
        h: usize,
        open: &mut Vec<usize>,
        partner: &mut Vec<Option<usize>>,
        out: &mut Vec<Structure>,
    ) {
        if pos == n {
            if open.is_empty() {
                out.push(Structure::from_partner(partner.clone()));
            }
            return;
        }
        if open.len() > n - pos {
            return;
        }
        rec(pos + 1, n, h, open, partner, out);

        open.push(pos);
        rec(pos + 1, n, h, open, partner, out);
        open.pop();

        if let Some(&i) = open.last() {
            if pos - i > h {
                open.pop();
                partner[i] = Some(pos);
                partner[pos] = Some(i);
                rec(pos + 1, n, h, open, partner, out);
                partner[i] = None;
                partner[pos] = None;
                open.push(i);
            }
        }
    }
    let mut out = Vec::new();
    rec(0, n, min_hairpin, &mut Vec::new(), &mut vec![None; n], &mut out);
    Ok(out)
}

/// The explicit ensemble of `x`: every structure it can form, with energy.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub members: Vec<(Structure, i64)>,
    rt_deci: f64,
}

impl Ensemble {
    pub fn new(x: &Sequence, p: &EnergyParams) -> Result<Self> {
        let mut members = Vec::new();
        for s in enumerate_structures(x.len(), p.min_hairpin)? {
            if is_valid_design(x, &s) {
                let e = energy(x, &s, p)?;
                members.push((s, e));
            }
        }
        Ok(Ensemble {
            members,
            rt_deci: p.rt_deci(),
        })
    }

    pub fn mfe_value(&self) -> i64 {
        self.members.iter().map(|m| m.1).min().unwrap_or(0)
    }

    pub fn mfe_count(&self) -> BigUint {
        let best = self.mfe_value();
        BigUint::from(self.members.iter().filter(|m| m.1 == best).count())
    }

    fn weight(&self, e: i64) -> f64 {
        (-(e as f64) / self.rt_deci).exp()
    }

    pub fn partition_function(&self) -> f64 {
        self.members.iter().map(|m| self.weight(m.1)).sum()
    }

    pub fn probabilities(&self) -> Vec<(Structure, f64)> {
        let q = self.partition_function();
        self.members
            .iter()
            .map(|(s, e)| (s.clone(), self.weight(*e) / q))
            .collect()
    }

    pub fn probability_of(&self, y: &Structure) -> f64 {
        let q = self.partition_function();
        self.members
            .iter()
            .find(|(s, _)| s == y)
            .map_or(0.0, |(_, e)| self.weight(*e) / q)
    }

    /// Dense `n × n` pair-probability matrix.
    pub fn pair_probabilities(&self, n: usize) -> Vec<f64> {
        let mut m = vec![0.0; n * n];
        for (s, prob) in self.probabilities() {
            for &(i, j) in s.pairs() {
                m[i * n + j] += prob;
                m[j * n + i] += prob;
            }
        }
        m
    }

    /// Expected `d_struct` to `y` over the ensemble, divided by length.
    pub fn ned(&self, y: &Structure) -> Result<f64> {
        let mut total = 0.0;
        for (s, prob) in self.probabilities() {
            total += prob * d_struct(y, &s)? as f64;
        }
        Ok(total / y.len() as f64)
    }
}
