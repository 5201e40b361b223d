//! Simplified nearest-neighbor energy model.
//!
//! A structure's free energy is the sum of one term per base pair (by pair
//! type) plus a stacking bonus for every pair `(i, j)` whose inner neighbor
//! `(i+1, j-1)` is also paired. Energies are integers in units of
//! 0.1 kcal/mol so that ties between structures are exact.

use std::path::Path;

use crate::error::{Error, Result};
use crate::sequence::{PairType, Sequence};
use crate::structure::{Structure, DEFAULT_MIN_HAIRPIN};

/// RT at 37 °C in kcal/mol.
pub const DEFAULT_RT: f64 = 0.61633;

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyParams {
    /// Per-pair energies indexed by [`PairType::index`], deci-kcal/mol.
    pub e_pair: [i64; 6],
    /// Stacking bonus, deci-kcal/mol.
    pub e_stack: i64,
    pub min_hairpin: usize,
    /// RT in kcal/mol.
    pub rt: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            e_pair: [-30, -30, -20, -20, -10, -10],
            e_stack: -10,
            min_hairpin: DEFAULT_MIN_HAIRPIN,
            rt: DEFAULT_RT,
        }
    }
}

impl EnergyParams {
    /// Every energy term zero: all structures are equally likely.
    pub fn all_zero() -> Self {
        EnergyParams {
            e_pair: [0; 6],
            e_stack: 0,
            ..Default::default()
        }
    }

    pub fn pair_energy(&self, pair: PairType) -> i64 {
        self.e_pair[pair.index()]
    }

    /// RT in the model's energy unit (deci-kcal/mol).
    pub fn rt_deci(&self) -> f64 {
        self.rt * 10.0
    }

    /// Boltzmann factor of an energy given in deci-kcal/mol.
    pub fn boltzmann(&self, energy: i64) -> f64 {
        (-(energy as f64) / self.rt_deci()).exp()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rt.is_finite() && self.rt > 0.0) {
            return Err(Error::InvalidParams(format!("rt must be positive, got {}", self.rt)));
        }
        Ok(())
    }

    /// Parse the line-oriented parameter format. Keys not present keep
    /// their default values.
    pub fn parse(text: &str) -> Result<Self> {
        let mut p = EnergyParams::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let expect = |n: usize| -> Result<()> {
                if fields.len() != n {
                    Err(Error::Parse {
                        line,
                        message: format!("expected {} fields, found {}", n, fields.len()),
                    })
                } else {
                    Ok(())
                }
            };
            let int = |s: &str| -> Result<i64> {
                s.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("expected an integer, found {s:?}"),
                })
            };
            match fields[0] {
                "pair" => {
                    expect(3)?;
                    let pair = PairType::from_name(fields[1]).ok_or_else(|| Error::MissingPairType {
                        line,
                        pair: fields[1].to_owned(),
                    })?;
                    p.e_pair[pair.index()] = int(fields[2])?;
                }
                "stack" => {
                    expect(2)?;
                    p.e_stack = int(fields[1])?;
                }
                "hmin" => {
                    expect(2)?;
                    let h = int(fields[1])?;
                    p.min_hairpin = usize::try_from(h).map_err(|_| Error::Parse {
                        line,
                        message: format!("hmin must be non-negative, found {h}"),
                    })?;
                }
                "rt" => {
                    expect(2)?;
                    p.rt = fields[1].parse().map_err(|_| Error::Parse {
                        line,
                        message: format!("expected a decimal, found {:?}", fields[1]),
                    })?;
                    if !(p.rt.is_finite() && p.rt > 0.0) {
                        return Err(Error::Parse {
                            line,
                            message: "rt must be positive".into(),
                        });
                    }
                }
                key => {
                    return Err(Error::UnknownKey {
                        line,
                        key: key.to_owned(),
                    })
                }
            }
        }
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for pair in PairType::ALL {
            out.push_str(&format!("pair {} {}\n", pair.name(), self.pair_energy(pair)));
        }
        out.push_str(&format!("stack {}\nhmin {}\nrt {}\n", self.e_stack, self.min_hairpin, self.rt));
        out
    }
}

/// Free energy of `x` folded into `y`, in deci-kcal/mol.
pub fn energy(x: &Sequence, y: &Structure, p: &EnergyParams) -> Result<i64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let mut total = 0;
    for &(i, j) in y.pairs() {
        let pair = PairType::of(x.get(i), x.get(j)).ok_or_else(|| Error::InvalidDesign {
            i,
            j,
            pair: format!("{}{}", x.get(i).as_char(), x.get(j).as_char()),
        })?;
        total += p.pair_energy(pair);
        if j > i + 2 && y.is_paired(i + 1, j - 1) {
            total += p.e_stack;
        }
    }
    Ok(total)
}
