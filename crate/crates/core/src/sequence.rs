use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Nucleotide {
    A = 0,
    C = 1,
    G = 2,
    U = 3,
}

impl Nucleotide {
    pub const ALL: [Nucleotide; 4] = [Nucleotide::A, Nucleotide::C, Nucleotide::G, Nucleotide::U];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Nucleotide {
        Self::ALL[i]
    }

    pub fn from_char(c: char) -> Option<Nucleotide> {
        match c {
            'A' => Some(Nucleotide::A),
            'C' => Some(Nucleotide::C),
            'G' => Some(Nucleotide::G),
            'U' => Some(Nucleotide::U),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        b"ACGU"[self as usize] as char
    }

    /// Nucleotides that can close a pair opened by `self`.
    pub fn complements(self) -> &'static [Nucleotide] {
        use Nucleotide::*;
        match self {
            A => &[U],
            C => &[G],
            G => &[C, U],
            U => &[A, G],
        }
    }
}

/// The six canonical and wobble pairs, in a fixed order used for parameter
/// tables: CG, GC, AU, UA, GU, UG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PairType {
    CG,
    GC,
    AU,
    UA,
    GU,
    UG,
}

impl PairType {
    pub const ALL: [PairType; 6] = [
        PairType::CG,
        PairType::GC,
        PairType::AU,
        PairType::UA,
        PairType::GU,
        PairType::UG,
    ];

    pub fn of(five: Nucleotide, three: Nucleotide) -> Option<PairType> {
        use Nucleotide::*;
        match (five, three) {
            (C, G) => Some(PairType::CG),
            (G, C) => Some(PairType::GC),
            (A, U) => Some(PairType::AU),
            (U, A) => Some(PairType::UA),
            (G, U) => Some(PairType::GU),
            (U, G) => Some(PairType::UG),
            _ => None,
        }
    }

    pub fn nucleotides(self) -> (Nucleotide, Nucleotide) {
        use Nucleotide::*;
        match self {
            PairType::CG => (C, G),
            PairType::GC => (G, C),
            PairType::AU => (A, U),
            PairType::UA => (U, A),
            PairType::GU => (G, U),
            PairType::UG => (U, G),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            PairType::CG => "CG",
            PairType::GC => "GC",
            PairType::AU => "AU",
            PairType::UA => "UA",
            PairType::GU => "GU",
            PairType::UG => "UG",
        }
    }

    pub fn from_name(s: &str) -> Option<PairType> {
        PairType::ALL.into_iter().find(|p| p.name() == s)
    }
}

pub fn can_pair(a: Nucleotide, b: Nucleotide) -> bool {
    PairType::of(a, b).is_some()
}

/// An RNA sequence over {A, C, G, U}.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sequence(Vec<Nucleotide>);

impl Sequence {
    pub fn new(nts: Vec<Nucleotide>) -> Self {
        Sequence(nts)
    }

    pub fn parse(text: &str) -> Result<Self> {
        text.chars()
            .enumerate()
            .map(|(position, c)| {
                Nucleotide::from_char(c).ok_or(Error::IllegalNucleotide { found: c, position })
            })
            .collect::<Result<Vec<_>>>()
            .map(Sequence)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn nucleotides(&self) -> &[Nucleotide] {
        &self.0
    }

    pub fn get(&self, i: usize) -> Nucleotide {
        self.0[i]
    }

    pub fn set(&mut self, i: usize, nt: Nucleotide) {
        self.0[i] = nt;
    }
}

impl FromStr for Sequence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Sequence::parse(s)
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for nt in &self.0 {
            write!(f, "{}", nt.as_char())?;
        }
        Ok(())
    }
}
