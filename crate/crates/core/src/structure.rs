//! Dot-bracket secondary structures, structure sets, and distances.

use std::fmt;
use std::path::Path;

use num_bigint::BigUint;

use crate::error::{Error, Result};
use crate::sequence::{can_pair, Sequence};

/// Minimum number of unpaired bases enclosed by a hairpin.
pub const DEFAULT_MIN_HAIRPIN: usize = 3;

/// Longest input accepted by [`d_edit`].
pub const MAX_EDIT_INPUT: usize = 2000;

/// A pseudoknot-free secondary structure with its pair map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Structure {
    text: String,
    partner: Vec<Option<usize>>,
    pairs: Vec<(usize, usize)>,
    unpaired: Vec<usize>,
}

impl Structure {
    /// Parse a dot-bracket string with a single stack pass.
    pub fn parse(text: &str, min_hairpin: usize) -> Result<Self> {
        if text.is_empty() {
            return Err(Error::EmptyStructure);
        }
        let n = text.len();
        let mut partner = vec![None; n];
        let mut stack = Vec::new();
        let mut pairs = Vec::new();
        for (position, c) in text.chars().enumerate() {
            match c {
                '.' => {}
                '(' => stack.push(position),
                ')' => {
                    let i = stack.pop().ok_or(Error::UnbalancedBrackets { position })?;
                    partner[i] = Some(position);
                    partner[position] = Some(i);
                    pairs.push((i, position));
                }
                found => return Err(Error::IllegalCharacter { found, position }),
            }
        }
        if let Some(&position) = stack.last() {
            return Err(Error::UnbalancedBrackets { position });
        }
        pairs.sort_unstable();
        if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| j - i <= min_hairpin) {
            return Err(Error::HairpinTooSmall {
                i,
                j,
                min_loop: min_hairpin,
            });
        }
        let unpaired = (0..n).filter(|&i| partner[i].is_none()).collect();
        Ok(Structure {
            text: text.to_owned(),
            partner,
            pairs,
            unpaired,
        })
    }

    /// Build from a partner map; `partner` must be a non-crossing involution.
    pub(crate) fn from_partner(partner: Vec<Option<usize>>) -> Self {
        let n = partner.len();
        let mut text = String::with_capacity(n);
        let mut pairs = Vec::new();
        let mut unpaired = Vec::new();
        for (i, p) in partner.iter().enumerate() {
            match *p {
                None => {
                    text.push('.');
                    unpaired.push(i);
                }
                Some(j) if j > i => {
                    text.push('(');
                    pairs.push((i, j));
                }
                Some(_) => text.push(')'),
            }
        }
        Structure {
            text,
            partner,
            pairs,
            unpaired,
        }
    }

    pub fn open_chain(n: usize) -> Self {
        Self::from_partner(vec![None; n])
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn len(&self) -> usize {
        self.partner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partner.is_empty()
    }

    /// Pairs `(i, j)` with `i < j`, sorted by `i`.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn unpaired(&self) -> &[usize] {
        &self.unpaired
    }

    pub fn partner(&self, i: usize) -> Option<usize> {
        self.partner[i]
    }

    pub fn partners(&self) -> &[Option<usize>] {
        &self.partner
    }

    pub fn is_paired(&self, i: usize, j: usize) -> bool {
        self.partner[i] == Some(j)
    }

    /// Closing bracket at `t` (its partner lies to the left).
    pub fn closes(&self, t: usize) -> Option<usize> {
        self.partner[t].filter(|&p| p < t)
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// An ordered collection of structures with a provenance label.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StructureSet {
    pub items: Vec<Structure>,
    pub source_tag: String,
}

impl StructureSet {
    pub fn new(items: Vec<Structure>, source_tag: impl Into<String>) -> Self {
        StructureSet {
            items,
            source_tag: source_tag.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Structure> {
        self.items.iter()
    }

    /// Drop later duplicates (exact text equality), keeping first occurrences.
    pub fn dedup(&mut self) {
        let mut seen = std::collections::HashSet::new();
        self.items.retain(|s| seen.insert(s.text.clone()));
    }

    /// Parse a structure list: one dot-bracket per line, `#` comments and
    /// blank lines skipped, surrounding whitespace ignored.
    pub fn parse_list(text: &str, min_hairpin: usize, source_tag: &str) -> Result<Self> {
        let mut items = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let s = Structure::parse(line, min_hairpin).map_err(|e| Error::Parse {
                line: lineno + 1,
                message: e.to_string(),
            })?;
            items.push(s);
        }
        Ok(StructureSet::new(items, source_tag))
    }

    pub fn read(path: &Path, min_hairpin: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_list(&text, min_hairpin, &path.display().to_string())
    }

    pub fn to_list_string(&self) -> String {
        let mut out = String::new();
        for s in &self.items {
            out.push_str(s.text());
            out.push('\n');
        }
        out
    }
}

impl<'a> IntoIterator for &'a StructureSet {
    type Item = &'a Structure;
    type IntoIter = std::slice::Iter<'a, Structure>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

/// Positions on which two equal-length structures disagree: a shared pair
/// accounts for two agreeing positions, a shared unpaired site for one.
pub fn d_struct(a: &Structure, b: &Structure) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let shared_pairs = a.pairs.iter().filter(|&&(i, j)| b.is_paired(i, j)).count();
    let shared_unpaired = a.unpaired.iter().filter(|&&i| b.partner[i].is_none()).count();
    Ok(a.len() - 2 * shared_pairs - shared_unpaired)
}

/// Character-level Levenshtein distance with unit costs.
pub fn d_edit(a: &str, b: &str) -> Result<usize> {
    let (a, b) = (a.as_bytes(), b.as_bytes());
    for len in [a.len(), b.len()] {
        if len > MAX_EDIT_INPUT {
            return Err(Error::InputTooLong {
                len,
                limit: MAX_EDIT_INPUT,
            });
        }
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[b.len()])
}

/// Smallest length-normalized edit distance from `y` to any member of `testset`.
pub fn d_min_norm(y: &Structure, testset: &StructureSet) -> Result<f64> {
    if testset.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let mut best = f64::INFINITY;
    for t in testset {
        let d = d_edit(y.text(), t.text())? as f64;
        best = best.min(d / y.len().min(t.len()) as f64);
    }
    Ok(best)
}

/// Membership in the design space: equal length and every target pair is
/// a canonical or wobble pair under `x`.
pub fn is_valid_design(x: &Sequence, y: &Structure) -> bool {
    x.len() == y.len()
        && y
            .pairs()
            .iter()
            .all(|&(i, j)| can_pair(x.get(i), x.get(j)))
}

/// Number of sequences in the design space: 6^pairs · 4^unpaired.
pub fn design_space_size(y: &Structure) -> BigUint {
    BigUint::from(6u32).pow(y.pairs().len() as u32) * BigUint::from(4u32).pow(y.unpaired().len() as u32)
}
