//! Corpus construction: random sequences folded to their MFE structures,
//! teacher designs for supervised pairs, contamination filtering, and
//! selection of structures for reinforcement learning.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::decode::{DesignSampler, PolicySampler};
use crate::error::{Error, Result};
use crate::fold;
use crate::policy::{target_init_with_rng, PolicyCheckpoint};
use crate::rng::{derive_seed, hash_bytes, stream};
use crate::sequence::{Nucleotide, PairType, Sequence};
use crate::structure::{d_min_norm, is_valid_design, Structure, StructureSet};
use crate::thermo::EnergyParams;

/// Minimum AoN for a structure to enter the RL set.
pub const AON_THRESHOLD: f64 = 0.1;
/// NSD must strictly exceed this for a structure to enter the RL set.
pub const NSD_THRESHOLD: f64 = 0.5;
pub const DEFAULT_TEACHER_BUDGET: usize = 500;
pub const DEFAULT_DESIGNS_PER_STRUCTURE: usize = 10;
pub const DEFAULT_SELECTION_K: usize = 16;

/// A supervised training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub target: Structure,
    pub design: Sequence,
    /// `p(target | design)`.
    pub teacher_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RLStats {
    pub target: Structure,
    pub aon: f64,
    pub sd: f64,
    /// `sd / aon`; zero when `aon` is zero.
    pub nsd: f64,
    pub kept: bool,
}

impl RLStats {
    /// Statistics over the probabilities of K sampled designs.
    pub fn from_probabilities(target: Structure, probs: &[f64]) -> Self {
        let k = probs.len().max(1) as f64;
        let aon = probs.iter().sum::<f64>() / k;
        let sd = (probs.iter().map(|p| (p - aon).powi(2)).sum::<f64>() / k).sqrt();
        let nsd = if aon > 0.0 { sd / aon } else { 0.0 };
        RLStats {
            target,
            aon,
            sd,
            nsd,
            kept: aon >= AON_THRESHOLD && nsd > NSD_THRESHOLD,
        }
    }
}

/// I.i.d. uniform sequences with lengths uniform over `[len_min, len_max]`.
pub fn gen_random_sequences(count: usize, len_min: usize, len_max: usize, seed: u64) -> Result<Vec<Sequence>> {
    if len_min == 0 || len_min > len_max {
        return Err(Error::Usage(format!("invalid length range [{len_min}, {len_max}]")));
    }
    Ok((0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(&[seed, 0x5e9, i as u64]);
            let n = rng.random_range(len_min..=len_max);
            Sequence::new((0..n).map(|_| Nucleotide::from_index(rng.random_range(0..4))).collect())
        })
        .collect())
}

/// Fold every sequence to its MFE structure. Returns `(structure, witness)`
/// pairs in input order, duplicates included.
pub fn fold_to_mfe(seqs: &[Sequence], params: &EnergyParams) -> Vec<(Structure, Sequence)> {
    seqs.par_iter()
        .map(|x| (fold::mfe(x, params).1, x.clone()))
        .collect()
}

/// MFE structures of `seqs`, first occurrences only.
pub fn build_structure_corpus(seqs: &[Sequence], params: &EnergyParams) -> StructureSet {
    let mut set = StructureSet::new(
        fold_to_mfe(seqs, params).into_iter().map(|(y, _)| y).collect(),
        "random-mfe",
    );
    set.dedup();
    set
}

fn mutate(x: &mut Sequence, y: &Structure, rng: &mut impl Rng) {
    let i = rng.random_range(0..x.len());
    match y.partner(i) {
        None => {
            let old = x.get(i).index();
            let new = (old + rng.random_range(1..4)) % 4;
            x.set(i, Nucleotide::from_index(new));
        }
        Some(j) => {
            let (i, j) = (i.min(j), i.max(j));
            let old = PairType::of(x.get(i), x.get(j)).map_or(0, PairType::index);
            let new = PairType::ALL[(old + rng.random_range(1..6)) % 6];
            let (a, b) = new.nucleotides();
            x.set(i, a);
            x.set(j, b);
        }
    }
}

/// Hill climbing on `p(y | x)` from a heuristic initial design; a proposal is
/// accepted only if it strictly improves the probability.
pub fn teacher_design(y: &Structure, budget: usize, seed: u64, params: &EnergyParams) -> Result<Sequence> {
    if budget == 0 {
        return Err(Error::Usage("teacher budget must be at least 1".into()));
    }
    let mut rng = stream(&[seed, hash_bytes(y.text().as_bytes()), 0x7eac]);
    let mut x = if y.pairs().is_empty() {
        Sequence::new(vec![Nucleotide::A; y.len()])
    } else {
        target_init_with_rng(y, &mut rng)
    };
    let mut best = fold::boltzmann_prob(&x, y, params)?;
    for _ in 0..budget {
        if best >= 1.0 {
            break;
        }
        let mut cand = x.clone();
        mutate(&mut cand, y, &mut rng);
        // a numerically failed proposal is simply rejected
        if let Ok(p) = fold::boltzmann_prob(&cand, y, params) {
            if p > best {
                best = p;
                x = cand;
            }
        }
    }
    Ok(x)
}

/// `designs_per_structure` teacher runs per structure, in corpus order.
/// Runs whose design cannot be scored are dropped.
pub fn build_sl_dataset(
    corpus: &StructureSet,
    designs_per_structure: usize,
    budget: usize,
    seed: u64,
    params: &EnergyParams,
) -> Result<Vec<PairRecord>> {
    if designs_per_structure == 0 {
        return Err(Error::Usage("designs_per_structure must be at least 1".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..corpus.len())
        .flat_map(|s| (0..designs_per_structure).map(move |d| (s, d)))
        .collect();
    let records: Vec<Result<Option<PairRecord>>> = jobs
        .par_iter()
        .map(|&(s, d)| {
            let y = &corpus.items[s];
            let x = teacher_design(y, budget, derive_seed(&[seed, s as u64, d as u64]), params)?;
            Ok(match fold::boltzmann_prob(&x, y, params) {
                Ok(p) if p > 0.0 => Some(PairRecord {
                    target: y.clone(),
                    design: x,
                    teacher_score: p,
                }),
                _ => None,
            })
        })
        .collect();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        out.extend(r?);
    }
    Ok(out)
}

/// Keep candidates whose normalized edit distance to every test structure
/// exceeds `threshold`.
pub fn filter_by_distance(candidates: &StructureSet, testset: &StructureSet, threshold: f64) -> Result<StructureSet> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Usage(format!("threshold must lie in [0, 1], got {threshold}")));
    }
    if testset.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let keep: Vec<Result<bool>> = candidates
        .items
        .par_iter()
        .map(|y| Ok(d_min_norm(y, testset)? > threshold))
        .collect();
    let mut items = Vec::new();
    for (y, k) in candidates.iter().zip(keep) {
        if k? {
            items.push(y.clone());
        }
    }
    Ok(StructureSet::new(items, format!("{}|filtered", candidates.source_tag)))
}

/// Sample `k` constrained designs per candidate and keep the structures
/// with AoN ≥ 0.1 and NSD > 0.5. Failed evaluations count as probability 0.
pub fn select_rl_subset(
    candidates: &StructureSet,
    ckpt: &PolicyCheckpoint,
    k: usize,
    params: &EnergyParams,
    seed: u64,
) -> Result<(Vec<RLStats>, StructureSet)> {
    if k < 2 {
        return Err(Error::Usage("selection needs at least 2 samples per structure".into()));
    }
    let sampler = PolicySampler::new(ckpt, true);
    let stats: Vec<Result<RLStats>> = candidates
        .items
        .par_iter()
        .map(|y| {
            let seqs = sampler.sample_range(y, seed, 0..k)?;
            let probs: Vec<f64> = seqs
                .iter()
                .map(|x| fold::boltzmann_prob(x, y, params).unwrap_or(0.0))
                .collect();
            Ok(RLStats::from_probabilities(y.clone(), &probs))
        })
        .collect();
    let stats = stats.into_iter().collect::<Result<Vec<_>>>()?;
    let kept = stats.iter().filter(|s| s.kept).map(|s| s.target.clone()).collect();
    Ok((stats, StructureSet::new(kept, format!("{}|rl", candidates.source_tag))))
}

/// `structure\tsequence` lines.
pub fn pairs_to_tsv(records: &[PairRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "{}\t{}", r.target, r.design);
    }
    out
}

/// Parse `structure\tsequence` lines, scoring each design. Blank lines and
/// `#` comments are skipped.
pub fn parse_pairs_tsv(text: &str, params: &EnergyParams) -> Result<Vec<PairRecord>> {
    let mut raw = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: lineno + 1,
            message,
        };
        let (s, x) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected two tab-separated columns".into()))?;
        let y = Structure::parse(s.trim(), params.min_hairpin).map_err(|e| parse_err(e.to_string()))?;
        let x = Sequence::parse(x.trim()).map_err(|e| parse_err(e.to_string()))?;
        if !is_valid_design(&x, &y) {
            return Err(parse_err(format!("{x} is not a valid design for {y}")));
        }
        raw.push((y, x));
    }
    raw.into_par_iter()
        .map(|(target, design)| {
            let teacher_score = fold::boltzmann_prob(&design, &target, params)?;
            Ok(PairRecord {
                target,
                design,
                teacher_score,
            })
        })
        .collect()
}

pub fn read_pairs(path: &Path, params: &EnergyParams) -> Result<Vec<PairRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs_tsv(&text, params)
}

/// `structure\taon\tsd\tnsd\tkept` with a header line.
pub fn rl_stats_to_tsv(stats: &[RLStats]) -> String {
    let mut out = String::from("structure\taon\tsd\tnsd\tkept\n");
    for s in stats {
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", s.target, s.aon, s.sd, s.nsd, s.kept);
    }
    out
}
