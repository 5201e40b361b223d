//! Grammar-constrained and unconstrained sampling, and best-of-N search.
//!
//! At position `t` of a target `y`, a constrained sampler may emit any
//! nucleotide when `y_t` is `.` or `(`, and only a partner-compatible one
//! when `y_t` is `)`. After the last position only `<eos>` remains. Every
//! sample is drawn from its own random stream keyed by
//! `(seed, structure, sample index)`, so results do not depend on how the
//! work is split across threads.

use std::ops::Range;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fold;
use crate::policy::{
    self, encode_prompt, masked_distribution, nucleotide_token, token_nucleotide, vocab, DecodeState,
    PolicyCheckpoint,
};
use crate::rng::{hash_bytes, stream, StreamRng};
use crate::sequence::{Nucleotide, Sequence};
use crate::structure::{is_valid_design, Structure};
use crate::thermo::EnergyParams;

/// A subset of {A, C, G, U}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NucleotideSet(u8);

impl NucleotideSet {
    pub const ALL: NucleotideSet = NucleotideSet(0b1111);

    pub fn from_slice(nts: &[Nucleotide]) -> Self {
        NucleotideSet(nts.iter().fold(0, |m, nt| m | (1 << nt.index())))
    }

    pub fn contains(self, nt: Nucleotide) -> bool {
        self.0 & (1 << nt.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Nucleotide> {
        Nucleotide::ALL.into_iter().filter(move |&nt| self.contains(nt))
    }
}

/// Nucleotides admissible at position `t` given the already emitted prefix.
pub fn admissible_set(t: usize, y: &Structure, prefix: &[Nucleotide]) -> NucleotideSet {
    match y.closes(t) {
        Some(open) => NucleotideSet::from_slice(prefix[open].complements()),
        None => NucleotideSet::ALL,
    }
}

#[derive(Debug, Clone)]
pub struct DecodeRequest {
    pub target: Structure,
    pub n_samples: usize,
    pub temperature: f64,
    pub seed: u64,
    pub constrained: bool,
    /// Take the most likely admissible token instead of sampling.
    pub greedy: bool,
}

impl DecodeRequest {
    pub fn new(target: Structure, n_samples: usize, seed: u64, constrained: bool) -> Self {
        DecodeRequest {
            target,
            n_samples,
            temperature: 1.0,
            seed,
            constrained,
            greedy: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Usage("n_samples must be at least 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Usage(format!("temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodeBatch {
    pub sequences: Vec<Sequence>,
    /// `ln p` of each sequence under the distribution it was sampled from.
    pub log_probs: Vec<f64>,
    pub validity: Vec<bool>,
}

impl DecodeBatch {
    pub fn validity_rate(&self) -> f64 {
        self.validity.iter().filter(|&&v| v).count() as f64 / self.validity.len().max(1) as f64
    }
}

/// Random stream of sample `index` for `target`.
pub fn sample_stream(seed: u64, target: &Structure, index: u64) -> StreamRng {
    stream(&[seed, hash_bytes(target.text().as_bytes()), index])
}

fn choose(dist: &[f64; vocab::SIZE], allowed: &[bool; vocab::SIZE], greedy: bool, rng: &mut impl Rng) -> vocab::Token {
    if greedy {
        let mut best = None;
        for t in 0..vocab::SIZE {
            if allowed[t] && best.is_none_or(|b: usize| dist[t] > dist[b]) {
                best = Some(t);
            }
        }
        return best.expect("at least one admissible token");
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for t in 0..vocab::SIZE {
        if allowed[t] {
            acc += dist[t];
            last = Some(t);
            if u < acc {
                return t;
            }
        }
    }
    last.expect("at least one admissible token")
}

/// Shared prompt state for repeated sampling against one target.
pub struct PromptedPolicy<'a> {
    ckpt: &'a PolicyCheckpoint,
    target: &'a Structure,
    prefilled: DecodeState,
}

impl<'a> PromptedPolicy<'a> {
    pub fn new(ckpt: &'a PolicyCheckpoint, target: &'a Structure) -> Result<Self> {
        let prompt = encode_prompt(target, ckpt.config())?;
        Ok(PromptedPolicy {
            ckpt,
            target,
            prefilled: ckpt.start_decode(&prompt)?,
        })
    }

    /// Draw one sequence; returns it with its log-probability under the
    /// (masked, temperature-scaled) sampling distribution.
    pub fn sample(&self, constrained: bool, temperature: f64, greedy: bool, rng: &mut impl Rng) -> Result<(Sequence, f64)> {
        let n = self.target.len();
        let mut state = self.prefilled.clone();
        let mut nts: Vec<Nucleotide> = Vec::with_capacity(n);
        let mut log_prob = 0.0;
        for t in 0..n {
            let mut allowed = [false; vocab::SIZE];
            let set = if constrained {
                admissible_set(t, self.target, &nts)
            } else {
                NucleotideSet::ALL
            };
            for nt in set.iter() {
                allowed[nucleotide_token(nt)] = true;
            }
            let logits = state.logits();
            if (0..vocab::SIZE).any(|i| allowed[i] && !logits[i].is_finite()) {
                return Err(Error::AllMaskedLogitsNonFinite { step: t });
            }
            let dist = masked_distribution(logits, Some(&allowed), temperature);
            let token = choose(&dist, &allowed, greedy, rng);
            log_prob += dist[token].ln();
            nts.push(token_nucleotide(token).expect("nucleotide token"));
            if t + 1 < n {
                state.push(self.ckpt, token)?;
            }
        }
        // <eos> is the only admissible token after the last position.
        Ok((Sequence::new(nts), log_prob))
    }
}

/// Sample the given indices of a request's stream.
pub fn sample_range(ckpt: &PolicyCheckpoint, req: &DecodeRequest, indices: Range<usize>) -> Result<DecodeBatch> {
    req.validate()?;
    let prompted = PromptedPolicy::new(ckpt, &req.target)?;
    let drawn: Vec<Result<(Sequence, f64)>> = indices
        .into_par_iter()
        .map(|k| {
            let mut rng = sample_stream(req.seed, &req.target, k as u64);
            prompted.sample(req.constrained, req.temperature, req.greedy, &mut rng)
        })
        .collect();
    let mut batch = DecodeBatch::default();
    for r in drawn {
        let (x, lp) = r?;
        batch.validity.push(is_valid_design(&x, &req.target));
        batch.sequences.push(x);
        batch.log_probs.push(lp);
    }
    Ok(batch)
}

/// Grammar-constrained sampling: every output lies in the design space.
pub fn constrained_sample(ckpt: &PolicyCheckpoint, req: &DecodeRequest) -> Result<DecodeBatch> {
    if !req.constrained {
        return Err(Error::Usage("constrained_sample requires constrained = true".into()));
    }
    sample_range(ckpt, req, 0..req.n_samples)
}

/// Free sampling over nucleotides for exactly `|target|` steps.
pub fn unconstrained_sample(ckpt: &PolicyCheckpoint, req: &DecodeRequest) -> Result<DecodeBatch> {
    if req.constrained {
        return Err(Error::Usage("unconstrained_sample requires constrained = false".into()));
    }
    sample_range(ckpt, req, 0..req.n_samples)
}

/// Anything that can produce an indexed stream of candidate designs.
pub trait DesignSampler: Sync {
    fn sample_range(&self, target: &Structure, seed: u64, indices: Range<usize>) -> Result<Vec<Sequence>>;
}

/// The policy as a design sampler.
pub struct PolicySampler<'a> {
    pub ckpt: &'a PolicyCheckpoint,
    pub constrained: bool,
    pub temperature: f64,
    pub greedy: bool,
}

impl<'a> PolicySampler<'a> {
    pub fn new(ckpt: &'a PolicyCheckpoint, constrained: bool) -> Self {
        PolicySampler {
            ckpt,
            constrained,
            temperature: 1.0,
            greedy: false,
        }
    }
}

impl DesignSampler for PolicySampler<'_> {
    fn sample_range(&self, target: &Structure, seed: u64, indices: Range<usize>) -> Result<Vec<Sequence>> {
        let req = DecodeRequest {
            target: target.clone(),
            n_samples: indices.len().max(1),
            temperature: self.temperature,
            seed,
            constrained: self.constrained,
            greedy: self.greedy,
        };
        Ok(sample_range(self.ckpt, &req, indices)?.sequences)
    }
}

/// The heuristic initialization baseline as a design sampler.
pub struct TargetInitSampler;

impl DesignSampler for TargetInitSampler {
    fn sample_range(&self, target: &Structure, seed: u64, indices: Range<usize>) -> Result<Vec<Sequence>> {
        Ok(indices
            .map(|k| {
                let mut rng = sample_stream(seed, target, k as u64);
                policy::target_init_with_rng(target, &mut rng)
            })
            .collect())
    }
}

/// Quantity optimized by best-of-N selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Boltzmann probability of the target (higher is better).
    Prob,
    /// Normalized ensemble defect (lower is better).
    Ned,
    /// 1 when the target is a minimum-free-energy structure.
    Mfe,
    /// 1 when the target is the unique minimum-free-energy structure.
    Umfe,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Prob => "prob",
            Metric::Ned => "ned",
            Metric::Mfe => "mfe",
            Metric::Umfe => "umfe",
        }
    }

    pub fn parse(s: &str) -> Option<Metric> {
        [Metric::Prob, Metric::Ned, Metric::Mfe, Metric::Umfe]
            .into_iter()
            .find(|m| m.name() == s)
    }

    pub fn higher_is_better(self) -> bool {
        self != Metric::Ned
    }

    /// Value before any successful sample.
    pub fn worst(self) -> f64 {
        if self.higher_is_better() {
            0.0
        } else {
            1.0
        }
    }

    pub fn improves(self, candidate: f64, incumbent: f64) -> bool {
        if self.higher_is_better() {
            candidate > incumbent
        } else {
            candidate < incumbent
        }
    }

    pub fn evaluate(self, x: &Sequence, y: &Structure, params: &EnergyParams) -> Result<f64> {
        Ok(match self {
            Metric::Prob => fold::boltzmann_prob(x, y, params)?,
            Metric::Ned => fold::ned(x, y, params)?,
            Metric::Mfe => f64::from(u8::from(fold::design_metrics(x, y, params)?.is_mfe)),
            Metric::Umfe => f64::from(u8::from(fold::design_metrics(x, y, params)?.is_umfe)),
        })
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Checkpoints 1, 10, 100, … up to `n`, always ending at `n`.
pub fn decade_grid(n: usize) -> Vec<usize> {
    let mut grid = Vec::new();
    let mut k = 1;
    while k < n {
        grid.push(k);
        k *= 10;
    }
    grid.push(n);
    grid
}

/// Half-decade checkpoints 1, 3, 10, 32, 100, … up to `n`, ending at `n`.
pub fn half_decade_grid(n: usize) -> Vec<usize> {
    let mut grid = Vec::new();
    let mut e = 0;
    loop {
        let k = 10f64.powf(e as f64 / 2.0).round() as usize;
        if k >= n {
            break;
        }
        if grid.last() != Some(&k) {
            grid.push(k);
        }
        e += 1;
    }
    grid.push(n);
    grid
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestOfN {
    pub best: Option<Sequence>,
    pub best_value: f64,
    /// `(N, running best after N samples)` at each checkpoint.
    pub curve: Vec<(usize, f64)>,
    /// Samples whose evaluation failed (invalid design or numerical error).
    pub failures: usize,
    pub samples: usize,
}

/// Draw `n` designs from the fixed stream and track the running best.
pub fn best_of_n(
    sampler: &dyn DesignSampler,
    y: &Structure,
    n: usize,
    metric: Metric,
    params: &EnergyParams,
    seed: u64,
    checkpoints: &[usize],
) -> Result<BestOfN> {
    if n == 0 {
        return Err(Error::Usage("best-of-N requires N >= 1".into()));
    }
    let seqs = sampler.sample_range(y, seed, 0..n)?;
    let values: Vec<Option<f64>> = seqs
        .par_iter()
        .map(|x| metric.evaluate(x, y, params).ok())
        .collect();
    let mut best: Option<usize> = None;
    let mut best_value = metric.worst();
    let mut failures = 0;
    let mut curve = Vec::new();
    let mut cps = checkpoints.iter().copied().filter(|&c| c >= 1 && c <= n).peekable();
    for (k, v) in values.iter().enumerate() {
        match v {
            Some(v) if best.is_none() || metric.improves(*v, best_value) => {
                best = Some(k);
                best_value = *v;
            }
            Some(_) => {}
            None => failures += 1,
        }
        while cps.peek() == Some(&(k + 1)) {
            curve.push((k + 1, best_value));
            cps.next();
        }
    }
    Ok(BestOfN {
        best: best.map(|k| seqs[k].clone()),
        best_value,
        curve,
        failures,
        samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyConfig;

    fn st(s: &str) -> Structure {
        Structure::parse(s, 3).unwrap()
    }

    fn small() -> PolicyConfig {
        PolicyConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            max_context: 128,
        }
    }

    #[test]
    fn admissible_set_examples() {
        use Nucleotide::*;
        let y = st("(...)");
        assert_eq!(admissible_set(1, &y, &[G]), NucleotideSet::ALL);
        assert_eq!(admissible_set(0, &y, &[]), NucleotideSet::ALL);
        assert_eq!(admissible_set(4, &y, &[G, A, A, A]).iter().collect::<Vec<_>>(), vec![C, U]);
        assert_eq!(admissible_set(4, &y, &[A, A, A, A]).iter().collect::<Vec<_>>(), vec![U]);
        assert_eq!(admissible_set(4, &y, &[C, A, A, A]).iter().collect::<Vec<_>>(), vec![G]);
        assert_eq!(admissible_set(4, &y, &[U, A, A, A]).iter().collect::<Vec<_>>(), vec![A, G]);
    }

    #[test]
    fn constrained_samples_are_valid_and_reproducible() {
        let m = PolicyCheckpoint::init_with_std(small(), 1, 0.5).unwrap();
        let req = DecodeRequest::new(st("((((...))..((....))))"), 50, 7, true);
        let a = constrained_sample(&m, &req).unwrap();
        assert!(a.validity.iter().all(|&v| v));
        let b = constrained_sample(&m, &req).unwrap();
        assert_eq!(a, b);
        // partition independence: a sub-range reproduces the same samples
        let tail = sample_range(&m, &req, 20..50).unwrap();
        assert_eq!(&a.sequences[20..], &tail.sequences[..]);
        for (x, lp) in a.sequences.iter().zip(&a.log_probs) {
            let re = policy::log_prob(&m, x, &req.target, true).unwrap();
            assert!((re - lp).abs() < 1e-9);
        }
    }

    #[test]
    fn constrained_support_lies_in_design_space() {
        let m = PolicyCheckpoint::zeros(small()).unwrap();
        let y = st("(...)");
        let req = DecodeRequest::new(y.clone(), 3000, 1, true);
        let batch = constrained_sample(&m, &req).unwrap();
        let distinct: std::collections::HashSet<_> = batch.sequences.iter().cloned().collect();
        assert!(distinct.iter().all(|x| is_valid_design(x, &y)));
        assert!(distinct.len() <= 384);
        // with 3000 draws from a near-uniform law over 384 designs nearly all appear
        assert!(distinct.len() > 370, "{}", distinct.len());
    }

    #[test]
    fn greedy_decoding_is_deterministic() {
        let m = PolicyCheckpoint::init_with_std(small(), 2, 0.5).unwrap();
        let mut req = DecodeRequest::new(st("((....))"), 4, 0, true);
        req.greedy = true;
        let batch = constrained_sample(&m, &req).unwrap();
        assert!(batch.sequences.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn uniform_unconstrained_validity() {
        let m = PolicyCheckpoint::zeros(small()).unwrap();
        let req = DecodeRequest::new(st("(...)"), 10_000, 3, false);
        let rate = unconstrained_sample(&m, &req).unwrap().validity_rate();
        let sigma = (0.375f64 * 0.625 / 10_000.0).sqrt();
        assert!((rate - 0.375).abs() < 4.0 * sigma, "{rate}");
        let open = DecodeRequest::new(st("......"), 200, 3, false);
        assert_eq!(unconstrained_sample(&m, &open).unwrap().validity_rate(), 1.0);
    }

    #[test]
    fn request_validation() {
        let m = PolicyCheckpoint::zeros(small()).unwrap();
        let mut req = DecodeRequest::new(st("...."), 0, 1, true);
        assert!(constrained_sample(&m, &req).is_err());
        req.n_samples = 2;
        req.temperature = 0.0;
        assert!(constrained_sample(&m, &req).is_err());
        req.temperature = 1.0;
        assert!(unconstrained_sample(&m, &req).is_err());
    }

    #[test]
    fn grids() {
        assert_eq!(decade_grid(1), vec![1]);
        assert_eq!(decade_grid(1000), vec![1, 10, 100, 1000]);
        assert_eq!(decade_grid(50), vec![1, 10, 50]);
        assert_eq!(half_decade_grid(1000), vec![1, 3, 10, 32, 100, 316, 1000]);
        assert_eq!(half_decade_grid(16), vec![1, 3, 10, 16]);
    }

    #[test]
    fn best_of_n_prefix_and_monotone() {
        let m = PolicyCheckpoint::init_with_std(small(), 3, 0.5).unwrap();
        let y = st("((((....))))..");
        let p = EnergyParams::default();
        let sampler = PolicySampler::new(&m, true);
        let long = best_of_n(&sampler, &y, 100, Metric::Prob, &p, 5, &decade_grid(100)).unwrap();
        let short = best_of_n(&sampler, &y, 10, Metric::Prob, &p, 5, &decade_grid(10)).unwrap();
        assert_eq!(long.curve[..2], short.curve[..]);
        assert!(long.curve.windows(2).all(|w| w[0].1 <= w[1].1));
        let one = best_of_n(&sampler, &y, 1, Metric::Prob, &p, 5, &[1]).unwrap();
        let x0 = sampler.sample_range(&y, 5, 0..1).unwrap().remove(0);
        assert_eq!(one.best_value, fold::boltzmann_prob(&x0, &y, &p).unwrap());
        let ned = best_of_n(&sampler, &y, 30, Metric::Ned, &p, 5, &decade_grid(30)).unwrap();
        assert!(ned.curve.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn all_a_design_for_open_target() {
        let y = st("....");
        let all_a = Sequence::parse("AAAA").unwrap();
        assert_eq!(Metric::Prob.evaluate(&all_a, &y, &EnergyParams::default()).unwrap(), 1.0);
    }
}
