//! Exact thermodynamics of a sequence under [`EnergyParams`].
//!
//! All quantities come from one family of interval recurrences over
//! half-open regions `[i, e)`:
//!
//! ```text
//! V(i,e)  structures on [i,e) with i paired to e-1
//!         = pair(i,e-1) · ( U(i+1,e-1) + stack · V(i+1,e-1) )
//! U(i,e)  structures on [i,e) with i not paired to e-1
//!         = W(i,e-1) · unpaired + Σ_{i<k} W(i,k) · V(k,e)
//! W(i,e)  = U(i,e) + V(i,e)
//! ```
//!
//! evaluated in the (min,+) semiring for MFE, with co-optimal counting for
//! |MFEs|, and in the (+,×) semiring for the partition function. Every
//! structure is derived exactly once, so counts and sums are exact.
//!
//! Boltzmann weights are rescaled by a per-nucleotide factor so that long
//! GC-rich sequences do not overflow `f64`; the log partition function is
//! reported unscaled.

use num_bigint::BigUint;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::sequence::{PairType, Sequence};
use crate::structure::{d_struct, is_valid_design, Structure};
use crate::thermo::{energy, EnergyParams};

const INF: i64 = i64::MAX / 4;

/// Base-pair and unpaired probabilities of a sequence's ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct PairProbabilities {
    n: usize,
    pair: Vec<f64>,
    unpaired: Vec<f64>,
}

impl PairProbabilities {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Symmetric: `get(i, j) == get(j, i)`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pair[i * self.n + j]
    }

    pub fn unpaired(&self, i: usize) -> f64 {
        self.unpaired[i]
    }

    pub fn unpaired_all(&self) -> &[f64] {
        &self.unpaired
    }
}

/// Everything the engine knows about one sequence's ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSummary {
    pub mfe_value: i64,
    pub mfe_structure: Structure,
    pub mfe_count: BigUint,
    /// Natural log of the partition function.
    pub ln_q: f64,
    pub probs: PairProbabilities,
}

impl FoldSummary {
    /// Partition function; `+inf` when it exceeds the `f64` range.
    pub fn q(&self) -> f64 {
        self.ln_q.exp()
    }
}

/// A target-specific evaluation of a designed sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignEvaluation {
    pub summary: FoldSummary,
    pub energy: i64,
    pub probability: f64,
    pub ned: f64,
    pub is_mfe: bool,
    pub is_umfe: bool,
}

/// The subset of a design evaluation needed for rewards (no outside pass).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMetrics {
    pub energy: i64,
    pub probability: f64,
    pub mfe_value: i64,
    pub mfe_count: BigUint,
    pub is_mfe: bool,
    pub is_umfe: bool,
}

/// Interval-table indexing over half-open regions `[i, e)`, `0 <= i <= e <= n`.
#[derive(Debug, Clone, Copy)]
struct Grid {
    n: usize,
}

impl Grid {
    #[inline]
    fn at(self, i: usize, e: usize) -> usize {
        i * (self.n + 1) + e
    }

    fn cells(self) -> usize {
        (self.n + 1) * (self.n + 1)
    }
}

struct Model<'a> {
    x: &'a [crate::sequence::Nucleotide],
    p: &'a EnergyParams,
    grid: Grid,
    /// Pair energy for `(i, j)` stored at `at(i, j + 1)`; `INF` when the pair
    /// cannot form.
    pair_energy: Vec<i64>,
}

impl<'a> Model<'a> {
    fn new(x: &'a Sequence, p: &'a EnergyParams) -> Self {
        let n = x.len();
        let grid = Grid { n };
        let nts = x.nucleotides();
        let mut pair_energy = vec![INF; grid.cells()];
        for i in 0..n {
            for j in (i + p.min_hairpin + 1)..n {
                if let Some(pt) = PairType::of(nts[i], nts[j]) {
                    pair_energy[grid.at(i, j + 1)] = p.pair_energy(pt);
                }
            }
        }
        Model {
            x: nts,
            p,
            grid,
            pair_energy,
        }
    }

    fn n(&self) -> usize {
        self.x.len()
    }

    /// Highest `k` such that `k` may pair with `e - 1`.
    fn last_partner(&self, e: usize) -> Option<usize> {
        (e - 1).checked_sub(self.p.min_hairpin + 1)
    }
}

/// Minimum-energy tables.
struct MinTables {
    v: Vec<i64>,
    u: Vec<i64>,
    w: Vec<i64>,
}

fn min_tables(m: &Model) -> MinTables {
    let g = m.grid;
    let n = m.n();
    let stack = m.p.e_stack;
    let mut v = vec![INF; g.cells()];
    let mut u = vec![0; g.cells()];
    let mut w = vec![0; g.cells()];
    for len in 1..=n {
        for i in 0..=(n - len) {
            let e = i + len;
            let at = g.at(i, e);
            let pe = m.pair_energy[at];
            if pe < INF {
                let inner = g.at(i + 1, e - 1);
                let mut best = u[inner];
                if v[inner] < INF {
                    best = best.min(v[inner] + stack);
                }
                v[at] = pe + best;
            }
            let mut best = w[g.at(i, e - 1)];
            if let Some(last) = m.last_partner(e) {
                for k in (i + 1)..=last {
                    let vk = v[g.at(k, e)];
                    if vk < INF {
                        best = best.min(w[g.at(i, k)] + vk);
                    }
                }
            }
            u[at] = best;
            w[at] = best.min(v[at]);
        }
    }
    MinTables { v, u, w }
}

/// Number of co-optimal structures per region, given the minimum tables.
fn count_tables(m: &Model, t: &MinTables) -> Vec<BigUint> {
    let g = m.grid;
    let n = m.n();
    let stack = m.p.e_stack;
    let mut vc = vec![BigUint::zero(); g.cells()];
    let mut uc = vec![BigUint::zero(); g.cells()];
    let mut wc = vec![BigUint::zero(); g.cells()];
    for i in 0..=n {
        uc[g.at(i, i)] = BigUint::one();
        wc[g.at(i, i)] = BigUint::one();
    }
    for len in 1..=n {
        for i in 0..=(n - len) {
            let e = i + len;
            let at = g.at(i, e);
            if t.v[at] < INF {
                let pe = m.pair_energy[at];
                let inner = g.at(i + 1, e - 1);
                let mut c = BigUint::zero();
                if pe + t.u[inner] == t.v[at] {
                    c += &uc[inner];
                }
                if t.v[inner] < INF && pe + t.v[inner] + stack == t.v[at] {
                    c += &vc[inner];
                }
                vc[at] = c;
            }
            let mut c = BigUint::zero();
            if t.w[g.at(i, e - 1)] == t.u[at] {
                c += &wc[g.at(i, e - 1)];
            }
            if let Some(last) = m.last_partner(e) {
                for k in (i + 1)..=last {
                    let vk = t.v[g.at(k, e)];
                    if vk < INF && t.w[g.at(i, k)] + vk == t.u[at] {
                        c += &wc[g.at(i, k)] * &vc[g.at(k, e)];
                    }
                }
            }
            let mut cw = BigUint::zero();
            if t.u[at] == t.w[at] {
                cw += &c;
            }
            if t.v[at] == t.w[at] {
                cw += &vc[at];
            }
            uc[at] = c;
            wc[at] = cw;
        }
    }
    wc
}

fn traceback(m: &Model, t: &MinTables) -> Structure {
    #[derive(Clone, Copy)]
    enum Frame {
        W(usize, usize),
        U(usize, usize),
        V(usize, usize),
    }
    let g = m.grid;
    let stack = m.p.e_stack;
    let mut partner = vec![None; m.n()];
    let mut todo = vec![Frame::W(0, m.n())];
    // Left-anchored choices: pair i with the smallest feasible partner, and
    // leave i unpaired only when no pairing attains the optimum.
    let split = |i: usize, e: usize, target: i64, exclude_last: bool| -> Option<usize> {
        let hi = if exclude_last { e - 1 } else { e };
        ((i + m.p.min_hairpin + 2)..=hi).find(|&end| {
            let v = t.v[g.at(i, end)];
            v < INF && v + t.w[g.at(end, e)] == target
        })
    };
    while let Some(frame) = todo.pop() {
        match frame {
            Frame::W(i, e) | Frame::U(i, e) if i == e => {}
            Frame::W(i, e) => match split(i, e, t.w[g.at(i, e)], false) {
                Some(end) => {
                    todo.push(Frame::V(i, end));
                    todo.push(Frame::W(end, e));
                }
                None => todo.push(Frame::W(i + 1, e)),
            },
            Frame::U(i, e) => match split(i, e, t.u[g.at(i, e)], true) {
                Some(end) => {
                    todo.push(Frame::V(i, end));
                    todo.push(Frame::W(end, e));
                }
                None => todo.push(Frame::W(i + 1, e)),
            },
            Frame::V(i, e) => {
                partner[i] = Some(e - 1);
                partner[e - 1] = Some(i);
                let at = g.at(i, e);
                let inner = g.at(i + 1, e - 1);
                let pe = m.pair_energy[at];
                if t.v[inner] < INF && pe + t.v[inner] + stack == t.v[at] {
                    todo.push(Frame::V(i + 1, e - 1));
                } else {
                    todo.push(Frame::U(i + 1, e - 1));
                }
            }
        }
    }
    Structure::from_partner(partner)
}

/// Scaled Boltzmann-weight tables.
struct SumTables {
    v: Vec<f64>,
    w: Vec<f64>,
    pair_w: Vec<f64>,
    stack_w: f64,
    unpaired_w: f64,
    /// ln of the per-nucleotide scale factor.
    ln_scale: f64,
}

impl SumTables {
    fn ln_q(&self, g: Grid) -> f64 {
        self.w[g.at(0, g.n)].ln() - g.n as f64 * self.ln_scale
    }
}

/// Inside pass. Every nucleotide carries a factor `exp(ln_scale)`;
/// `banned` removes one pair from the ensemble.
fn inside(m: &Model, ln_scale: f64, banned: Option<(usize, usize)>) -> SumTables {
    let g = m.grid;
    let n = m.n();
    let unpaired_w = ln_scale.exp();
    let rt = m.p.rt_deci();
    let mut pair_w = vec![0.0; g.cells()];
    for (idx, &pe) in m.pair_energy.iter().enumerate() {
        if pe < INF {
            pair_w[idx] = (-(pe as f64) / rt + 2.0 * ln_scale).exp();
        }
    }
    if let Some((i, j)) = banned {
        pair_w[g.at(i, j + 1)] = 0.0;
    }
    let stack_w = m.p.boltzmann(m.p.e_stack);
    let mut v = vec![0.0; g.cells()];
    let mut u = vec![0.0; g.cells()];
    let mut w = vec![0.0; g.cells()];
    for i in 0..=n {
        u[g.at(i, i)] = 1.0;
        w[g.at(i, i)] = 1.0;
    }
    for len in 1..=n {
        for i in 0..=(n - len) {
            let e = i + len;
            let at = g.at(i, e);
            let pw = pair_w[at];
            if pw != 0.0 {
                let inner = g.at(i + 1, e - 1);
                v[at] = pw * (u[inner] + stack_w * v[inner]);
            }
            let mut s = w[g.at(i, e - 1)] * unpaired_w;
            if let Some(last) = m.last_partner(e) {
                let row = g.at(i, 0);
                for k in (i + 1)..=last {
                    let vk = v[g.at(k, e)];
                    if vk != 0.0 {
                        s += w[row + k] * vk;
                    }
                }
            }
            u[at] = s;
            w[at] = s + v[at];
        }
    }
    SumTables {
        v,
        w,
        pair_w,
        stack_w,
        unpaired_w,
        ln_scale,
    }
}

/// Outside pass; returns the outside weight of every `V` cell.
fn outside(m: &Model, t: &SumTables) -> Vec<f64> {
    let g = m.grid;
    let n = m.n();
    let mut vo = vec![0.0; g.cells()];
    let mut uo = vec![0.0; g.cells()];
    let mut wo = vec![0.0; g.cells()];
    wo[g.at(0, n)] = 1.0;
    for len in (1..=n).rev() {
        for i in 0..=(n - len) {
            let e = i + len;
            let at = g.at(i, e);
            let w_out = wo[at];
            uo[at] += w_out;
            vo[at] += w_out;

            let u_out = uo[at];
            if u_out != 0.0 {
                wo[g.at(i, e - 1)] += u_out * t.unpaired_w;
                if let Some(last) = m.last_partner(e) {
                    for k in (i + 1)..=last {
                        let ke = g.at(k, e);
                        let vk = t.v[ke];
                        if vk != 0.0 {
                            let ik = g.at(i, k);
                            wo[ik] += u_out * vk;
                            vo[ke] += u_out * t.w[ik];
                        }
                    }
                }
            }

            let pw = t.pair_w[at];
            if pw != 0.0 && vo[at] != 0.0 {
                let inner = g.at(i + 1, e - 1);
                uo[inner] += vo[at] * pw;
                vo[inner] += vo[at] * pw * t.stack_w;
            }
        }
    }
    vo
}

fn check_finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::EvaluationFailed(format!("{what} is {value}")))
    }
}

/// Scale chosen so that a structure of energy `reference` has weight 1.
fn ln_scale_for(reference: i64, n: usize, p: &EnergyParams) -> f64 {
    if n == 0 {
        0.0
    } else {
        reference as f64 / p.rt_deci() / n as f64
    }
}

fn scaled_inside(m: &Model, mfe_value: i64) -> Result<SumTables> {
    let t = inside(m, ln_scale_for(mfe_value, m.n(), m.p), None);
    check_finite(t.w[m.grid.at(0, m.n())], "partition function")?;
    Ok(t)
}

/// Minimum free energy and one deterministic minimum-energy structure.
///
/// Ties are broken toward pairing the leftmost free base, with the
/// smallest feasible partner.
pub fn mfe(x: &Sequence, p: &EnergyParams) -> (i64, Structure) {
    let m = Model::new(x, p);
    let t = min_tables(&m);
    (t.w[m.grid.at(0, m.n())], traceback(&m, &t))
}

/// Number of structures attaining the minimum free energy.
pub fn count_mfe(x: &Sequence, p: &EnergyParams) -> BigUint {
    let m = Model::new(x, p);
    let t = min_tables(&m);
    let wc = count_tables(&m, &t);
    wc[m.grid.at(0, m.n())].clone()
}

/// Natural log of the partition function.
pub fn ln_partition_function(x: &Sequence, p: &EnergyParams) -> Result<f64> {
    let m = Model::new(x, p);
    let mt = min_tables(&m);
    let t = scaled_inside(&m, mt.w[m.grid.at(0, m.n())])?;
    check_finite(t.ln_q(m.grid), "ln Q")
}

/// Partition function Q(x). Overflows to an error when Q exceeds `f64`.
pub fn partition_function(x: &Sequence, p: &EnergyParams) -> Result<f64> {
    check_finite(ln_partition_function(x, p)?.exp(), "partition function")
}

fn require_design(x: &Sequence, y: &Structure) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    Ok(())
}

/// Equilibrium probability that `x` folds into `y`.
///
/// This is the hot path of design search: it runs a single inside pass
/// scaled to the target's own energy, and only computes the MFE when that
/// scaling overflows.
pub fn boltzmann_prob(x: &Sequence, y: &Structure, p: &EnergyParams) -> Result<f64> {
    require_design(x, y)?;
    let e = energy(x, y, p)?;
    let m = Model::new(x, p);
    let g = m.grid;
    let n = m.n();
    let mut t = inside(&m, ln_scale_for(e, n, p), None);
    if !t.w[g.at(0, n)].is_finite() {
        let mt = min_tables(&m);
        t = scaled_inside(&m, mt.w[g.at(0, n)])?;
    }
    let ln_q = check_finite(t.ln_q(g), "ln Q")?;
    let prob = (-(e as f64) / p.rt_deci() - ln_q).exp();
    check_finite(prob.min(1.0), "probability")
}

fn pair_probs_from(m: &Model, t: &SumTables) -> Result<PairProbabilities> {
    let g = m.grid;
    let n = m.n();
    let vo = outside(m, t);
    let q = t.w[g.at(0, n)];
    let mut pair = vec![0.0; n * n];
    let mut unpaired = vec![1.0; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let at = g.at(i, j + 1);
            if t.v[at] != 0.0 {
                let pij = check_finite(t.v[at] * vo[at] / q, "pair probability")?.clamp(0.0, 1.0);
                pair[i * n + j] = pij;
                pair[j * n + i] = pij;
            }
        }
    }
    for (i, q_i) in unpaired.iter_mut().enumerate() {
        let s: f64 = pair[i * n..(i + 1) * n].iter().sum();
        *q_i = (1.0 - s).clamp(0.0, 1.0);
    }
    Ok(PairProbabilities { n, pair, unpaired })
}

/// Base-pair probabilities by the inside-outside algorithm.
pub fn pair_probabilities(x: &Sequence, p: &EnergyParams) -> Result<PairProbabilities> {
    let m = Model::new(x, p);
    let mt = min_tables(&m);
    let t = scaled_inside(&m, mt.w[m.grid.at(0, m.n())])?;
    pair_probs_from(&m, &t)
}

/// Probability of pair `(i, j)` computed as `1 - Q_without(i,j) / Q`.
///
/// Independent of the outside pass; used to cross-check it.
pub fn pair_probability_by_exclusion(x: &Sequence, p: &EnergyParams, i: usize, j: usize) -> Result<f64> {
    let m = Model::new(x, p);
    let mt = min_tables(&m);
    let full = scaled_inside(&m, mt.w[m.grid.at(0, m.n())])?;
    let without = inside(&m, full.ln_scale, Some((i.min(j), i.max(j))));
    let g = m.grid;
    Ok(1.0 - without.w[g.at(0, m.n())] / full.w[g.at(0, m.n())])
}

/// Normalized ensemble defect of `x` against target `y`, from pair
/// probabilities.
pub fn ned_from_probs(probs: &PairProbabilities, y: &Structure) -> f64 {
    let n = y.len() as f64;
    let paired: f64 = y.pairs().iter().map(|&(i, j)| probs.get(i, j)).sum();
    let unpaired: f64 = y.unpaired().iter().map(|&i| probs.unpaired(i)).sum();
    (1.0 - (2.0 * paired + unpaired) / n).clamp(0.0, 1.0)
}

pub fn ned(x: &Sequence, y: &Structure, p: &EnergyParams) -> Result<f64> {
    require_design(x, y)?;
    energy(x, y, p)?;
    Ok(ned_from_probs(&pair_probabilities(x, p)?, y))
}

/// MFE, co-optimal count, and the target's probability; skips the outside
/// pass.
pub fn design_metrics(x: &Sequence, y: &Structure, p: &EnergyParams) -> Result<DesignMetrics> {
    require_design(x, y)?;
    let e = energy(x, y, p)?;
    let m = Model::new(x, p);
    let mt = min_tables(&m);
    let g = m.grid;
    let n = m.n();
    let mfe_value = mt.w[g.at(0, n)];
    let t = scaled_inside(&m, mfe_value)?;
    let ln_q = check_finite(t.ln_q(g), "ln Q")?;
    let probability = check_finite((-(e as f64) / p.rt_deci() - ln_q).exp(), "probability")?.min(1.0);
    let is_mfe = e == mfe_value;
    let mfe_count = count_tables(&m, &mt)[g.at(0, n)].clone();
    let is_umfe = is_mfe && mfe_count.is_one();
    Ok(DesignMetrics {
        energy: e,
        probability,
        mfe_value,
        mfe_count,
        is_mfe,
        is_umfe,
    })
}

/// Full ensemble summary of a sequence.
pub fn summarize(x: &Sequence, p: &EnergyParams) -> Result<FoldSummary> {
    let m = Model::new(x, p);
    let mt = min_tables(&m);
    let g = m.grid;
    let n = m.n();
    let mfe_value = mt.w[g.at(0, n)];
    let mfe_structure = traceback(&m, &mt);
    let mfe_count = count_tables(&m, &mt)[g.at(0, n)].clone();
    let t = scaled_inside(&m, mfe_value)?;
    let ln_q = check_finite(t.ln_q(g), "ln Q")?;
    let probs = pair_probs_from(&m, &t)?;
    Ok(FoldSummary {
        mfe_value,
        mfe_structure,
        mfe_count,
        ln_q,
        probs,
    })
}

/// Every per-design metric in one evaluation.
pub fn fold_summary(x: &Sequence, y: &Structure, p: &EnergyParams) -> Result<DesignEvaluation> {
    require_design(x, y)?;
    let e = energy(x, y, p)?;
    let summary = summarize(x, p)?;
    let probability = check_finite((-(e as f64) / p.rt_deci() - summary.ln_q).exp(), "probability")?.min(1.0);
    let ned = ned_from_probs(&summary.probs, y);
    let is_mfe = e == summary.mfe_value;
    let is_umfe = is_mfe && summary.mfe_count.is_one();
    Ok(DesignEvaluation {
        summary,
        energy: e,
        probability,
        ned,
        is_mfe,
        is_umfe,
    })
}

/// Definitional NED: expected structural distance over an explicit
/// ensemble, divided by length. `ensemble` holds `(structure, probability)`.
pub fn ned_by_expectation(y: &Structure, ensemble: &[(Structure, f64)]) -> Result<f64> {
    let mut total = 0.0;
    for (s, prob) in ensemble {
        total += prob * d_struct(y, s)? as f64;
    }
    Ok(total / y.len() as f64)
}

/// Check `x` against `y` and report which pair breaks the design.
pub fn validate_design(x: &Sequence, y: &Structure) -> Result<()> {
    if is_valid_design(x, y) {
        return Ok(());
    }
    require_design(x, y)?;
    energy(x, y, &EnergyParams::default()).map(|_| ())
}
