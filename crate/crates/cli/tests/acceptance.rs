//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Pass criterion ids (e.g. `A1 A7`) as
//! arguments to run a subset.

// `ensure!` negates its condition so that a NaN fails it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Display;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::Instant;

use rnaforge_core::dataset::{
    build_sl_dataset, build_structure_corpus, filter_by_distance, gen_random_sequences, select_rl_subset, PairRecord,
    RLStats, AON_THRESHOLD, NSD_THRESHOLD,
};
use rnaforge_core::decode::{
    best_of_n, constrained_sample, half_decade_grid, unconstrained_sample, DecodeRequest, DesignSampler, Metric,
    PolicySampler, TargetInitSampler,
};
use rnaforge_core::fold::{self, ned_by_expectation};
use rnaforge_core::harness::{benchmark, BenchOutput};
use rnaforge_core::oracle::{enumerate_structures, Ensemble};
use rnaforge_core::policy::{grad_log_prob, log_prob, save_checkpoint, PolicyCheckpoint, PolicyConfig};
use rnaforge_core::rng::derive_seed;
use rnaforge_core::structure::{design_space_size, is_valid_design};
use rnaforge_core::train::{
    compute_reward, grpo_gradient, grpo_step, grpo_surrogate, mean_group_reward, sample_group, train_rl, train_sl,
    Adam, GroupStats, SlStep, TrainConfig, ADVANTAGE_EPS,
};
use rnaforge_core::{EnergyParams, Nucleotide, Sequence, Structure, StructureSet};

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*));
        }
    };
}

fn s(e: impl Display) -> String {
    e.to_string()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn param_sets() -> Vec<(&'static str, EnergyParams)> {
    vec![
        ("default", EnergyParams::default()),
        ("all-zero", EnergyParams::all_zero()),
        (
            "skewed",
            EnergyParams {
                e_pair: [-17, -23, -9, -14, 4, -3],
                e_stack: -12,
                min_hairpin: 3,
                rt: 0.9,
            },
        ),
        (
            "hairpin-1",
            EnergyParams {
                min_hairpin: 1,
                ..EnergyParams::default()
            },
        ),
    ]
}

/// Deterministic pick of an ensemble member.
fn pick<'a>(ens: &'a Ensemble, keys: &[u64]) -> &'a Structure {
    &ens.members[(derive_seed(keys) % ens.members.len() as u64) as usize].0
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("thread pool")
        .install(f)
}

/// Compare DP quantities with exhaustive enumeration on one sequence.
fn oracle_parity(x: &Sequence, p: &EnergyParams, pick_key: u64) -> Result<(), String> {
    let ens = Ensemble::new(x, p).map_err(s)?;
    let summary = fold::summarize(x, p).map_err(s)?;
    let (mfe, y_mfe) = fold::mfe(x, p);
    ensure!(mfe == ens.mfe_value(), "{x}: MFE {mfe} vs {}", ens.mfe_value());
    ensure!(summary.mfe_value == mfe, "{x}: summary MFE differs");
    let count = fold::count_mfe(x, p);
    ensure!(count == ens.mfe_count(), "{x}: co-optimal count {count} vs {}", ens.mfe_count());
    let q = fold::partition_function(x, p).map_err(s)?;
    ensure!(rel_close(q, ens.partition_function(), 1e-9), "{x}: Q {q} vs {}", ens.partition_function());
    let n = x.len();
    let dense = ens.pair_probabilities(n);
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (summary.probs.get(i, j), dense[i * n + j]);
            ensure!(rel_close(a, b, 1e-9), "{x}: P[{i},{j}] {a:e} vs {b:e}");
        }
    }
    for y in [&y_mfe, pick(&ens, &[pick_key, n as u64])] {
        let dp = fold::boltzmann_prob(x, y, p).map_err(s)?;
        let ex = ens.probability_of(y);
        ensure!(rel_close(dp, ex, 1e-9), "{x} {y}: p {dp:e} vs {ex:e}");
        let dp_ned = fold::ned(x, y, p).map_err(s)?;
        let ex_ned = ens.ned(y).map_err(s)?;
        ensure!(rel_close(dp_ned, ex_ned, 1e-9), "{x} {y}: NED {dp_ned:e} vs {ex_ned:e}");
    }
    Ok(())
}

fn a1() -> Outcome {
    let start = Instant::now();
    let mut checked = 0;
    single_threaded(|| -> Result<(), String> {
        for (k, (_, p)) in param_sets().iter().enumerate() {
            let seqs = gen_random_sequences(200, 5, 12, 100 + k as u64).map_err(s)?;
            for (i, x) in seqs.iter().enumerate() {
                oracle_parity(x, p, derive_seed(&[k as u64, i as u64]))?;
                checked += 1;
            }
        }
        Ok(())
    })?;
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "single-threaded runtime {secs:.1}s exceeds 60s");
    Ok(format!(
        "{checked} sequences x {} parameter sets agree; {secs:.1}s single-threaded",
        param_sets().len()
    ))
}

fn a2() -> Outcome {
    let p = EnergyParams::default();
    let mut worst: f64 = 0.0;
    for x in gen_random_sequences(50, 5, 12, 200).map_err(s)? {
        let mut total = 0.0;
        for y in enumerate_structures(x.len(), p.min_hairpin).map_err(s)? {
            if is_valid_design(&x, &y) {
                total += fold::boltzmann_prob(&x, &y, &p).map_err(s)?;
            }
        }
        worst = worst.max((total - 1.0).abs());
        ensure!((total - 1.0).abs() <= 1e-9, "{x}: probabilities sum to {total}");
    }
    Ok(format!("50 sequences; max |sum - 1| = {worst:.2e}"))
}

fn a3() -> Outcome {
    let p = EnergyParams::default();
    let mut worst: f64 = 0.0;
    for (i, x) in gen_random_sequences(50, 5, 12, 300).map_err(s)?.iter().enumerate() {
        let ens = Ensemble::new(x, &p).map_err(s)?;
        let y = pick(&ens, &[300, i as u64]);
        ensure!(is_valid_design(x, y), "{x} {y}: not a valid pair");
        let dp = fold::ned(x, y, &p).map_err(s)?;
        let definitional = ned_by_expectation(y, &ens.probabilities()).map_err(s)?;
        worst = worst.max((dp - definitional).abs());
        ensure!((dp - definitional).abs() <= 1e-9, "{x} {y}: NED {dp} vs {definitional}");
    }
    Ok(format!("50 pairs; max deviation {worst:.2e}"))
}

/// Random-MFE structure of exactly `len` nucleotides.
fn mfe_structure(len: usize, seed: u64, p: &EnergyParams) -> Result<Structure, String> {
    let x = &gen_random_sequences(1, len, len, seed).map_err(s)?[0];
    Ok(fold::mfe(x, p).1)
}

fn small_config(max_context: usize) -> PolicyConfig {
    PolicyConfig {
        n_layers: 1,
        n_heads: 2,
        d_model: 16,
        d_ff: 32,
        max_context,
    }
}

fn a4() -> Outcome {
    let p = EnergyParams::default();
    let model = PolicyCheckpoint::init_with_std(small_config(2 * 200 + 4), 4, 0.5).map_err(s)?;
    let mut worst: f64 = 0.0;
    let mut samples = 0;
    for i in 0..30 {
        let len = 20 + i * 180 / 29;
        let y = mfe_structure(len, 400 + i as u64, &p)?;
        let batch = constrained_sample(&model, &DecodeRequest::new(y.clone(), 1000, 41, true)).map_err(s)?;
        for (x, &lp) in batch.sequences.iter().zip(&batch.log_probs) {
            ensure!(is_valid_design(x, &y), "invalid design {x} for {y}");
            let again = log_prob(&model, x, &y, true).map_err(s)?;
            worst = worst.max((again - lp).abs());
            ensure!((again - lp).abs() <= 1e-9, "log-prob {lp} re-evaluates to {again}");
            samples += 1;
        }
    }
    let mut structures = 0;
    for n in 1..=8 {
        let all: Vec<Sequence> = (0..4usize.pow(n as u32))
            .map(|code| Sequence::new((0..n).map(|k| Nucleotide::from_index((code >> (2 * k)) & 3)).collect()))
            .collect();
        for hmin in 0..=3 {
            for y in enumerate_structures(n, hmin).map_err(s)? {
                let count = all.iter().filter(|x| is_valid_design(x, &y)).count();
                let size = design_space_size(&y);
                ensure!(size.to_string() == count.to_string(), "{y}: design space {size} vs {count} enumerated");
                structures += 1;
            }
        }
    }
    Ok(format!(
        "{samples} samples valid; max log-prob deviation {worst:.2e}; {structures} design-space sizes match"
    ))
}

/// Mean of `values` over the shortest and longest length quartiles.
fn quartile_ends(lengths: &[usize], values: &[f64]) -> (f64, f64) {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| (lengths[i], i));
    let q = order.len() / 4;
    let mean = |idx: &[usize]| idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64;
    (mean(&order[..q]), mean(&order[order.len() - q..]))
}

/// Two-sided exact binomial tail of observing `k` successes in `n` trials.
fn binomial_two_sided(k: usize, n: usize, p: f64) -> f64 {
    // count the rarer outcome so the pmf recurrence starts away from underflow
    let (k, p) = if p > 0.5 { (n - k, 1.0 - p) } else { (k, p) };
    let mut pmf = (n as f64 * (1.0 - p).ln()).exp();
    let (mut below, mut at) = (0.0, 0.0);
    for i in 0..=n {
        if i < k {
            below += pmf;
        } else {
            at = pmf;
            break;
        }
        pmf *= (n - i) as f64 / (i + 1) as f64 * p / (1.0 - p);
    }
    let lower = below + at;
    let upper = 1.0 - below;
    (2.0 * lower.min(upper)).min(1.0)
}

/// Tail mass outside ±3σ of a normal distribution.
const THREE_SIGMA_TAIL: f64 = 0.0027;

fn a5() -> Outcome {
    const N: usize = 10_000;
    let p = EnergyParams::default();
    let uniform = PolicyCheckpoint::zeros(small_config(2 * 120 + 4)).map_err(s)?;
    let mut lengths = Vec::new();
    let mut invalidity = Vec::new();
    let mut worst_z: f64 = 0.0;
    let mut exact = 0;
    // hairpin blocks with 0..12 pairs, then random-MFE structures
    let mut targets = Vec::new();
    for m in 0..12 {
        targets.push(Structure::parse(&format!("{}..", "(...).".repeat(m)), 3).map_err(s)?);
    }
    for i in 0..24 {
        targets.push(mfe_structure(8 + i * (120 - 8) / 23, 500 + i as u64, &p)?);
    }
    for y in &targets {
        let len = y.len();
        let m = y.pairs().len();
        let batch = unconstrained_sample(&uniform, &DecodeRequest::new(y.clone(), N, 51, false)).map_err(s)?;
        let observed = 1.0 - batch.validity_rate();
        let p_valid = (6.0f64 / 16.0).powi(m as i32);
        let expected = 1.0 - p_valid;
        let variance = expected * (1.0 - expected);
        if N as f64 * variance >= 9.0 {
            let sigma = (variance / N as f64).sqrt();
            let dev = (observed - expected).abs();
            worst_z = worst_z.max(dev / sigma);
            ensure!(dev <= 3.0 * sigma, "{y} (m={m}): invalidity {observed} vs {expected} (sigma {sigma:.2e})");
        } else {
            // too few expected events for the normal band; exact test at the same level
            let valid = batch.validity.iter().filter(|&&v| v).count();
            let tail = binomial_two_sided(valid, N, p_valid);
            ensure!(
                tail >= THREE_SIGMA_TAIL,
                "{y} (m={m}): {valid} valid of {N}, expected {:.3}, two-sided tail {tail:.2e}",
                N as f64 * p_valid
            );
            exact += 1;
        }
        lengths.push(len);
        invalidity.push(observed);
    }
    let (short, long) = quartile_ends(&lengths, &invalidity);
    ensure!(long >= short, "uniform policy: longest quartile {long} < shortest {short}");

    // the same trend under the supervised policy on held-out structures
    let d = desk()?;
    let (mut sl_len, mut sl_inv) = (Vec::new(), Vec::new());
    for y in &d.held {
        let batch = unconstrained_sample(&d.sl, &DecodeRequest::new(y.clone(), 100, 52, false)).map_err(s)?;
        sl_len.push(y.len());
        sl_inv.push(1.0 - batch.validity_rate());
    }
    let (sl_short, sl_long) = quartile_ends(&sl_len, &sl_inv);
    ensure!(sl_long >= sl_short, "supervised policy: longest quartile {sl_long} < shortest {sl_short}");
    Ok(format!(
        "{} structures consistent at 3 sigma ({} normal, max |z| {worst_z:.2}; {exact} exact binomial); quartile invalidity uniform {short:.3} -> {long:.3}, supervised {sl_short:.3} -> {sl_long:.3}",
        targets.len(),
        targets.len() - exact
    ))
}

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

/// Relative error of `analytic` against central differences of `f`.
fn fd_error(model: &PolicyCheckpoint, analytic: &[f64], f: impl Fn(&PolicyCheckpoint) -> f64) -> Result<f64, String> {
    let mut probe = model.clone();
    let mut numeric = vec![0.0; analytic.len()];
    for (i, num) in numeric.iter_mut().enumerate() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + FD_STEP;
        let up = f(&probe);
        probe.params_mut()[i] = orig - FD_STEP;
        let down = f(&probe);
        probe.params_mut()[i] = orig;
        *num = (up - down) / (2.0 * FD_STEP);
    }
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(&numeric));
    ensure!(scale > 1e-6, "gradient vanishes");
    Ok(norm(&diff) / scale)
}

fn a6() -> Outcome {
    let cfg = |n_layers, n_heads, d_model, d_ff| PolicyConfig {
        n_layers,
        n_heads,
        d_model,
        d_ff,
        max_context: 48,
    };
    let cases = [
        (cfg(1, 1, 4, 8), "((....))"),
        (cfg(2, 2, 8, 16), "(((...)))."),
        (cfg(1, 4, 8, 12), "..((....)).."),
        (cfg(3, 2, 6, 10), "(....)(....)"),
        (cfg(2, 1, 10, 20), ".((.....))."),
    ];
    let mut worst: f64 = 0.0;
    for (k, (config, target)) in cases.into_iter().enumerate() {
        let seed = 600 + k as u64;
        let y = Structure::parse(target, 3).map_err(s)?;
        let model = PolicyCheckpoint::init_with_std(config, seed, 0.5).map_err(s)?;
        let batch = constrained_sample(&model, &DecodeRequest::new(y.clone(), 6, seed, true)).map_err(s)?;
        let x = &batch.sequences[0];
        for constrained in [true, false] {
            let (_, grad) = grad_log_prob(&model, x, &y, constrained).map_err(s)?;
            let err = fd_error(&model, &grad, |m| log_prob(m, x, &y, constrained).unwrap())?;
            ensure!(err < FD_TOL, "log_prob {target} constrained={constrained}: relative error {err:e}");
            worst = worst.max(err);
        }
        let samples: Vec<Option<Sequence>> = batch.sequences.into_iter().map(Some).collect();
        let rewards = (0..samples.len())
            .map(|i| (derive_seed(&[seed, i as u64]) % 1000) as f64 / 1000.0)
            .collect();
        let adv = GroupStats::new(rewards, ADVANTAGE_EPS).advantages;
        let grad = grpo_gradient(&model, &y, &samples, &adv).map_err(s)?;
        let err = fd_error(&model, &grad, |m| grpo_surrogate(m, &y, &samples, &adv).unwrap())?;
        ensure!(err < FD_TOL, "GRPO surrogate {target}: relative error {err:e}");
        worst = worst.max(err);
    }
    Ok(format!("5 configurations; max relative error {worst:.2e}"))
}

/// The desk-scale pipeline shared by several criteria.
struct Desk {
    corpus: StructureSet,
    records: Vec<PairRecord>,
    held: StructureSet,
    sl: PolicyCheckpoint,
    trace: Vec<SlStep>,
    data_secs: f64,
    train_secs: f64,
}

const SL_STEPS: usize = 2000;

fn build_desk() -> Result<Desk, String> {
    let p = EnergyParams::default();
    let start = Instant::now();
    let pool = build_structure_corpus(&gen_random_sequences(400, 10, 60, 1).map_err(s)?, &p);
    let corpus = StructureSet::new(pool.items[..200].to_vec(), "random-mfe");
    let records = build_sl_dataset(&corpus, 10, 500, 3, &p).map_err(s)?;
    let data_secs = start.elapsed().as_secs_f64();
    let held = build_structure_corpus(&gen_random_sequences(200, 10, 60, 777).map_err(s)?, &p);
    let held = StructureSet::new(
        held.items.into_iter().filter(|y| !corpus.items.contains(y)).take(50).collect(),
        "held-out",
    );
    let start = Instant::now();
    let mut sl = PolicyCheckpoint::init(PolicyConfig::default(), 1).map_err(s)?;
    let mut trace = Vec::new();
    let cfg = TrainConfig {
        steps: SL_STEPS,
        ..TrainConfig::sl()
    };
    train_sl(&mut sl, &records, &cfg, &mut trace).map_err(s)?;
    Ok(Desk {
        corpus,
        records,
        held,
        sl,
        trace,
        data_secs,
        train_secs: start.elapsed().as_secs_f64(),
    })
}

fn desk() -> Result<&'static Desk, String> {
    static DESK: OnceLock<Result<Desk, String>> = OnceLock::new();
    DESK.get_or_init(build_desk).as_ref().map_err(|e| format!("desk pipeline: {e}"))
}

/// Best-of-16 runs on the held-out set, shared with the curve checks.
struct HeldBench {
    baseline: BenchOutput,
    policy: BenchOutput,
    secs: f64,
}

fn held_bench() -> Result<&'static HeldBench, String> {
    static BENCH: OnceLock<Result<HeldBench, String>> = OnceLock::new();
    BENCH
        .get_or_init(|| {
            let d = desk()?;
            let p = EnergyParams::default();
            let start = Instant::now();
            Ok(HeldBench {
                baseline: benchmark(&TargetInitSampler, &d.held, 16, Metric::Prob, 5, &p).map_err(s)?,
                policy: benchmark(&PolicySampler::new(&d.sl, true), &d.held, 16, Metric::Prob, 5, &p).map_err(s)?,
                secs: start.elapsed().as_secs_f64(),
            })
        })
        .as_ref()
        .map_err(Clone::clone)
}

fn a7() -> Outcome {
    let d = desk()?;
    ensure!(d.records.len() >= 2000, "only {} teacher pairs", d.records.len());
    let longest = d.records.iter().map(|r| r.target.len()).max().unwrap_or(0);
    ensure!(longest <= 60, "teacher pair of length {longest}");
    let cfg = d.sl.config();
    ensure!(cfg.n_layers == 2 && cfg.d_model == 64, "not the desk configuration: {cfg:?}");
    ensure!(
        d.held.len() == 50 && d.held.iter().all(|y| !d.corpus.items.contains(y)),
        "held-out set is not 50 unseen structures"
    );
    let b = held_bench()?;
    let base = b.baseline.report.aggregate.mean_p;
    let policy = b.policy.report.aggregate.mean_p;
    let secs = d.data_secs + d.train_secs + b.secs;
    let loss = |r: std::ops::Range<usize>| d.trace[r.clone()].iter().map(|t| t.loss).sum::<f64>() / r.len() as f64;
    ensure!(secs < 7200.0, "runtime {secs:.0}s exceeds 2h");
    ensure!(
        policy - base >= 0.05,
        "policy best-of-16 mean p {policy:.4} vs baseline {base:.4} (gap {:.4} < 0.05)",
        policy - base
    );
    Ok(format!(
        "{} pairs ({:.0}s), {SL_STEPS} steps ({:.0}s, loss {:.3} -> {:.3}); best-of-16 mean p {policy:.4} vs baseline {base:.4} (+{:.4})",
        d.records.len(),
        d.data_secs,
        d.train_secs,
        loss(0..50),
        loss(SL_STEPS - 50..SL_STEPS),
        policy - base
    ))
}

const RL_SUBSET_CAP: usize = 40;
const RL_EVAL_SEED: u64 = 999;

struct RlRun {
    stats: Vec<RLStats>,
    subset: StructureSet,
    before: f64,
    after: f64,
    group_rewards: Vec<f64>,
    secs: f64,
}

fn rl_run() -> Result<&'static RlRun, String> {
    static RUN: OnceLock<Result<RlRun, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let d = desk()?;
        let p = EnergyParams::default();
        let start = Instant::now();
        let cands = build_structure_corpus(&gen_random_sequences(300, 10, 60, 4242).map_err(s)?, &p);
        let cands = filter_by_distance(&cands, &d.held, 0.2).map_err(s)?;
        let (stats, kept) = select_rl_subset(&cands, &d.sl, 16, &p, 11).map_err(s)?;
        let subset = StructureSet::new(kept.items.into_iter().take(RL_SUBSET_CAP).collect(), "rl");
        let before = mean_group_reward(&d.sl, &subset, 8, &p, RL_EVAL_SEED).map_err(s)?;
        let mut rl = d.sl.clone();
        let mut trace = Vec::new();
        let cfg = TrainConfig {
            steps: 200,
            group_k: 8,
            ..TrainConfig::rl()
        };
        train_rl(&mut rl, &subset, &cfg, &p, &mut trace).map_err(s)?;
        let after = mean_group_reward(&rl, &subset, 8, &p, RL_EVAL_SEED).map_err(s)?;
        Ok(RlRun {
            stats,
            subset,
            before,
            after,
            group_rewards: trace.iter().map(|t| t.mean_reward).collect(),
            secs: start.elapsed().as_secs_f64(),
        })
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn a8() -> Outcome {
    let r = rl_run()?;
    let d = desk()?;
    let p = EnergyParams::default();
    ensure!(!r.subset.is_empty(), "selection kept no structures");
    ensure!(r.group_rewards.len() == 200, "{} structure-steps", r.group_rewards.len());
    // post hoc: re-derive every selected structure's statistics from fresh samples
    let sampler = PolicySampler::new(&d.sl, true);
    for y in &r.subset {
        let probs: Vec<f64> = sampler
            .sample_range(y, 11, 0..16)
            .map_err(s)?
            .iter()
            .map(|x| fold::boltzmann_prob(x, y, &p).unwrap_or(0.0))
            .collect();
        let st = RLStats::from_probabilities(y.clone(), &probs);
        ensure!(
            st.aon >= AON_THRESHOLD && st.nsd > NSD_THRESHOLD,
            "{y}: AoN {} NSD {} fails the selection rule",
            st.aon,
            st.nsd
        );
    }
    let gain = r.after / r.before - 1.0;
    ensure!(gain >= 0.10, "mean group reward {:.4} -> {:.4} ({:+.1}%)", r.before, r.after, 100.0 * gain);
    Ok(format!(
        "{} of {} candidates selected, {} used; mean group reward {:.4} -> {:.4} ({:+.1}%) in {:.0}s",
        r.stats.iter().filter(|st| st.kept).count(),
        r.stats.len(),
        r.subset.len(),
        r.before,
        r.after,
        100.0 * gain,
        r.secs
    ))
}

fn a9() -> Outcome {
    let p = EnergyParams::default();
    let d = desk()?;
    let mut evaluated = 0;
    let mut ones = 0;
    let mut check = |x: &Sequence, y: &Structure| -> Result<(), String> {
        let r = compute_reward(x, y, &p);
        ensure!((0.0..=1.0).contains(&r.combined), "{y} {x}: reward {}", r.combined);
        if !r.failed {
            let m = fold::design_metrics(x, y, &p).map_err(s)?;
            let perfect = m.probability == 1.0 && m.is_umfe;
            ensure!((r.combined == 1.0) == perfect, "{y} {x}: R = {} with p = {}", r.combined, m.probability);
        }
        ones += usize::from(r.combined == 1.0);
        evaluated += 1;
        Ok(())
    };
    for y in d.held.iter().take(20) {
        let group = sample_group(&d.sl, y, 8, &p, 90, ADVANTAGE_EPS).map_err(s)?;
        for x in group.samples.iter().flatten() {
            check(x, y)?;
        }
        // unconstrained draws include invalid designs
        let batch = unconstrained_sample(&d.sl, &DecodeRequest::new(y.clone(), 4, 91, false)).map_err(s)?;
        for x in &batch.sequences {
            check(x, y)?;
        }
    }
    // dot-only targets: the all-A design cannot pair at all
    let mut trivial = 0;
    for n in 1..=40 {
        let y = Structure::open_chain(n);
        let x = Sequence::new(vec![Nucleotide::A; n]);
        let r = compute_reward(&x, &y, &p);
        ensure!(r.combined == 1.0, "{y}: all-A reward {}", r.combined);
        check(&x, &y)?;
        trivial += 1;
    }
    // a target too short to fold: every sample earns 1, so no update happens
    let y = Structure::open_chain(4);
    let mut model = PolicyCheckpoint::init(small_config(16), 9).map_err(s)?;
    let before = model.params().to_vec();
    let mut adam = Adam::new(model.num_params());
    let stats = grpo_step(&mut model, &mut adam, &y, &p, &TrainConfig::rl(), 9).map_err(s)?;
    ensure!(stats.rewards.iter().all(|&r| r == 1.0), "rewards {:?}", stats.rewards);
    ensure!(stats.advantages.iter().all(|&a| a == 0.0), "advantages {:?}", stats.advantages);
    ensure!(model.params() == before.as_slice() && adam.steps_taken() == 0, "flat group changed the parameters");
    let group = sample_group(&model, &y, 8, &p, 9, ADVANTAGE_EPS).map_err(s)?;
    let grad = grpo_gradient(&model, &y, &group.samples, &group.stats.advantages).map_err(s)?;
    ensure!(grad.iter().all(|&g| g == 0.0), "flat group has a nonzero gradient");
    Ok(format!(
        "{evaluated} rewards in [0,1] ({ones} equal 1, all with p = 1 and a unique MFE); {trivial} dot-only targets score 1; flat group update is zero"
    ))
}

fn run_bench(dir: &Path, structures: &Path, ckpt: &Path, threads: &str) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rnaforge"))
        .args(["bench", "--seed", "17", "--n", "32", "--threads", threads])
        .arg("--structures")
        .arg(structures)
        .arg("--checkpoint")
        .arg(ckpt)
        .arg("--out")
        .arg(dir)
        .env_remove("RNAFORGE_THREADS")
        .output()
        .map_err(s)?;
    ensure!(
        out.status.success(),
        "bench exited with {}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

const BENCH_FILES: [&str; 3] = ["bench.tsv", "curves.csv", "summary.json"];

fn a10() -> Outcome {
    let d = desk()?;
    let tmp = tempfile::tempdir().map_err(s)?;
    let structures = tmp.path().join("structures.txt");
    let subset = StructureSet::new(d.held.items[..12].to_vec(), "held-out");
    std::fs::write(&structures, subset.to_list_string()).map_err(s)?;
    let ckpt = tmp.path().join("sl.ckpt");
    save_checkpoint(&d.sl, &ckpt).map_err(s)?;
    let runs = [("first", "1"), ("second", "1"), ("eight", "8")];
    for (name, threads) in runs {
        let dir = tmp.path().join(name);
        std::fs::create_dir(&dir).map_err(s)?;
        run_bench(&dir, &structures, &ckpt, threads)?;
    }
    let mut bytes = 0;
    for file in BENCH_FILES {
        let read = |run: &str| std::fs::read(tmp.path().join(run).join(file)).map_err(s);
        let reference = read("first")?;
        ensure!(read("second")? == reference, "{file} differs between two runs");
        ensure!(read("eight")? == reference, "{file} differs between 1 and 8 workers");
        bytes += reference.len();
    }
    let curves = std::fs::read_to_string(tmp.path().join("first/curves.csv")).map_err(s)?;
    *EMITTED_CURVES.lock().unwrap() = Some(curves);
    Ok(format!("{} ({bytes} bytes) identical across 2 runs and 1 vs 8 workers", BENCH_FILES.join(", ")))
}

static EMITTED_CURVES: std::sync::Mutex<Option<String>> = std::sync::Mutex::new(None);

/// Curves from a `curves.csv` file, keyed by structure id.
fn parse_curves(csv: &str) -> Result<Vec<Vec<(usize, f64)>>, String> {
    let mut curves: Vec<Vec<(usize, f64)>> = Vec::new();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        ensure!(f.len() == 3, "malformed curve line {line:?}");
        let id: usize = f[0].parse().map_err(s)?;
        if curves.len() <= id {
            curves.resize(id + 1, Vec::new());
        }
        curves[id].push((f[1].parse().map_err(s)?, f[2].parse().map_err(s)?));
    }
    Ok(curves)
}

fn monotone(curve: &[(usize, f64)], metric: Metric) -> bool {
    curve.windows(2).all(|w| {
        w[0].0 < w[1].0
            && if metric.higher_is_better() {
                w[1].1 >= w[0].1
            } else {
                w[1].1 <= w[0].1
            }
    })
}

fn a11() -> Outcome {
    let p = EnergyParams::default();
    let d = desk()?;
    let b = held_bench()?;
    let mut curves = 0;
    let mut outputs: Vec<(&str, &BenchOutput)> = vec![("baseline", &b.baseline), ("policy", &b.policy)];
    let sampler = PolicySampler::new(&d.sl, true);
    let subset = StructureSet::new(d.held.items[..10].to_vec(), "held-out");
    let ned = benchmark(&sampler, &subset, 100, Metric::Ned, 5, &p).map_err(s)?;
    outputs.push(("policy-ned", &ned));
    for (name, out) in &outputs {
        for (id, c) in out.curves.iter().enumerate() {
            ensure!(monotone(c, out.metric), "{name} curve {id} is not monotone: {c:?}");
            curves += 1;
        }
    }
    if let Some(csv) = EMITTED_CURVES.lock().unwrap().as_deref() {
        for (id, c) in parse_curves(csv)?.iter().enumerate() {
            ensure!(monotone(c, Metric::Prob), "emitted curve {id} is not monotone: {c:?}");
            curves += 1;
        }
    }
    // prefix property: a longer run agrees with a shorter one on every
    // shared checkpoint, and each point equals the best over that prefix
    let long_grid = half_decade_grid(100);
    for (i, y) in subset.iter().enumerate() {
        for metric in [Metric::Prob, Metric::Ned] {
            let short = best_of_n(&sampler, y, 32, metric, &p, 5, &half_decade_grid(32)).map_err(s)?;
            let long = best_of_n(&sampler, y, 100, metric, &p, 5, &long_grid).map_err(s)?;
            ensure!(monotone(&short.curve, metric) && monotone(&long.curve, metric), "structure {i}: curve not monotone");
            for &(n, v) in &short.curve {
                if let Some(&(_, w)) = long.curve.iter().find(|c| c.0 == n) {
                    ensure!(v == w, "structure {i} {metric}: N={n} gives {v} and {w}");
                }
            }
            let values: Vec<f64> = sampler
                .sample_range(y, 5, 0..100)
                .map_err(s)?
                .iter()
                .map(|x| metric.evaluate(x, y, &p).unwrap())
                .collect();
            for &(n, v) in &long.curve {
                let prefix = values[..n].iter().copied();
                let best = if metric.higher_is_better() {
                    prefix.fold(f64::NEG_INFINITY, f64::max)
                } else {
                    prefix.fold(f64::INFINITY, f64::min)
                };
                ensure!(v == best, "structure {i} {metric}: N={n} reports {v}, prefix best {best}");
            }
            curves += 2;
        }
    }
    Ok(format!("{curves} curves monotone; prefix property holds on 10 structures x 2 metrics"))
}

fn panic_message(e: Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|m| m.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("A1", "oracle parity", a1),
        ("A2", "ensemble normalization", a2),
        ("A3", "NED identity", a3),
        ("A4", "constrained decoding", a4),
        ("A5", "naive-decoding law", a5),
        ("A6", "gradient correctness", a6),
        ("A7", "SL efficacy", a7),
        ("A8", "RL efficacy", a8),
        ("A9", "reward contract", a9),
        ("A10", "determinism", a10),
        ("A11", "best-of-N monotonicity and prefix", a11),
    ];
    let selected: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (id, title, f) in criteria {
        if !selected.is_empty() && !selected.iter().any(|s| s == id) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| Err(panic_message(e)));
        let secs = start.elapsed().as_secs_f64();
        ran += 1;
        match outcome {
            Ok(detail) => println!("{id} PASS {title} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{id} FAIL {title} [{secs:.1}s]: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
