//! Supervised maximum-likelihood training and group-relative policy
//! optimization with a thermodynamic reward.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::dataset::PairRecord;
use crate::decode::{sample_stream, PromptedPolicy};
use crate::error::{Error, Result};
use crate::fold;
use crate::policy::{accumulate_grad_log_prob, Masking, PolicyCheckpoint, HISTORY_TAIL};
use crate::rng::{derive_seed, stream};
use crate::sequence::Sequence;
use crate::structure::{Structure, StructureSet};
use crate::thermo::EnergyParams;

pub const ADVANTAGE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub r_prob: f64,
    pub r_mfe: f64,
    pub r_umfe: f64,
    pub combined: f64,
    pub failed: bool,
}

impl RewardBreakdown {
    pub const FAILED: RewardBreakdown = RewardBreakdown {
        r_prob: 0.0,
        r_mfe: 0.0,
        r_umfe: 0.0,
        combined: 0.0,
        failed: true,
    };

    pub fn from_components(r_prob: f64, is_mfe: bool, is_umfe: bool) -> Self {
        let r_mfe = f64::from(u8::from(is_mfe));
        let r_umfe = f64::from(u8::from(is_umfe));
        RewardBreakdown {
            r_prob,
            r_mfe,
            r_umfe,
            combined: 0.5 * r_prob + 0.25 * r_mfe + 0.25 * r_umfe,
            failed: false,
        }
    }
}

/// `R = 0.5·p + 0.25·[target is an MFE] + 0.25·[target is the unique MFE]`;
/// an evaluation failure yields the neutral reward 0.
pub fn compute_reward(x: &Sequence, y: &Structure, params: &EnergyParams) -> RewardBreakdown {
    match fold::design_metrics(x, y, params) {
        Ok(m) if m.probability.is_finite() => {
            RewardBreakdown::from_components(m.probability.clamp(0.0, 1.0), m.is_mfe, m.is_umfe)
        }
        _ => RewardBreakdown::FAILED,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub rewards: Vec<f64>,
    pub baseline: f64,
    /// Population standard deviation.
    pub sigma: f64,
    pub advantages: Vec<f64>,
}

impl GroupStats {
    pub fn new(rewards: Vec<f64>, eps: f64) -> Self {
        let k = rewards.len().max(1) as f64;
        let baseline = rewards.iter().sum::<f64>() / k;
        let sigma = (rewards.iter().map(|r| (r - baseline).powi(2)).sum::<f64>() / k).sqrt();
        let advantages = if sigma == 0.0 {
            vec![0.0; rewards.len()]
        } else {
            rewards.iter().map(|r| (r - baseline) / (sigma + eps)).collect()
        };
        GroupStats {
            rewards,
            baseline,
            sigma,
            advantages,
        }
    }

    pub fn mean_reward(&self) -> f64 {
        self.baseline
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Records per supervised step.
    pub batch_size: usize,
    /// Samples per group in policy optimization.
    pub group_k: usize,
    pub steps: usize,
    pub clip_norm: f64,
    pub advantage_eps: f64,
    pub seed: u64,
    /// Re-evaluate after every pass over the RL set and keep the best
    /// parameters seen.
    pub keep_best: bool,
}

impl TrainConfig {
    pub fn sl() -> Self {
        TrainConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 16,
            group_k: 8,
            steps: 1000,
            clip_norm: 1.0,
            advantage_eps: ADVANTAGE_EPS,
            seed: 0,
            keep_best: false,
        }
    }

    pub fn rl() -> Self {
        TrainConfig {
            lr: 1e-5,
            steps: 200,
            batch_size: 1,
            keep_best: true,
            ..TrainConfig::sl()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("adam_eps", self.adam_eps),
            ("clip_norm", self.clip_norm),
            ("advantage_eps", self.advantage_eps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if self.batch_size == 0 || self.steps == 0 {
            return Err(Error::InvalidConfig("batch size and steps must be positive".into()));
        }
        if self.group_k < 2 {
            return Err(Error::InvalidConfig("group size must be at least 2".into()));
        }
        Ok(())
    }
}

/// Adam with global-norm gradient clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Descend along `grad` (the gradient of the loss). Returns the
    /// pre-clipping gradient norm.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) -> f64 {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let scale = if norm > cfg.clip_norm { cfg.clip_norm / norm } else { 1.0 };
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i] * scale;
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.adam_eps);
        }
        norm
    }
}

fn push_history(ckpt: &mut PolicyCheckpoint, v: f64) {
    let h = &mut ckpt.meta.history_tail;
    h.push(v);
    if h.len() > HISTORY_TAIL {
        h.drain(..h.len() - HISTORY_TAIL);
    }
}

/// Sum of per-item gradients, added in item order so the result does not
/// depend on the thread count.
fn ordered_sum(parts: Vec<Vec<f64>>, n: usize) -> Vec<f64> {
    let mut total = vec![0.0; n];
    for g in parts {
        for (t, v) in total.iter_mut().zip(g) {
            *t += v;
        }
    }
    total
}

/// Mean negative log-likelihood of `batch` (nucleotide-masked, `<eos>`
/// forced) and its gradient.
pub fn sl_loss_and_grad(ckpt: &PolicyCheckpoint, batch: &[&PairRecord]) -> Result<(f64, Vec<f64>)> {
    let b = batch.len() as f64;
    let parts: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_iter()
        .map(|r| {
            let mut g = ckpt.zero_grad();
            let lp = accumulate_grad_log_prob(ckpt, &r.design, &r.target, Masking::Nucleotides, -1.0 / b, &mut g)?;
            Ok((lp, g))
        })
        .collect();
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(parts.len());
    for p in parts {
        let (lp, g) = p?;
        loss -= lp / b;
        grads.push(g);
    }
    Ok((loss, ordered_sum(grads, ckpt.num_params())))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlStep {
    pub step: usize,
    pub loss: f64,
}

/// Mini-batch maximum likelihood. On divergence the checkpoint keeps the
/// last finite parameters and `DivergenceDetected` is returned.
pub fn train_sl(ckpt: &mut PolicyCheckpoint, corpus: &[PairRecord], cfg: &TrainConfig, trace: &mut Vec<SlStep>) -> Result<()> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Usage("supervised corpus is empty".into()));
    }
    let mut adam = Adam::new(ckpt.num_params());
    for step in 0..cfg.steps {
        let mut rng = stream(&[cfg.seed, 0x51, step as u64]);
        let batch: Vec<&PairRecord> = (0..cfg.batch_size)
            .map(|_| &corpus[rng.random_range(0..corpus.len())])
            .collect();
        let (loss, grad) = sl_loss_and_grad(ckpt, &batch)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::DivergenceDetected { step });
        }
        let before = ckpt.params().to_vec();
        adam.step(ckpt.params_mut(), &grad, cfg);
        if !ckpt.all_finite() {
            ckpt.params_mut().copy_from_slice(&before);
            return Err(Error::DivergenceDetected { step });
        }
        ckpt.meta.sl_steps += 1;
        push_history(ckpt, loss);
        trace.push(SlStep { step, loss });
    }
    Ok(())
}

/// A frozen group of samples for one target.
#[derive(Debug, Clone)]
pub struct Group {
    /// `None` where sampling failed numerically.
    pub samples: Vec<Option<Sequence>>,
    pub rewards: Vec<RewardBreakdown>,
    pub stats: GroupStats,
}

/// Draw `k` constrained samples for `y` and score them.
pub fn sample_group(ckpt: &PolicyCheckpoint, y: &Structure, k: usize, params: &EnergyParams, seed: u64, eps: f64) -> Result<Group> {
    let prompted = PromptedPolicy::new(ckpt, y)?;
    let drawn: Vec<(Option<Sequence>, RewardBreakdown)> = (0..k)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_stream(seed, y, i as u64);
            match prompted.sample(true, 1.0, false, &mut rng) {
                Ok((x, _)) => {
                    let r = compute_reward(&x, y, params);
                    (Some(x), r)
                }
                Err(_) => (None, RewardBreakdown::FAILED),
            }
        })
        .collect();
    let (samples, rewards): (Vec<_>, Vec<_>) = drawn.into_iter().unzip();
    let stats = GroupStats::new(rewards.iter().map(|r| r.combined).collect(), eps);
    Ok(Group {
        samples,
        rewards,
        stats,
    })
}

/// `−(1/K) Σ_k Â_k · ln p(x_k | y)` under the grammar-masked distribution.
pub fn grpo_surrogate(ckpt: &PolicyCheckpoint, y: &Structure, samples: &[Option<Sequence>], advantages: &[f64]) -> Result<f64> {
    let k = samples.len() as f64;
    let mut total = 0.0;
    for (x, &a) in samples.iter().zip(advantages) {
        if let Some(x) = x {
            if a != 0.0 {
                total -= a / k * crate::policy::log_prob_with(ckpt, x, y, Masking::Grammar, 1.0)?;
            }
        }
    }
    Ok(total)
}

/// Gradient of [`grpo_surrogate`].
pub fn grpo_gradient(ckpt: &PolicyCheckpoint, y: &Structure, samples: &[Option<Sequence>], advantages: &[f64]) -> Result<Vec<f64>> {
    let k = samples.len() as f64;
    let parts: Vec<Result<Option<Vec<f64>>>> = samples
        .par_iter()
        .zip(advantages.par_iter())
        .map(|(x, &a)| match x {
            Some(x) if a != 0.0 => {
                let mut g = ckpt.zero_grad();
                accumulate_grad_log_prob(ckpt, x, y, Masking::Grammar, -a / k, &mut g)?;
                Ok(Some(g))
            }
            _ => Ok(None),
        })
        .collect();
    let mut grads = Vec::new();
    for p in parts {
        grads.extend(p?);
    }
    Ok(ordered_sum(grads, ckpt.num_params()))
}

/// One group-relative update on target `y`. A group whose advantages are
/// all zero leaves the parameters and optimizer state untouched.
pub fn grpo_step(
    ckpt: &mut PolicyCheckpoint,
    adam: &mut Adam,
    y: &Structure,
    params: &EnergyParams,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<GroupStats> {
    let group = sample_group(ckpt, y, cfg.group_k, params, seed, cfg.advantage_eps)?;
    if group.stats.advantages.iter().all(|&a| a == 0.0) {
        return Ok(group.stats);
    }
    let grad = grpo_gradient(ckpt, y, &group.samples, &group.stats.advantages)?;
    let step = ckpt.meta.rl_steps as usize;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::DivergenceDetected { step });
    }
    let before = ckpt.params().to_vec();
    adam.step(ckpt.params_mut(), &grad, cfg);
    if !ckpt.all_finite() {
        ckpt.params_mut().copy_from_slice(&before);
        return Err(Error::DivergenceDetected { step });
    }
    Ok(group.stats)
}

/// Mean group reward over `set` with `k` samples per structure.
pub fn mean_group_reward(ckpt: &PolicyCheckpoint, set: &StructureSet, k: usize, params: &EnergyParams, seed: u64) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Usage("structure set is empty".into()));
    }
    let means: Vec<Result<f64>> = set
        .items
        .par_iter()
        .map(|y| Ok(sample_group(ckpt, y, k, params, seed, ADVANTAGE_EPS)?.stats.mean_reward()))
        .collect();
    let mut total = 0.0;
    for m in means {
        total += m?;
    }
    Ok(total / set.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlStep {
    pub step: usize,
    pub structure: usize,
    pub mean_reward: f64,
}

/// Seed of the held evaluation stream used to pick the best parameters.
pub fn rl_selection_seed(seed: u64) -> u64 {
    derive_seed(&[seed, 0xe7a1])
}

/// Group-relative policy optimization over shuffled passes of `rl_set`, one
/// structure per step. With `keep_best`, the parameters with the highest
/// held-stream mean reward (initial parameters included) are kept.
pub fn train_rl(
    ckpt: &mut PolicyCheckpoint,
    rl_set: &StructureSet,
    cfg: &TrainConfig,
    params: &EnergyParams,
    trace: &mut Vec<RlStep>,
) -> Result<()> {
    cfg.validate()?;
    if rl_set.is_empty() {
        return Err(Error::Usage("RL structure set is empty".into()));
    }
    let eval_seed = rl_selection_seed(cfg.seed);
    let evaluate = |c: &PolicyCheckpoint| mean_group_reward(c, rl_set, cfg.group_k, params, eval_seed);
    let mut best = if cfg.keep_best {
        Some((evaluate(ckpt)?, ckpt.params().to_vec()))
    } else {
        None
    };
    let mut adam = Adam::new(ckpt.num_params());
    let mut order: Vec<usize> = Vec::new();
    for step in 0..cfg.steps {
        let epoch = step / rl_set.len();
        if step % rl_set.len() == 0 {
            order = (0..rl_set.len()).collect();
            order.shuffle(&mut stream(&[cfg.seed, 0x71, epoch as u64]));
        }
        let s = order[step % rl_set.len()];
        let stats = grpo_step(ckpt, &mut adam, &rl_set.items[s], params, cfg, derive_seed(&[cfg.seed, step as u64]))?;
        ckpt.meta.rl_steps += 1;
        push_history(ckpt, stats.mean_reward());
        trace.push(RlStep {
            step,
            structure: s,
            mean_reward: stats.mean_reward(),
        });
        let pass_done = (step + 1) % rl_set.len() == 0 || step + 1 == cfg.steps;
        if pass_done {
            if let Some((best_score, best_params)) = best.as_mut() {
                let score = evaluate(ckpt)?;
                if score > *best_score {
                    *best_score = score;
                    best_params.copy_from_slice(ckpt.params());
                }
            }
        }
    }
    if let Some((_, p)) = best {
        ckpt.params_mut().copy_from_slice(&p);
    }
    Ok(())
}

pub fn sl_trace_csv(trace: &[SlStep]) -> String {
    let mut out = String::from("step,loss\n");
    for t in trace {
        out.push_str(&format!("{},{}\n", t.step, t.loss));
    }
    out
}

pub fn rl_trace_csv(trace: &[RlStep]) -> String {
    let mut out = String::from("step,structure,mean_reward\n");
    for t in trace {
        out.push_str(&format!("{},{},{}\n", t.step, t.structure, t.mean_reward));
    }
    out
}
