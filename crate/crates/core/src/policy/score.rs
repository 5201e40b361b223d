use ndarray::{Array2, ArrayView1};

use super::{encode_prompt, nucleotide_token, vocab, PolicyCheckpoint};
use crate::decode::admissible_set;
use crate::error::{Error, Result};
use crate::fold::validate_design;
use crate::sequence::Sequence;
use crate::structure::Structure;

/// Which tokens each generation step may choose from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Masking {
    /// The full vocabulary; `<eos>` is scored like any other token.
    Raw,
    /// Nucleotides only, `<eos>` forced after the last position.
    Nucleotides,
    /// Nucleotides admissible under the target's pairing constraints,
    /// `<eos>` forced after the last position.
    Grammar,
}

type Allowed = [bool; vocab::SIZE];

fn allowed_at(masking: Masking, t: usize, y: &Structure, x: &Sequence) -> Option<Allowed> {
    let mut allowed = [false; vocab::SIZE];
    if t >= y.len() {
        match masking {
            Masking::Raw => return None,
            _ => {
                allowed[vocab::EOS] = true;
                return Some(allowed);
            }
        }
    }
    match masking {
        Masking::Raw => return None,
        Masking::Nucleotides => allowed[vocab::A..=vocab::U].fill(true),
        Masking::Grammar => {
            for nt in admissible_set(t, y, &x.nucleotides()[..t]).iter() {
                allowed[nucleotide_token(nt)] = true;
            }
        }
    }
    Some(allowed)
}

/// Temperature-scaled softmax restricted to `allowed` (all tokens when
/// `None`). Masked tokens get probability exactly zero.
pub fn masked_distribution(logits: ArrayView1<f64>, allowed: Option<&[bool; vocab::SIZE]>, temperature: f64) -> [f64; vocab::SIZE] {
    let ok = |i: usize| allowed.is_none_or(|a| a[i]);
    let mut max = f64::NEG_INFINITY;
    for i in 0..vocab::SIZE {
        if ok(i) {
            max = max.max(logits[i] / temperature);
        }
    }
    let mut out = [0.0; vocab::SIZE];
    let mut sum = 0.0;
    for i in 0..vocab::SIZE {
        if ok(i) {
            out[i] = (logits[i] / temperature - max).exp();
            sum += out[i];
        }
    }
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

/// `ln p(token)` under the masked, temperature-scaled softmax.
pub(crate) fn masked_log_prob(logits: ArrayView1<f64>, allowed: Option<&Allowed>, temperature: f64, token: vocab::Token) -> f64 {
    let ok = |i: usize| allowed.is_none_or(|a| a[i]);
    let mut max = f64::NEG_INFINITY;
    for i in 0..vocab::SIZE {
        if ok(i) {
            max = max.max(logits[i] / temperature);
        }
    }
    let mut sum = 0.0;
    for i in 0..vocab::SIZE {
        if ok(i) {
            sum += (logits[i] / temperature - max).exp();
        }
    }
    logits[token] / temperature - max - sum.ln()
}

fn check_inputs(x: &Sequence, y: &Structure, masking: Masking) -> Result<()> {
    match masking {
        Masking::Raw => Ok(()),
        Masking::Nucleotides if x.len() == y.len() => Ok(()),
        Masking::Nucleotides => Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        }),
        Masking::Grammar => validate_design(x, y),
    }
}

fn full_tokens(ckpt: &PolicyCheckpoint, x: &Sequence, y: &Structure) -> Result<(Vec<vocab::Token>, usize)> {
    let mut tokens = encode_prompt(y, ckpt.config())?;
    let prompt_len = tokens.len();
    tokens.extend(x.nucleotides().iter().map(|&nt| nucleotide_token(nt)));
    Ok((tokens, prompt_len))
}

/// Step targets: the nucleotides of `x`, then `<eos>`.
fn targets(x: &Sequence) -> impl Iterator<Item = vocab::Token> + '_ {
    x.nucleotides()
        .iter()
        .map(|&nt| nucleotide_token(nt))
        .chain(std::iter::once(vocab::EOS))
}

/// `ln p(x | y)` summed over every nucleotide step and the final `<eos>`.
pub fn log_prob_with(ckpt: &PolicyCheckpoint, x: &Sequence, y: &Structure, masking: Masking, temperature: f64) -> Result<f64> {
    check_inputs(x, y, masking)?;
    let (tokens, prompt_len) = full_tokens(ckpt, x, y)?;
    let logits = ckpt.forward(&tokens)?;
    let mut total = 0.0;
    for (t, target) in targets(x).enumerate() {
        let allowed = allowed_at(masking, t, y, x);
        total += masked_log_prob(logits.row(prompt_len - 1 + t), allowed.as_ref(), temperature, target);
    }
    Ok(total)
}

/// Log-likelihood of `x` given target `y`. With `constrained`, every step
/// uses the grammar-masked, renormalized distribution.
pub fn log_prob(ckpt: &PolicyCheckpoint, x: &Sequence, y: &Structure, constrained: bool) -> Result<f64> {
    let masking = if constrained { Masking::Grammar } else { Masking::Raw };
    log_prob_with(ckpt, x, y, masking, 1.0)
}

/// Add `scale · ∇ ln p(x | y)` to `grad`; returns `ln p(x | y)`.
pub fn accumulate_grad_log_prob(
    ckpt: &PolicyCheckpoint,
    x: &Sequence,
    y: &Structure,
    masking: Masking,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    check_inputs(x, y, masking)?;
    let (tokens, prompt_len) = full_tokens(ckpt, x, y)?;
    let cache = ckpt.forward_cached(&tokens)?;
    let logits = cache.logits();
    let mut dlogits = Array2::zeros(logits.dim());
    let mut total = 0.0;
    for (t, target) in targets(x).enumerate() {
        let row = prompt_len - 1 + t;
        let allowed = allowed_at(masking, t, y, x);
        total += masked_log_prob(logits.row(row), allowed.as_ref(), 1.0, target);
        let probs = masked_distribution(logits.row(row), allowed.as_ref(), 1.0);
        for (c, &pc) in probs.iter().enumerate() {
            let indicator = if c == target { 1.0 } else { 0.0 };
            dlogits[[row, c]] = scale * (indicator - pc);
        }
    }
    if scale != 0.0 {
        ckpt.backward(&cache, &dlogits, grad);
    }
    Ok(total)
}

/// `(ln p(x | y), ∇ ln p(x | y))`.
pub fn grad_log_prob(ckpt: &PolicyCheckpoint, x: &Sequence, y: &Structure, constrained: bool) -> Result<(f64, Vec<f64>)> {
    let masking = if constrained { Masking::Grammar } else { Masking::Raw };
    let mut grad = ckpt.zero_grad();
    let lp = accumulate_grad_log_prob(ckpt, x, y, masking, 1.0, &mut grad)?;
    Ok((lp, grad))
}
