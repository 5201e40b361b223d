//! The structure-conditioned autoregressive policy.
//!
//! A target structure is written as a prompt,
//! `<struct> y_1 … y_n </struct> <bos>`, after which the model emits one
//! nucleotide token per position followed by `<eos>`. The network is a small
//! pre-norm decoder-only transformer with learned absolute positions, kept
//! in double precision so that its hand-written gradients can be checked
//! against finite differences.

mod baseline;
mod checkpoint;
mod model;
mod score;

pub use baseline::{target_init_sample, target_init_with_rng};
pub use checkpoint::{load_checkpoint, save_checkpoint, FORMAT_VERSION, MAGIC};
pub use model::{DecodeState, ForwardCache};
pub use score::{
    accumulate_grad_log_prob, grad_log_prob, log_prob, log_prob_with, masked_distribution, Masking,
};

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::sequence::Nucleotide;
use crate::structure::Structure;

/// Token ids. Nucleotides occupy the contiguous range 1..=4.
pub mod vocab {
    pub type Token = usize;

    pub const PAD: Token = 0;
    pub const A: Token = 1;
    pub const C: Token = 2;
    pub const G: Token = 3;
    pub const U: Token = 4;
    pub const DOT: Token = 5;
    pub const LPAREN: Token = 6;
    pub const RPAREN: Token = 7;
    pub const STRUCT_OPEN: Token = 8;
    pub const STRUCT_CLOSE: Token = 9;
    pub const BOS: Token = 10;
    pub const EOS: Token = 11;

    pub const SIZE: usize = 12;
    pub const FIRST_NUCLEOTIDE: Token = A;
}

pub fn nucleotide_token(nt: Nucleotide) -> vocab::Token {
    vocab::FIRST_NUCLEOTIDE + nt.index()
}

pub fn token_nucleotide(token: vocab::Token) -> Option<Nucleotide> {
    (vocab::A..=vocab::U)
        .contains(&token)
        .then(|| Nucleotide::from_index(token - vocab::FIRST_NUCLEOTIDE))
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_context: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            d_ff: 256,
            max_context: 1088,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return bad(format!("all dimensions must be positive: {self:?}"));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.max_context < 6 {
            return bad(format!("max_context {} is too small", self.max_context));
        }
        Ok(())
    }

    /// Longest structure whose full generation fits the context window.
    pub fn max_structure_len(&self) -> usize {
        (self.max_context - 4) / 2
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Position and shape of one named tensor in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.numel()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerOffsets {
    ln1_g: usize,
    ln1_b: usize,
    w_qkv: usize,
    b_qkv: usize,
    w_o: usize,
    b_o: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Offsets {
    tok_emb: usize,
    pos_emb: usize,
    layers: Vec<LayerOffsets>,
    lnf_g: usize,
    lnf_b: usize,
    head_w: usize,
    head_b: usize,
}

/// Tensor table ordered by name; parameters are stored in this order.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    tensors: Vec<TensorSpec>,
    total: usize,
    pub(crate) offsets: Offsets,
}

impl ParamLayout {
    pub fn new(cfg: &PolicyConfig) -> Self {
        let d = cfg.d_model;
        let f = cfg.d_ff;
        let v = vocab::SIZE;
        let mut shapes: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        shapes.insert("tok_emb".into(), vec![v, d]);
        shapes.insert("pos_emb".into(), vec![cfg.max_context, d]);
        for l in 0..cfg.n_layers {
            let p = |s: &str| format!("blocks.{l}.{s}");
            shapes.insert(p("ln1.gain"), vec![d]);
            shapes.insert(p("ln1.bias"), vec![d]);
            shapes.insert(p("attn.w_qkv"), vec![d, 3 * d]);
            shapes.insert(p("attn.b_qkv"), vec![3 * d]);
            shapes.insert(p("attn.w_out"), vec![d, d]);
            shapes.insert(p("attn.b_out"), vec![d]);
            shapes.insert(p("ln2.gain"), vec![d]);
            shapes.insert(p("ln2.bias"), vec![d]);
            shapes.insert(p("ffn.w_in"), vec![d, f]);
            shapes.insert(p("ffn.b_in"), vec![f]);
            shapes.insert(p("ffn.w_out"), vec![f, d]);
            shapes.insert(p("ffn.b_out"), vec![d]);
        }
        shapes.insert("ln_f.gain".into(), vec![d]);
        shapes.insert("ln_f.bias".into(), vec![d]);
        shapes.insert("head.w".into(), vec![d, v]);
        shapes.insert("head.b".into(), vec![v]);

        let mut tensors = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for (name, shape) in shapes {
            let numel: usize = shape.iter().product();
            tensors.push(TensorSpec { name, shape, offset });
            offset += numel;
        }
        let find = |name: &str| tensors.iter().find(|t| t.name == name).unwrap().offset;
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let o = |s: &str| find(&format!("blocks.{l}.{s}"));
                LayerOffsets {
                    ln1_g: o("ln1.gain"),
                    ln1_b: o("ln1.bias"),
                    w_qkv: o("attn.w_qkv"),
                    b_qkv: o("attn.b_qkv"),
                    w_o: o("attn.w_out"),
                    b_o: o("attn.b_out"),
                    ln2_g: o("ln2.gain"),
                    ln2_b: o("ln2.bias"),
                    w1: o("ffn.w_in"),
                    b1: o("ffn.b_in"),
                    w2: o("ffn.w_out"),
                    b2: o("ffn.b_out"),
                }
            })
            .collect();
        let offsets = Offsets {
            tok_emb: find("tok_emb"),
            pos_emb: find("pos_emb"),
            layers,
            lnf_g: find("ln_f.gain"),
            lnf_b: find("ln_f.bias"),
            head_w: find("head.w"),
            head_b: find("head.b"),
        };
        ParamLayout {
            tensors,
            total: offset,
            offsets,
        }
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Training bookkeeping carried inside a checkpoint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainMeta {
    pub sl_steps: u64,
    pub rl_steps: u64,
    /// Most recent losses (or mean rewards), oldest first.
    pub history_tail: Vec<f64>,
}

pub const HISTORY_TAIL: usize = 64;

/// All learnable state of the policy plus its configuration.
#[derive(Debug, Clone)]
pub struct PolicyCheckpoint {
    config: PolicyConfig,
    layout: ParamLayout,
    params: Vec<f64>,
    pub rng_state: Option<u64>,
    pub meta: TrainMeta,
}

impl PartialEq for PolicyCheckpoint {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.rng_state == other.rng_state
            && self.meta == other.meta
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl PolicyCheckpoint {
    /// Scaled-normal initialization (std 0.02); layer-norm gains start at 1.
    pub fn init(config: PolicyConfig, seed: u64) -> Result<Self> {
        Self::init_with_std(config, seed, 0.02)
    }

    pub fn init_with_std(config: PolicyConfig, seed: u64, std: f64) -> Result<Self> {
        let mut ckpt = Self::zeros(config)?;
        let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut rng = crate::rng::stream(&[seed, 0x1a17]);
        for t in ckpt.layout.tensors.clone() {
            let slice = &mut ckpt.params[t.range()];
            if t.name.ends_with(".gain") {
                slice.fill(1.0);
            } else if t.shape.len() == 2 {
                for v in slice.iter_mut() {
                    *v = normal.sample(&mut rng);
                }
            }
        }
        ckpt.rng_state = Some(seed);
        Ok(ckpt)
    }

    /// Every parameter zero: the next-token distribution is uniform.
    pub fn zeros(config: PolicyConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let params = vec![0.0; layout.total()];
        Ok(PolicyCheckpoint {
            config,
            layout,
            params,
            rng_state: None,
            meta: TrainMeta::default(),
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|t| &self.params[t.range()])
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    /// A zeroed buffer shaped like the parameters.
    pub fn zero_grad(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }
}

/// Prompt tokens for a target: `<struct> y </struct> <bos>`.
pub fn encode_prompt(y: &Structure, config: &PolicyConfig) -> Result<Vec<vocab::Token>> {
    let needed = 2 * y.len() + 4;
    if needed > config.max_context {
        return Err(Error::ContextOverflow {
            len: needed,
            max: config.max_context,
        });
    }
    let mut tokens = Vec::with_capacity(y.len() + 3);
    tokens.push(vocab::STRUCT_OPEN);
    tokens.extend(y.text().bytes().map(|b| match b {
        b'.' => vocab::DOT,
        b'(' => vocab::LPAREN,
        _ => vocab::RPAREN,
    }));
    tokens.push(vocab::STRUCT_CLOSE);
    tokens.push(vocab::BOS);
    Ok(tokens)
}
