use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

use super::{vocab, LayerOffsets, PolicyCheckpoint};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + (GELU_C * (z + GELU_K * z * z * z)).tanh())
}

fn gelu_grad(z: f64) -> f64 {
    let t = (GELU_C * (z + GELU_K * z * z * z)).tanh();
    0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * z * z)
}

fn mat(p: &[f64], off: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), &p[off..off + rows * cols]).expect("layout")
}

fn vect(p: &[f64], off: usize, n: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&p[off..off + n])
}

fn mat_mut(p: &mut [f64], off: usize, rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), &mut p[off..off + rows * cols]).expect("layout")
}

fn vect_mut(p: &mut [f64], off: usize, n: usize) -> ArrayViewMut1<'_, f64> {
    ArrayViewMut1::from(&mut p[off..off + n])
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, gain: ArrayView1<f64>, bias: ArrayView1<f64>) -> (Array2<f64>, LnCache) {
    let (t, d) = x.dim();
    let mut xhat = Array2::zeros((t, d));
    let mut rstd = Array1::zeros(t);
    for r in 0..t {
        let row = x.row(r);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for c in 0..d {
            xhat[[r, c]] = (row[c] - mean) * rs;
        }
    }
    let y = &xhat * &gain + bias;
    (y, LnCache { xhat, rstd })
}

/// Backward through layer norm; accumulates parameter grads, returns dx.
fn layer_norm_backward(dy: &Array2<f64>, cache: &LnCache, gain: ArrayView1<f64>, grad: &mut [f64], g_off: usize, b_off: usize) -> Array2<f64> {
    let (t, d) = dy.dim();
    {
        let mut dg = vect_mut(grad, g_off, d);
        dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    }
    {
        let mut db = vect_mut(grad, b_off, d);
        db += &dy.sum_axis(Axis(0));
    }
    let dxhat = dy * &gain;
    let mut dx = Array2::zeros((t, d));
    for r in 0..t {
        let dh = dxhat.row(r);
        let xh = cache.xhat.row(r);
        let mean_dh = dh.sum() / d as f64;
        let mean_dhx = dh.dot(&xh) / d as f64;
        let rs = cache.rstd[r];
        for c in 0..d {
            dx[[r, c]] = rs * (dh[c] - mean_dh - xh[c] * mean_dhx);
        }
    }
    dx
}

struct LayerCache {
    ln1: LnCache,
    a: Array2<f64>,
    qkv: Array2<f64>,
    probs: Vec<Array2<f64>>,
    o: Array2<f64>,
    ln2: LnCache,
    c: Array2<f64>,
    z: Array2<f64>,
    gz: Array2<f64>,
}

/// Activations of a full forward pass, kept for backpropagation.
pub struct ForwardCache {
    tokens: Vec<vocab::Token>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    final_hidden: Array2<f64>,
    logits: Array2<f64>,
}

impl ForwardCache {
    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn tokens(&self) -> &[vocab::Token] {
        &self.tokens
    }
}

/// Learned absolute positions restart after `</struct>`: `<bos>` takes
/// position 1, so the step predicting `x_t` shares its position with `y_t`.
pub fn position_ids(tokens: &[vocab::Token]) -> Vec<usize> {
    let mut close = None;
    tokens
        .iter()
        .enumerate()
        .map(|(k, &tok)| {
            let pos = close.map_or(k, |c| k - c);
            if close.is_none() && tok == vocab::STRUCT_CLOSE {
                close = Some(k);
            }
            pos
        })
        .collect()
}

impl PolicyCheckpoint {
    fn check_context(&self, len: usize) -> Result<()> {
        if len > self.config.max_context {
            return Err(Error::ContextOverflow {
                len,
                max: self.config.max_context,
            });
        }
        Ok(())
    }

    /// Next-token logits at every position (`tokens.len() × vocab::SIZE`).
    pub fn forward(&self, tokens: &[vocab::Token]) -> Result<Array2<f64>> {
        Ok(self.forward_cached(tokens)?.logits)
    }

    pub fn forward_cached(&self, tokens: &[vocab::Token]) -> Result<ForwardCache> {
        self.check_context(tokens.len())?;
        let cfg = &self.config;
        let p = &self.params;
        let o = &self.layout.offsets;
        let (t_len, d) = (tokens.len(), cfg.d_model);
        let v = vocab::SIZE;

        let tok_emb = mat(p, o.tok_emb, v, d);
        let pos_emb = mat(p, o.pos_emb, cfg.max_context, d);
        let mut h = Array2::zeros((t_len, d));
        for (t, (&tok, pos)) in tokens.iter().zip(position_ids(tokens)).enumerate() {
            let mut row = h.row_mut(t);
            row += &tok_emb.row(tok);
            row += &pos_emb.row(pos);
        }

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for lo in &o.layers {
            let (cache, out) = self.layer_forward(lo, &h);
            layers.push(cache);
            h = out;
        }
        let (final_hidden, lnf) = layer_norm(&h, vect(p, o.lnf_g, d), vect(p, o.lnf_b, d));
        let logits = final_hidden.dot(&mat(p, o.head_w, d, v)) + vect(p, o.head_b, v);
        Ok(ForwardCache {
            tokens: tokens.to_vec(),
            layers,
            lnf,
            final_hidden,
            logits,
        })
    }

    fn layer_forward(&self, lo: &LayerOffsets, h: &Array2<f64>) -> (LayerCache, Array2<f64>) {
        let cfg = &self.config;
        let p = &self.params;
        let (t_len, d) = h.dim();
        let (nh, dh, f) = (cfg.n_heads, cfg.head_dim(), cfg.d_ff);
        let scale = 1.0 / (dh as f64).sqrt();

        let (a, ln1) = layer_norm(h, vect(p, lo.ln1_g, d), vect(p, lo.ln1_b, d));
        let qkv = a.dot(&mat(p, lo.w_qkv, d, 3 * d)) + vect(p, lo.b_qkv, 3 * d);
        let mut o = Array2::zeros((t_len, d));
        let mut probs = Vec::with_capacity(nh);
        for head in 0..nh {
            let q = qkv.slice(s![.., head * dh..(head + 1) * dh]);
            let k = qkv.slice(s![.., d + head * dh..d + (head + 1) * dh]);
            let vv = qkv.slice(s![.., 2 * d + head * dh..2 * d + (head + 1) * dh]);
            let mut sc = q.dot(&k.t()) * scale;
            for r in 0..t_len {
                let mut row = sc.row_mut(r);
                let max = row.iter().take(r + 1).cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for c in 0..t_len {
                    if c <= r {
                        let e = (row[c] - max).exp();
                        row[c] = e;
                        sum += e;
                    } else {
                        row[c] = 0.0;
                    }
                }
                row /= sum;
            }
            o.slice_mut(s![.., head * dh..(head + 1) * dh]).assign(&sc.dot(&vv));
            probs.push(sc);
        }
        let attn = o.dot(&mat(p, lo.w_o, d, d)) + vect(p, lo.b_o, d);
        let h_mid = h + &attn;
        let (c, ln2) = layer_norm(&h_mid, vect(p, lo.ln2_g, d), vect(p, lo.ln2_b, d));
        let z = c.dot(&mat(p, lo.w1, d, f)) + vect(p, lo.b1, f);
        let gz = z.mapv(gelu);
        let ffn = gz.dot(&mat(p, lo.w2, f, d)) + vect(p, lo.b2, d);
        let out = h_mid + &ffn;
        (
            LayerCache {
                ln1,
                a,
                qkv,
                probs,
                o,
                ln2,
                c,
                z,
                gz,
            },
            out,
        )
    }

    /// Backpropagate `dlogits` (gradient of some scalar w.r.t. the logits)
    /// and accumulate the parameter gradient into `grad`.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Array2<f64>, grad: &mut [f64]) {
        let cfg = &self.config;
        let p = &self.params;
        let o = &self.layout.offsets;
        let d = cfg.d_model;
        let v = vocab::SIZE;

        mat_mut(grad, o.head_w, d, v).scaled_add(1.0, &cache.final_hidden.t().dot(dlogits));
        vect_mut(grad, o.head_b, v).scaled_add(1.0, &dlogits.sum_axis(Axis(0)));
        let dfinal = dlogits.dot(&mat(p, o.head_w, d, v).t());
        let mut dh = layer_norm_backward(&dfinal, &cache.lnf, vect(p, o.lnf_g, d), grad, o.lnf_g, o.lnf_b);

        for (lo, lc) in o.layers.iter().zip(&cache.layers).rev() {
            dh = self.layer_backward(lo, lc, dh, grad);
        }

        for (t, (&tok, pos)) in cache.tokens.iter().zip(position_ids(&cache.tokens)).enumerate() {
            let row = dh.row(t);
            vect_mut(grad, o.tok_emb + tok * d, d).scaled_add(1.0, &row);
            vect_mut(grad, o.pos_emb + pos * d, d).scaled_add(1.0, &row);
        }
    }

    fn layer_backward(&self, lo: &LayerOffsets, lc: &LayerCache, dout: Array2<f64>, grad: &mut [f64]) -> Array2<f64> {
        let cfg = &self.config;
        let p = &self.params;
        let (t_len, d) = dout.dim();
        let (nh, dh_sz, f) = (cfg.n_heads, cfg.head_dim(), cfg.d_ff);
        let scale = 1.0 / (dh_sz as f64).sqrt();

        // feed-forward branch
        mat_mut(grad, lo.w2, f, d).scaled_add(1.0, &lc.gz.t().dot(&dout));
        vect_mut(grad, lo.b2, d).scaled_add(1.0, &dout.sum_axis(Axis(0)));
        let dgz = dout.dot(&mat(p, lo.w2, f, d).t());
        let dz = &dgz * &lc.z.mapv(gelu_grad);
        mat_mut(grad, lo.w1, d, f).scaled_add(1.0, &lc.c.t().dot(&dz));
        vect_mut(grad, lo.b1, f).scaled_add(1.0, &dz.sum_axis(Axis(0)));
        let dc = dz.dot(&mat(p, lo.w1, d, f).t());
        let dmid = dout + &layer_norm_backward(&dc, &lc.ln2, vect(p, lo.ln2_g, d), grad, lo.ln2_g, lo.ln2_b);

        // attention branch
        mat_mut(grad, lo.w_o, d, d).scaled_add(1.0, &lc.o.t().dot(&dmid));
        vect_mut(grad, lo.b_o, d).scaled_add(1.0, &dmid.sum_axis(Axis(0)));
        let d_o = dmid.dot(&mat(p, lo.w_o, d, d).t());
        let mut dqkv = Array2::zeros((t_len, 3 * d));
        for head in 0..nh {
            let cols = head * dh_sz..(head + 1) * dh_sz;
            let q = lc.qkv.slice(s![.., cols.clone()]);
            let k = lc.qkv.slice(s![.., d + cols.start..d + cols.end]);
            let vv = lc.qkv.slice(s![.., 2 * d + cols.start..2 * d + cols.end]);
            let pr = &lc.probs[head];
            let do_h = d_o.slice(s![.., cols.clone()]);
            let dp = do_h.dot(&vv.t());
            let dv = pr.t().dot(&do_h);
            let mut ds = Array2::zeros((t_len, t_len));
            for r in 0..t_len {
                let inner: f64 = (0..=r).map(|c| pr[[r, c]] * dp[[r, c]]).sum();
                for c in 0..=r {
                    ds[[r, c]] = pr[[r, c]] * (dp[[r, c]] - inner) * scale;
                }
            }
            let dq = ds.dot(&k);
            let dk = ds.t().dot(&q);
            dqkv.slice_mut(s![.., cols.clone()]).assign(&dq);
            dqkv.slice_mut(s![.., d + cols.start..d + cols.end]).assign(&dk);
            dqkv.slice_mut(s![.., 2 * d + cols.start..2 * d + cols.end]).assign(&dv);
        }
        mat_mut(grad, lo.w_qkv, d, 3 * d).scaled_add(1.0, &lc.a.t().dot(&dqkv));
        vect_mut(grad, lo.b_qkv, 3 * d).scaled_add(1.0, &dqkv.sum_axis(Axis(0)));
        let da = dqkv.dot(&mat(p, lo.w_qkv, d, 3 * d).t());
        dmid + &layer_norm_backward(&da, &lc.ln1, vect(p, lo.ln1_g, d), grad, lo.ln1_g, lo.ln1_b)
    }

    /// Begin incremental decoding after feeding `prefix`.
    pub fn start_decode(&self, prefix: &[vocab::Token]) -> Result<DecodeState> {
        self.check_context(prefix.len())?;
        let mut state = DecodeState {
            keys: vec![Vec::new(); self.config.n_layers],
            values: vec![Vec::new(); self.config.n_layers],
            len: 0,
            close: None,
            last_logits: Array1::zeros(vocab::SIZE),
        };
        for &tok in prefix {
            state.push(self, tok)?;
        }
        Ok(state)
    }
}

/// Key/value cache for token-by-token generation.
#[derive(Debug, Clone)]
pub struct DecodeState {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
    /// Index of the first `</struct>`, once seen.
    close: Option<usize>,
    last_logits: Array1<f64>,
}

fn layer_norm_vec(x: &Array1<f64>, gain: ArrayView1<f64>, bias: ArrayView1<f64>) -> Array1<f64> {
    let d = x.len() as f64;
    let mean = x.sum() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let rs = 1.0 / (var + LN_EPS).sqrt();
    x.mapv(|v| (v - mean) * rs) * gain + bias
}

impl DecodeState {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Logits predicting the token after everything pushed so far.
    pub fn logits(&self) -> ArrayView1<'_, f64> {
        self.last_logits.view()
    }

    /// Append one token and compute the next-token logits.
    pub fn push(&mut self, model: &PolicyCheckpoint, token: vocab::Token) -> Result<()> {
        model.check_context(self.len + 1)?;
        let cfg = &model.config;
        let p = &model.params;
        let o = &model.layout.offsets;
        let (d, nh, dh, f) = (cfg.d_model, cfg.n_heads, cfg.head_dim(), cfg.d_ff);
        let v = vocab::SIZE;
        let scale = 1.0 / (dh as f64).sqrt();
        let idx = self.len;
        let pos = self.close.map_or(idx, |c| idx - c);
        if self.close.is_none() && token == vocab::STRUCT_CLOSE {
            self.close = Some(idx);
        }

        let mut h: Array1<f64> = &mat(p, o.tok_emb, v, d).row(token) + &mat(p, o.pos_emb, cfg.max_context, d).row(pos);
        for (l, lo) in o.layers.iter().enumerate() {
            let a = layer_norm_vec(&h, vect(p, lo.ln1_g, d), vect(p, lo.ln1_b, d));
            let qkv = a.dot(&mat(p, lo.w_qkv, d, 3 * d)) + vect(p, lo.b_qkv, 3 * d);
            self.keys[l].extend(qkv.slice(s![d..2 * d]).iter());
            self.values[l].extend(qkv.slice(s![2 * d..3 * d]).iter());
            let keys = mat(&self.keys[l], 0, idx + 1, d);
            let values = mat(&self.values[l], 0, idx + 1, d);
            let mut out = Array1::zeros(d);
            for head in 0..nh {
                let cols = head * dh..(head + 1) * dh;
                let q = qkv.slice(s![cols.clone()]);
                let mut sc = keys.slice(s![.., cols.clone()]).dot(&q) * scale;
                let max = sc.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                sc.mapv_inplace(|x| (x - max).exp());
                let sum = sc.sum();
                sc /= sum;
                out.slice_mut(s![cols.clone()]).assign(&sc.dot(&values.slice(s![.., cols])));
            }
            let attn = out.dot(&mat(p, lo.w_o, d, d)) + vect(p, lo.b_o, d);
            h += &attn;
            let c = layer_norm_vec(&h, vect(p, lo.ln2_g, d), vect(p, lo.ln2_b, d));
            let z = c.dot(&mat(p, lo.w1, d, f)) + vect(p, lo.b1, f);
            let ffn = z.mapv(gelu).dot(&mat(p, lo.w2, f, d)) + vect(p, lo.b2, d);
            h += &ffn;
        }
        let fin = layer_norm_vec(&h, vect(p, o.lnf_g, d), vect(p, o.lnf_b, d));
        self.last_logits = fin.dot(&mat(p, o.head_w, d, v)) + vect(p, o.head_b, v);
        self.len += 1;
        Ok(())
    }
}
