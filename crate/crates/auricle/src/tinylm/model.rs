//! Decoder-only transformer with learned positional embeddings, pre-norm
//! blocks, a weight-tied output head and a hand-written backward pass.
//!
//! The forward pass accepts per-position input-embedding overrides, and the
//! backward pass reports the loss gradient at every input position, which is
//! what lets an external projector train through a frozen model.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayViewD, ArrayViewMutD, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

/// Model shape and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LMConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub ffn_mult: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl LMConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_layers == 0 || self.ffn_mult == 0 || self.max_seq_len == 0 || self.vocab_size < 2
        {
            return Err(Error::Config("all LMConfig dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn ffn_dim(&self) -> usize {
        self.ffn_mult * self.d_model
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl LayerNormParams {
    fn ones(d: usize) -> LayerNormParams {
        LayerNormParams {
            gamma: Array1::ones(d),
            beta: Array1::zeros(d),
        }
    }

    fn zeros(d: usize) -> LayerNormParams {
        LayerNormParams {
            gamma: Array1::zeros(d),
            beta: Array1::zeros(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1: LayerNormParams,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub ln2: LayerNormParams,
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
}

/// All parameter tensors of a model, also reused as gradient and optimizer
/// state storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub ln_f: LayerNormParams,
}

impl ParamSet {
    pub fn zeros(cfg: &LMConfig) -> ParamSet {
        let d = cfg.d_model;
        let f = cfg.ffn_dim();
        ParamSet {
            tok_emb: Array2::zeros((cfg.vocab_size, d)),
            pos_emb: Array2::zeros((cfg.max_seq_len, d)),
            layers: (0..cfg.n_layers)
                .map(|_| LayerParams {
                    ln1: LayerNormParams::zeros(d),
                    wq: Array2::zeros((d, d)),
                    wk: Array2::zeros((d, d)),
                    wv: Array2::zeros((d, d)),
                    wo: Array2::zeros((d, d)),
                    ln2: LayerNormParams::zeros(d),
                    w1: Array2::zeros((d, f)),
                    w2: Array2::zeros((f, d)),
                })
                .collect(),
            ln_f: LayerNormParams::zeros(d),
        }
    }

    /// Tensor names in a stable order matching `views`/`views_mut`.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["tok_emb".to_string(), "pos_emb".to_string()];
        for i in 0..self.layers.len() {
            for t in [
                "ln1.gamma", "ln1.beta", "wq", "wk", "wv", "wo", "ln2.gamma", "ln2.beta", "w1",
                "w2",
            ] {
                names.push(format!("layers.{i}.{t}"));
            }
        }
        names.push("ln_f.gamma".to_string());
        names.push("ln_f.beta".to_string());
        names
    }

    pub fn views(&self) -> Vec<ArrayViewD<'_, f64>> {
        let mut v: Vec<ArrayViewD<'_, f64>> =
            vec![self.tok_emb.view().into_dyn(), self.pos_emb.view().into_dyn()];
        for l in &self.layers {
            v.push(l.ln1.gamma.view().into_dyn());
            v.push(l.ln1.beta.view().into_dyn());
            v.push(l.wq.view().into_dyn());
            v.push(l.wk.view().into_dyn());
            v.push(l.wv.view().into_dyn());
            v.push(l.wo.view().into_dyn());
            v.push(l.ln2.gamma.view().into_dyn());
            v.push(l.ln2.beta.view().into_dyn());
            v.push(l.w1.view().into_dyn());
            v.push(l.w2.view().into_dyn());
        }
        v.push(self.ln_f.gamma.view().into_dyn());
        v.push(self.ln_f.beta.view().into_dyn());
        v
    }

    pub fn views_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut v: Vec<ArrayViewMutD<'_, f64>> = vec![
            self.tok_emb.view_mut().into_dyn(),
            self.pos_emb.view_mut().into_dyn(),
        ];
        for l in &mut self.layers {
            v.push(l.ln1.gamma.view_mut().into_dyn());
            v.push(l.ln1.beta.view_mut().into_dyn());
            v.push(l.wq.view_mut().into_dyn());
            v.push(l.wk.view_mut().into_dyn());
            v.push(l.wv.view_mut().into_dyn());
            v.push(l.wo.view_mut().into_dyn());
            v.push(l.ln2.gamma.view_mut().into_dyn());
            v.push(l.ln2.beta.view_mut().into_dyn());
            v.push(l.w1.view_mut().into_dyn());
            v.push(l.w2.view_mut().into_dyn());
        }
        v.push(self.ln_f.gamma.view_mut().into_dyn());
        v.push(self.ln_f.beta.view_mut().into_dyn());
        v
    }

    /// Sum of squares over every tensor.
    pub fn squared_norm(&self) -> f64 {
        self.views()
            .iter()
            .map(|t| t.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for mut t in self.views_mut() {
            t.mapv_inplace(|x| x * factor);
        }
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        let other_views = other.views();
        for (mut a, b) in self.views_mut().into_iter().zip(other_views) {
            a.zip_mut_with(&b, |x, y| *x += y);
        }
    }
}

/// One forward request: a token sequence plus optional input-embedding
/// overrides at given positions.
#[derive(Debug, Clone, Default)]
pub struct ForwardRequest {
    pub token_ids: Vec<u32>,
    pub embedding_overrides: BTreeMap<usize, Array1<f64>>,
}

impl ForwardRequest {
    pub fn plain(token_ids: Vec<u32>) -> ForwardRequest {
        ForwardRequest {
            token_ids,
            embedding_overrides: BTreeMap::new(),
        }
    }
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
    out: Array2<f64>,
}

struct LayerCache {
    ln1: LnCache,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    ln2: LnCache,
    h1: Array2<f64>,
    g: Array2<f64>,
}

/// Activations retained by `forward_with_cache` for the backward pass.
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    ln_f: LnCache,
}

/// Parameter gradients plus the gradient at each input-embedding position.
pub struct Gradients {
    pub params: ParamSet,
    /// d loss / d x0 per position; rows at overridden positions are the
    /// gradients with respect to the override vectors.
    pub d_input: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyLm {
    pub cfg: LMConfig,
    pub params: ParamSet,
}

fn randn(rng: &mut ChaCha12Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("valid normal");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

impl TinyLm {
    pub fn new(cfg: LMConfig) -> Result<TinyLm> {
        cfg.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let d = cfg.d_model;
        let f = cfg.ffn_dim();
        let params = ParamSet {
            tok_emb: randn(&mut rng, cfg.vocab_size, d, INIT_STD),
            pos_emb: randn(&mut rng, cfg.max_seq_len, d, INIT_STD),
            layers: (0..cfg.n_layers)
                .map(|_| LayerParams {
                    ln1: LayerNormParams::ones(d),
                    wq: randn(&mut rng, d, d, INIT_STD),
                    wk: randn(&mut rng, d, d, INIT_STD),
                    wv: randn(&mut rng, d, d, INIT_STD),
                    wo: randn(&mut rng, d, d, INIT_STD),
                    ln2: LayerNormParams::ones(d),
                    w1: randn(&mut rng, d, f, INIT_STD),
                    w2: randn(&mut rng, f, d, INIT_STD),
                })
                .collect(),
            ln_f: LayerNormParams::ones(d),
        };
        Ok(TinyLm { cfg, params })
    }

    /// Appends embedding rows for `n_new` vocabulary entries, drawn from the
    /// seeded initializer. Returns the first new id.
    pub fn extend_vocab(&mut self, n_new: usize) -> u32 {
        let first = self.cfg.vocab_size as u32;
        if n_new == 0 {
            return first;
        }
        let mut rng = ChaCha12Rng::seed_from_u64(
            self.cfg.seed.wrapping_add(self.cfg.vocab_size as u64),
        );
        let rows = randn(&mut rng, n_new, self.cfg.d_model, INIT_STD);
        let mut tok_emb = Array2::zeros((self.cfg.vocab_size + n_new, self.cfg.d_model));
        tok_emb
            .slice_mut(s![..self.cfg.vocab_size, ..])
            .assign(&self.params.tok_emb);
        tok_emb
            .slice_mut(s![self.cfg.vocab_size.., ..])
            .assign(&rows);
        self.params.tok_emb = tok_emb;
        self.cfg.vocab_size += n_new;
        first
    }

    fn validate_request(&self, req: &ForwardRequest) -> Result<()> {
        let n = req.token_ids.len();
        if n == 0 {
            return Err(Error::Domain("forward on empty sequence".into()));
        }
        if n > self.cfg.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: n,
                max: self.cfg.max_seq_len,
            });
        }
        for &id in &req.token_ids {
            if id as usize >= self.cfg.vocab_size {
                return Err(Error::Domain(format!(
                    "token id {id} out of vocabulary ({})",
                    self.cfg.vocab_size
                )));
            }
        }
        for (&pos, vec) in &req.embedding_overrides {
            if pos >= n {
                return Err(Error::Domain(format!(
                    "override position {pos} beyond sequence length {n}"
                )));
            }
            if vec.len() != self.cfg.d_model {
                return Err(Error::Config(format!(
                    "override at {pos} has dimension {}, model expects {}",
                    vec.len(),
                    self.cfg.d_model
                )));
            }
            if !vec.iter().all(|x| x.is_finite()) {
                return Err(Error::Numeric(format!(
                    "override at position {pos} contains non-finite values"
                )));
            }
        }
        Ok(())
    }

    /// Input embeddings: token embedding (or override) plus positional
    /// embedding.
    fn embed(&self, req: &ForwardRequest) -> Array2<f64> {
        let n = req.token_ids.len();
        let d = self.cfg.d_model;
        let mut x = Array2::zeros((n, d));
        for (t, &id) in req.token_ids.iter().enumerate() {
            let emb = match req.embedding_overrides.get(&t) {
                Some(v) => v.view(),
                None => self.params.tok_emb.row(id as usize),
            };
            let row = &emb + &self.params.pos_emb.row(t);
            x.row_mut(t).assign(&row);
        }
        x
    }

    /// Causal logits over the vocabulary for every position.
    pub fn forward(&self, req: &ForwardRequest) -> Result<Array2<f64>> {
        let (logits, _) = self.forward_with_cache(req)?;
        Ok(logits)
    }

    /// Forward pass that retains activations for `backward`.
    pub fn forward_with_cache(&self, req: &ForwardRequest) -> Result<(Array2<f64>, ForwardCache)> {
        self.validate_request(req)?;
        let mut x = self.embed(req);
        let mut layer_caches = Vec::with_capacity(self.cfg.n_layers);
        for layer in &self.params.layers {
            let (next, cache) = self.layer_forward(&x, layer);
            layer_caches.push(cache);
            x = next;
        }
        let ln_f = layer_norm(&x, &self.params.ln_f);
        let logits = ln_f.out.dot(&self.params.tok_emb.t());
        Ok((
            logits,
            ForwardCache {
                layers: layer_caches,
                ln_f,
            },
        ))
    }

    fn layer_forward(&self, x: &Array2<f64>, layer: &LayerParams) -> (Array2<f64>, LayerCache) {
        let n = x.nrows();
        let heads = self.cfg.n_heads;
        let dh = self.cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let ln1 = layer_norm(x, &layer.ln1);
        let q = ln1.out.dot(&layer.wq);
        let k = ln1.out.dot(&layer.wk);
        let v = ln1.out.dot(&layer.wv);

        let mut ctx = Array2::zeros((n, self.cfg.d_model));
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = q.slice(s![.., cols.clone()]);
            let kh = k.slice(s![.., cols.clone()]);
            let vh = v.slice(s![.., cols.clone()]);
            let mut p = Array2::zeros((n, n));
            for i in 0..n {
                // causal: position i attends to 0..=i
                let mut row = Array1::zeros(i + 1);
                for j in 0..=i {
                    row[j] = qh.row(i).dot(&kh.row(j)) * scale;
                }
                softmax_inplace(&mut row);
                for j in 0..=i {
                    p[(i, j)] = row[j];
                }
            }
            let ctx_h = p.dot(&vh);
            ctx.slice_mut(s![.., cols]).assign(&ctx_h);
            probs.push(p);
        }
        let attn = ctx.dot(&layer.wo);
        let x_mid = x + &attn;

        let ln2 = layer_norm(&x_mid, &layer.ln2);
        let h1 = ln2.out.dot(&layer.w1);
        let g = h1.mapv(gelu);
        let ffn = g.dot(&layer.w2);
        let out = &x_mid + &ffn;

        (
            out,
            LayerCache {
                ln1,
                q,
                k,
                v,
                probs,
                ctx,
                ln2,
                h1,
                g,
            },
        )
    }

    /// Backpropagates `d_logits` through the cached forward pass, returning
    /// parameter gradients and the per-position input gradient.
    pub fn backward(
        &self,
        req: &ForwardRequest,
        cache: &ForwardCache,
        d_logits: &Array2<f64>,
    ) -> Gradients {
        let mut grads = ParamSet::zeros(&self.cfg);

        // weight-tied head: logits = ln_f.out . tok_emb^T
        let d_hidden = d_logits.dot(&self.params.tok_emb);
        grads.tok_emb = d_logits.t().dot(&cache.ln_f.out);
        let mut dx = layer_norm_backward(
            &d_hidden,
            &cache.ln_f,
            &self.params.ln_f,
            &mut grads.ln_f,
        );

        for (li, layer) in self.params.layers.iter().enumerate().rev() {
            let lc = &cache.layers[li];
            let gl = &mut grads.layers[li];
            dx = self.layer_backward(&dx, lc, layer, gl);
        }

        // input embeddings
        let n = req.token_ids.len();
        for t in 0..n {
            let row = dx.row(t);
            grads.pos_emb.row_mut(t).zip_mut_with(&row, |a, b| *a += b);
            if !req.embedding_overrides.contains_key(&t) {
                let id = req.token_ids[t] as usize;
                grads.tok_emb.row_mut(id).zip_mut_with(&row, |a, b| *a += b);
            }
        }

        Gradients {
            params: grads,
            d_input: dx,
        }
    }

    fn layer_backward(
        &self,
        d_out: &Array2<f64>,
        lc: &LayerCache,
        layer: &LayerParams,
        gl: &mut LayerParams,
    ) -> Array2<f64> {
        let n = d_out.nrows();
        let heads = self.cfg.n_heads;
        let dh = self.cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        // ffn branch: out = x_mid + gelu(ln2(x_mid) . w1) . w2
        let d_g = d_out.dot(&layer.w2.t());
        gl.w2 += &lc.g.t().dot(d_out);
        let d_h1 = &d_g * &lc.h1.mapv(gelu_grad);
        let d_n2 = d_h1.dot(&layer.w1.t());
        gl.w1 += &lc.ln2.out.t().dot(&d_h1);
        let d_mid_ln = layer_norm_backward(&d_n2, &lc.ln2, &layer.ln2, &mut gl.ln2);
        let d_x_mid = d_out + &d_mid_ln;

        // attention branch: x_mid = x + (ctx . wo)
        let d_ctx = d_x_mid.dot(&layer.wo.t());
        gl.wo += &lc.ctx.t().dot(&d_x_mid);

        let mut d_q = Array2::zeros((n, self.cfg.d_model));
        let mut d_k = Array2::zeros((n, self.cfg.d_model));
        let mut d_v = Array2::zeros((n, self.cfg.d_model));
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let p = &lc.probs[h];
            let qh = lc.q.slice(s![.., cols.clone()]);
            let kh = lc.k.slice(s![.., cols.clone()]);
            let vh = lc.v.slice(s![.., cols.clone()]);
            let d_ctx_h = d_ctx.slice(s![.., cols.clone()]);

            // d_probs = d_ctx_h . vh^T ; d_vh = p^T . d_ctx_h
            let d_p = d_ctx_h.dot(&vh.t());
            let d_vh = p.t().dot(&d_ctx_h);
            d_v.slice_mut(s![.., cols.clone()]).assign(&d_vh);

            // softmax backward row-wise over the causal prefix
            let mut d_scores = Array2::zeros((n, n));
            for i in 0..n {
                let mut dot = 0.0;
                for j in 0..=i {
                    dot += d_p[(i, j)] * p[(i, j)];
                }
                for j in 0..=i {
                    d_scores[(i, j)] = p[(i, j)] * (d_p[(i, j)] - dot);
                }
            }

            let mut d_qh = d_scores.dot(&kh);
            d_qh.mapv_inplace(|x| x * scale);
            d_q.slice_mut(s![.., cols.clone()]).assign(&d_qh);
            let mut d_kh = d_scores.t().dot(&qh);
            d_kh.mapv_inplace(|x| x * scale);
            d_k.slice_mut(s![.., cols]).assign(&d_kh);
        }

        let d_n1 =
            d_q.dot(&layer.wq.t()) + d_k.dot(&layer.wk.t()) + d_v.dot(&layer.wv.t());
        gl.wq += &lc.ln1.out.t().dot(&d_q);
        gl.wk += &lc.ln1.out.t().dot(&d_k);
        gl.wv += &lc.ln1.out.t().dot(&d_v);
        let d_x_ln = layer_norm_backward(&d_n1, &lc.ln1, &layer.ln1, &mut gl.ln1);

        &d_x_mid + &d_x_ln
    }
}

fn softmax_inplace(row: &mut Array1<f64>) {
    let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    row.mapv_inplace(|x| (x - max).exp());
    let sum = row.sum();
    row.mapv_inplace(|x| x / sum);
}

fn layer_norm(x: &Array2<f64>, p: &LayerNormParams) -> LnCache {
    let n = x.nrows();
    let d = x.ncols();
    let mut xhat = Array2::zeros((n, d));
    let mut inv_std = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mu = row.mean().expect("non-empty row");
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        for j in 0..d {
            xhat[(i, j)] = (row[j] - mu) * is;
        }
    }
    let out = &xhat * &p.gamma + &p.beta;
    LnCache { xhat, inv_std, out }
}

fn layer_norm_backward(
    d_out: &Array2<f64>,
    cache: &LnCache,
    p: &LayerNormParams,
    grads: &mut LayerNormParams,
) -> Array2<f64> {
    let n = d_out.nrows();
    let d = d_out.ncols();
    grads.gamma += &(d_out * &cache.xhat).sum_axis(Axis(0));
    grads.beta += &d_out.sum_axis(Axis(0));

    let mut dx = Array2::zeros((n, d));
    for i in 0..n {
        let dy = d_out.row(i);
        let xhat = cache.xhat.row(i);
        let dxhat: Vec<f64> = dy.iter().zip(p.gamma.iter()).map(|(a, g)| a * g).collect();
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat =
            dxhat.iter().zip(xhat.iter()).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let is = cache.inv_std[i];
        for j in 0..d {
            dx[(i, j)] = is * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Mean cross-entropy over positions with a nonzero mask. Masked positions
/// contribute exactly zero to the value and to gradients.
pub fn masked_cross_entropy(
    logits: &Array2<f64>,
    targets: &[u32],
    mask: &[bool],
) -> Result<f64> {
    let (loss, _) = masked_cross_entropy_with_grad(logits, targets, mask, false)?;
    Ok(loss)
}

/// As [`masked_cross_entropy`], also returning d loss / d logits when
/// `want_grad` is set.
pub fn masked_cross_entropy_with_grad(
    logits: &Array2<f64>,
    targets: &[u32],
    mask: &[bool],
    want_grad: bool,
) -> Result<(f64, Option<Array2<f64>>)> {
    let n = logits.nrows();
    if targets.len() != n || mask.len() != n {
        return Err(Error::Domain(format!(
            "loss shapes disagree: {n} logit rows, {} targets, {} mask entries",
            targets.len(),
            mask.len()
        )));
    }
    let active = mask.iter().filter(|&&m| m).count();
    if active == 0 {
        return Err(Error::Domain("loss mask has no active positions".into()));
    }
    let inv_active = 1.0 / active as f64;

    let mut loss = 0.0;
    let mut d_logits = want_grad.then(|| Array2::zeros(logits.raw_dim()));
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let row = logits.row(i);
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let sum_exp: f64 = row.iter().map(|&x| (x - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        let t = targets[i] as usize;
        if t >= row.len() {
            return Err(Error::Domain(format!("target id {t} out of vocabulary")));
        }
        loss += (log_z - row[t]) * inv_active;
        if let Some(d) = d_logits.as_mut() {
            for j in 0..row.len() {
                let p = (row[j] - max).exp() / sum_exp;
                d[(i, j)] = (p - if j == t { 1.0 } else { 0.0 }) * inv_active;
            }
        }
    }
    Ok((loss, d_logits))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> LMConfig {
        LMConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            ffn_mult: 2,
            max_seq_len: 16,
            vocab_size: 12,
            seed: 7,
        }
    }

    fn ids(v: &[u32]) -> Vec<u32> {
        v.to_vec()
    }

    #[test]
    fn config_rejects_indivisible_heads() {
        let mut cfg = tiny_cfg();
        cfg.d_model = 15;
        assert!(TinyLm::new(cfg).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let model = TinyLm::new(tiny_cfg()).unwrap();
        let req = ForwardRequest::plain(ids(&[1, 2, 3, 4]));
        let a = model.forward(&req).unwrap();
        let b = model.forward(&req).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn causality_exact() {
        let model = TinyLm::new(tiny_cfg()).unwrap();
        let base = model
            .forward(&ForwardRequest::plain(ids(&[1, 2, 3, 4, 5])))
            .unwrap();
        let changed = model
            .forward(&ForwardRequest::plain(ids(&[1, 2, 3, 9, 5])))
            .unwrap();
        // logits at positions before the changed token are bit-identical
        for t in 0..3 {
            assert_eq!(base.row(t), changed.row(t), "position {t} leaked");
        }
        assert_ne!(base.row(3), changed.row(3));
    }

    #[test]
    fn empty_override_matches_plain_forward() {
        let model = TinyLm::new(tiny_cfg()).unwrap();
        let mut req = ForwardRequest::plain(ids(&[3, 1, 4]));
        let plain = model.forward(&req).unwrap();
        req.embedding_overrides = BTreeMap::new();
        assert_eq!(model.forward(&req).unwrap(), plain);
    }

    #[test]
    fn identity_override_matches_plain_forward() {
        let model = TinyLm::new(tiny_cfg()).unwrap();
        let tokens = ids(&[3, 1, 4, 1]);
        let plain = model.forward(&ForwardRequest::plain(tokens.clone())).unwrap();
        let mut req = ForwardRequest::plain(tokens.clone());
        req.embedding_overrides
            .insert(2, model.params.tok_emb.row(tokens[2] as usize).to_owned());
        let overridden = model.forward(&req).unwrap();
        let max_diff = (&plain - &overridden)
            .iter()
            .fold(0.0f64, |m, d| m.max(d.abs()));
        assert!(max_diff <= 1e-6, "max diff {max_diff}");
    }

    #[test]
    fn override_changes_downstream_logits() {
        let model = TinyLm::new(tiny_cfg()).unwrap();
        let tokens = ids(&[3, 1, 4, 1]);
        let plain = model.forward(&ForwardRequest::plain(tokens.clone())).unwrap();
        let mut req = ForwardRequest::plain(tokens);
        req.embedding_overrides
            .insert(1, Array1::from_elem(model.cfg.d_model, 0.5));
        let overridden = model.forward(&req).unwrap();
        assert_eq!(plain.row(0), overridden.row(0));
        assert_ne!(plain.row(1), overridden.row(1));
    }

    #[test]
    fn non_finite_override_is_numeric_error() {
        let model = TinyLm::new(tiny_cfg()).unwrap();
        let mut req = ForwardRequest::plain(ids(&[1, 2]));
        req.embedding_overrides
            .insert(0, Array1::from_elem(model.cfg.d_model, f64::NAN));
        assert!(matches!(model.forward(&req), Err(Error::Numeric(_))));
    }

    #[test]
    fn over_length_sequence_rejected() {
        let model = TinyLm::new(tiny_cfg()).unwrap();
        let req = ForwardRequest::plain(vec![1; 17]);
        assert!(matches!(
            model.forward(&req),
            Err(Error::SequenceTooLong { .. })
        ));
    }

    #[test]
    fn extend_vocab_appends_rows() {
        let mut model = TinyLm::new(tiny_cfg()).unwrap();
        let old_emb = model.params.tok_emb.clone();
        let first = model.extend_vocab(2);
        assert_eq!(first, 12);
        assert_eq!(model.cfg.vocab_size, 14);
        assert_eq!(model.params.tok_emb.slice(s![..12, ..]), old_emb);
    }

    #[test]
    fn loss_all_ones_mask_is_mean_ce() {
        let model = TinyLm::new(tiny_cfg()).unwrap();
        let req = ForwardRequest::plain(ids(&[1, 2, 3, 4]));
        let logits = model.forward(&req).unwrap();
        let targets = [2u32, 3, 4, 5];
        let full = masked_cross_entropy(&logits, &targets, &[true; 4]).unwrap();
        // average of single-position losses
        let mut acc = 0.0;
        for i in 0..4 {
            let mut mask = [false; 4];
            mask[i] = true;
            acc += masked_cross_entropy(&logits, &targets, &mask).unwrap();
        }
        assert!((full - acc / 4.0).abs() < 1e-12);
    }

    #[test]
    fn masked_position_logit_does_not_affect_loss() {
        let model = TinyLm::new(tiny_cfg()).unwrap();
        let req = ForwardRequest::plain(ids(&[1, 2, 3, 4]));
        let mut logits = model.forward(&req).unwrap();
        let targets = [2u32, 3, 4, 5];
        let mask = [true, false, true, false];
        let before = masked_cross_entropy(&logits, &targets, &mask).unwrap();
        logits[(1, 5)] += 100.0;
        logits[(3, 0)] -= 50.0;
        let after = masked_cross_entropy(&logits, &targets, &mask).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn peaked_logits_drive_loss_to_zero() {
        let mut logits = Array2::zeros((1, 8));
        logits[(0, 3)] = 50.0;
        let loss = masked_cross_entropy(&logits, &[3], &[true]).unwrap();
        assert!(loss < 1e-9, "loss = {loss}");
    }

    #[test]
    fn all_zero_mask_is_domain_error() {
        let logits = Array2::zeros((2, 8));
        assert!(masked_cross_entropy(&logits, &[1, 2], &[false, false]).is_err());
    }

    /// Re-draws parameters at O(1) scale so a 1e-3 finite-difference step is
    /// a small relative perturbation.
    pub(crate) fn randomize_params(model: &mut TinyLm, seed: u64, weight_std: f64) {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let names = model.params.tensor_names();
        for (name, mut view) in names.iter().zip(model.params.views_mut()) {
            for x in view.iter_mut() {
                let z: f64 = normal.sample(&mut rng);
                *x = if name.contains("gamma") {
                    1.0 + 0.1 * z
                } else if name.contains("beta") {
                    0.05 * z
                } else {
                    weight_std * z
                };
            }
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        // central differences at h=1e-3 on a sampled set of parameters
        let cfg = LMConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            ffn_mult: 2,
            max_seq_len: 8,
            vocab_size: 10,
            seed: 11,
        };
        let mut model = TinyLm::new(cfg).unwrap();
        randomize_params(&mut model, 13, 0.3);
        let tokens = ids(&[1, 4, 2, 7, 3, 5]);
        let targets = [4u32, 2, 7, 3, 5, 1];
        let mask = [true, true, false, true, true, false];
        let req = ForwardRequest::plain(tokens);

        let (logits, cache) = model.forward_with_cache(&req).unwrap();
        let (_, d_logits) =
            masked_cross_entropy_with_grad(&logits, &targets, &mask, true).unwrap();
        let grads = model.backward(&req, &cache, &d_logits.unwrap());

        let loss_fn = |m: &TinyLm| {
            let l = m.forward(&req).unwrap();
            masked_cross_entropy(&l, &targets, &mask).unwrap()
        };

        let h = 1e-3;
        let n_tensors = grads.params.views().len();
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        for ti in 0..n_tensors {
            let g_view = grads.params.views()[ti].to_owned();
            let len = g_view.len();
            // probe a few entries per tensor
            for &flat in [0usize, len / 2, len.saturating_sub(1)].iter() {
                if flat >= len {
                    continue;
                }
                let analytic = g_view.as_slice().unwrap()[flat];
                let orig = model.params.views()[ti].as_slice().unwrap()[flat];
                {
                    let mut views = model.params.views_mut();
                    views[ti].as_slice_mut().unwrap()[flat] = orig + h;
                }
                let up = loss_fn(&model);
                {
                    let mut views = model.params.views_mut();
                    views[ti].as_slice_mut().unwrap()[flat] = orig - h;
                }
                let down = loss_fn(&model);
                {
                    let mut views = model.params.views_mut();
                    views[ti].as_slice_mut().unwrap()[flat] = orig;
                }
                let fd = (up - down) / (2.0 * h);
                // per-component guard against genuine backward bugs
                let denom = analytic.abs().max(fd.abs());
                if denom >= 1e-6 {
                    let rel = (analytic - fd).abs() / denom;
                    assert!(
                        rel < 1e-3,
                        "tensor {ti} flat {flat}: analytic {analytic}, fd {fd}, rel {rel}"
                    );
                }
                pairs.push((analytic, fd));
            }
        }
        assert!(pairs.len() > 20, "only {} entries checked", pairs.len());
        // aggregate relative error of the sampled gradient vector
        let diff_norm: f64 = pairs.iter().map(|(a, f)| (a - f) * (a - f)).sum::<f64>().sqrt();
        let an_norm: f64 = pairs.iter().map(|(a, _)| a * a).sum::<f64>().sqrt();
        let fd_norm: f64 = pairs.iter().map(|(_, f)| f * f).sum::<f64>().sqrt();
        let rel = diff_norm / an_norm.max(fd_norm);
        assert!(rel < 1e-4, "aggregate relative gradient error {rel}");
    }

    #[test]
    fn override_gradient_matches_finite_differences() {
        let cfg = LMConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            ffn_mult: 2,
            max_seq_len: 8,
            vocab_size: 10,
            seed: 3,
        };
        let model = TinyLm::new(cfg).unwrap();
        let tokens = ids(&[1, 4, 2, 7]);
        let targets = [4u32, 2, 7, 3];
        let mask = [false, false, true, true];
        let base_vec = Array1::from_elem(model.cfg.d_model, 0.1);
        let mk_req = |v: Array1<f64>| {
            let mut r = ForwardRequest::plain(tokens.clone());
            r.embedding_overrides.insert(1, v);
            r
        };

        let req = mk_req(base_vec.clone());
        let (logits, cache) = model.forward_with_cache(&req).unwrap();
        let (_, d_logits) =
            masked_cross_entropy_with_grad(&logits, &targets, &mask, true).unwrap();
        let grads = model.backward(&req, &cache, &d_logits.unwrap());

        let h = 1e-5;
        for j in 0..model.cfg.d_model {
            let mut up_v = base_vec.clone();
            up_v[j] += h;
            let up = masked_cross_entropy(
                &model.forward(&mk_req(up_v)).unwrap(),
                &targets,
                &mask,
            )
            .unwrap();
            let mut dn_v = base_vec.clone();
            dn_v[j] -= h;
            let dn = masked_cross_entropy(
                &model.forward(&mk_req(dn_v)).unwrap(),
                &targets,
                &mask,
            )
            .unwrap();
            let fd = (up - dn) / (2.0 * h);
            let analytic = grads.d_input[(1, j)];
            let denom = analytic.abs().max(fd.abs()).max(1e-8);
            assert!(
                (analytic - fd).abs() / denom < 1e-4,
                "dim {j}: analytic {analytic}, fd {fd}"
            );
        }
    }
}
