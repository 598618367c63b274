//! Decoder-only transformer with hand-written backward pass.
//!
//! Pre-norm blocks (`x + attn(ln(x))`, `x + mlp(ln(x))`), learned token and
//! position embeddings, causal multi-head attention, tanh-GELU MLP, final
//! layer norm and an untied output head. All parameters live in one flat
//! vector described by a [`Layout`], which keeps the optimizer and the
//! finite-difference checks trivial.

use std::ops::Range;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::real::*;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;
use crate::tokencodec::TokenSequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Embedding,
    Norm,
    Matrix,
    Bias,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub kind: ParamKind,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug)]
struct LayerSlots {
    ln1_g: Range<usize>,
    ln1_b: Range<usize>,
    w_qkv: Range<usize>,
    b_qkv: Range<usize>,
    w_o: Range<usize>,
    b_o: Range<usize>,
    ln2_g: Range<usize>,
    ln2_b: Range<usize>,
    w_fc1: Range<usize>,
    b_fc1: Range<usize>,
    w_fc2: Range<usize>,
    b_fc2: Range<usize>,
}

/// Shape table for the flat parameter vector.
#[derive(Clone, Debug)]
pub struct Layout {
    pub entries: Vec<ParamEntry>,
    tok: Range<usize>,
    pos: Range<usize>,
    layers: Vec<LayerSlots>,
    lnf_g: Range<usize>,
    lnf_b: Range<usize>,
    w_out: Range<usize>,
    b_out: Range<usize>,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut entries = Vec::new();
        let mut offset = 0;
        let mut add = |name: String, shape: Vec<usize>, kind: ParamKind| {
            let e = ParamEntry {
                name,
                shape,
                offset,
                kind,
            };
            offset += e.len();
            let r = e.range();
            entries.push(e);
            r
        };
        let (d, v, f) = (cfg.d_model, cfg.vocab_size, cfg.d_ff());
        let tok = add("tok_emb".into(), vec![v, d], ParamKind::Embedding);
        let pos = add("pos_emb".into(), vec![cfg.context_length, d], ParamKind::Embedding);
        let mut layers = Vec::new();
        for l in 0..cfg.n_layers {
            layers.push(LayerSlots {
                ln1_g: add(format!("h{l}.ln1.g"), vec![d], ParamKind::Norm),
                ln1_b: add(format!("h{l}.ln1.b"), vec![d], ParamKind::Bias),
                w_qkv: add(format!("h{l}.attn.w_qkv"), vec![d, 3 * d], ParamKind::Matrix),
                b_qkv: add(format!("h{l}.attn.b_qkv"), vec![3 * d], ParamKind::Bias),
                w_o: add(format!("h{l}.attn.w_o"), vec![d, d], ParamKind::Matrix),
                b_o: add(format!("h{l}.attn.b_o"), vec![d], ParamKind::Bias),
                ln2_g: add(format!("h{l}.ln2.g"), vec![d], ParamKind::Norm),
                ln2_b: add(format!("h{l}.ln2.b"), vec![d], ParamKind::Bias),
                w_fc1: add(format!("h{l}.mlp.w_fc1"), vec![d, f], ParamKind::Matrix),
                b_fc1: add(format!("h{l}.mlp.b_fc1"), vec![f], ParamKind::Bias),
                w_fc2: add(format!("h{l}.mlp.w_fc2"), vec![f, d], ParamKind::Matrix),
                b_fc2: add(format!("h{l}.mlp.b_fc2"), vec![d], ParamKind::Bias),
            });
        }
        let lnf_g = add("ln_f.g".into(), vec![d], ParamKind::Norm);
        let lnf_b = add("ln_f.b".into(), vec![d], ParamKind::Bias);
        let w_out = add("head.w".into(), vec![d, v], ParamKind::Matrix);
        let b_out = add("head.b".into(), vec![v], ParamKind::Bias);
        Self {
            entries,
            tok,
            pos,
            layers,
            lnf_g,
            lnf_b,
            w_out,
            b_out,
        }
    }

    pub fn total(&self) -> usize {
        self.entries.last().map_or(0, |e| e.offset + e.len())
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

struct LnCache<F> {
    xhat: Vec<F>,
    rstd: Vec<F>,
}

impl<F: Real> LnCache<F> {
    fn new(t: usize, d: usize) -> Self {
        Self {
            xhat: vec![F::zero(); t * d],
            rstd: vec![F::zero(); t],
        }
    }
}

struct LayerCache<F> {
    ln1: LnCache<F>,
    h1: Vec<F>,
    qkv: Vec<F>,
    /// `[head][query][key]`, zero above the diagonal.
    probs: Vec<F>,
    att: Vec<F>,
    ln2: LnCache<F>,
    h2: Vec<F>,
    pre: Vec<F>,
    act: Vec<F>,
}

pub(crate) struct Cache<F> {
    t: usize,
    layers: Vec<LayerCache<F>>,
    lnf: LnCache<F>,
    hf: Vec<F>,
}

/// Incremental decoding state (key/value cache).
#[derive(Clone, Debug)]
pub struct DecodeState<F> {
    pos: usize,
    keys: Vec<Vec<F>>,
    values: Vec<Vec<F>>,
    logits: Vec<F>,
}

impl<F: Real> DecodeState<F> {
    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn logits(&self) -> &[F] {
        &self.logits
    }
}

#[derive(Clone, Debug)]
pub struct Transformer<F> {
    cfg: ModelConfig,
    layout: Layout,
    params: Vec<F>,
}

impl<F: Real> Transformer<F> {
    /// Gaussian init (std `init_std`, residual projections scaled by
    /// `1/sqrt(2·n_layers)`), zero biases, unit norm gains.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(cfg);
        let mut rng = rng_from_seed(seed);
        let normal = Normal::new(0.0, cfg.init_std).expect("positive std");
        let resid_scale = 1.0 / ((2 * cfg.n_layers) as f64).sqrt();
        let mut params = vec![F::zero(); layout.total()];
        for e in &layout.entries {
            let scale = if e.name.ends_with("w_o") || e.name.ends_with("w_fc2") {
                resid_scale
            } else {
                1.0
            };
            for p in &mut params[e.range()] {
                *p = match e.kind {
                    ParamKind::Embedding | ParamKind::Matrix => F::lit(normal.sample(&mut rng) * scale),
                    ParamKind::Norm => F::one(),
                    ParamKind::Bias => F::zero(),
                };
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            layout,
            params,
        })
    }

    pub fn from_params(cfg: &ModelConfig, params: Vec<F>) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(cfg);
        if params.len() != layout.total() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                layout.total(),
                params.len()
            )));
        }
        Ok(Self {
            cfg: cfg.clone(),
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn p(&self, r: &Range<usize>) -> &[F] {
        &self.params[r.clone()]
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.len() > self.cfg.context_length {
            return Err(Error::ShapeMismatch(format!(
                "sequence of {} tokens exceeds context {}",
                ids.len(),
                self.cfg.context_length
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= self.cfg.vocab_size) {
            return Err(Error::ShapeMismatch(format!("token id {bad} outside vocabulary")));
        }
        Ok(())
    }

    pub(crate) fn forward(&self, ids: &[u32]) -> Cache<F> {
        let cfg = &self.cfg;
        let (t, d, f) = (ids.len(), cfg.d_model, cfg.d_ff());
        let (nh, hd) = (cfg.n_heads, cfg.head_dim());
        let scale = F::lit(1.0 / (hd as f64).sqrt());

        let tok = self.p(&self.layout.tok);
        let pos = self.p(&self.layout.pos);
        let mut x = vec![F::zero(); t * d];
        for (i, &id) in ids.iter().enumerate() {
            let row = &mut x[i * d..(i + 1) * d];
            let te = &tok[id as usize * d..(id as usize + 1) * d];
            let pe = &pos[i * d..(i + 1) * d];
            for k in 0..d {
                row[k] = te[k] + pe[k];
            }
        }

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for slots in &self.layout.layers {
            let mut ln1 = LnCache::new(t, d);
            let mut h1 = vec![F::zero(); t * d];
            layer_norm(&x, self.p(&slots.ln1_g), self.p(&slots.ln1_b), d, &mut h1, &mut ln1.xhat, &mut ln1.rstd);
            let mut qkv = vec![F::zero(); t * 3 * d];
            linear(&h1, self.p(&slots.w_qkv), self.p(&slots.b_qkv), t, d, 3 * d, &mut qkv);

            let mut probs = vec![F::zero(); nh * t * t];
            let mut att = vec![F::zero(); t * d];
            for h in 0..nh {
                for q in 0..t {
                    let qv = &qkv[q * 3 * d + h * hd..q * 3 * d + (h + 1) * hd];
                    let prow = &mut probs[(h * t + q) * t..(h * t + q) * t + q + 1];
                    for (s, p) in prow.iter_mut().enumerate() {
                        let kv = &qkv[s * 3 * d + d + h * hd..s * 3 * d + d + (h + 1) * hd];
                        *p = dot(qv, kv) * scale;
                    }
                    softmax_in_place(prow);
                    let out = &mut att[q * d + h * hd..q * d + (h + 1) * hd];
                    for (s, &p) in prow.iter().enumerate() {
                        let vv = &qkv[s * 3 * d + 2 * d + h * hd..s * 3 * d + 2 * d + (h + 1) * hd];
                        axpy(out, p, vv);
                    }
                }
            }
            let mut o = vec![F::zero(); t * d];
            linear(&att, self.p(&slots.w_o), self.p(&slots.b_o), t, d, d, &mut o);
            for (xi, oi) in x.iter_mut().zip(&o) {
                *xi += *oi;
            }

            let mut ln2 = LnCache::new(t, d);
            let mut h2 = vec![F::zero(); t * d];
            layer_norm(&x, self.p(&slots.ln2_g), self.p(&slots.ln2_b), d, &mut h2, &mut ln2.xhat, &mut ln2.rstd);
            let mut pre = vec![F::zero(); t * f];
            linear(&h2, self.p(&slots.w_fc1), self.p(&slots.b_fc1), t, d, f, &mut pre);
            let act: Vec<F> = pre.iter().map(|&v| gelu(v)).collect();
            linear(&act, self.p(&slots.w_fc2), self.p(&slots.b_fc2), t, f, d, &mut o);
            for (xi, oi) in x.iter_mut().zip(&o) {
                *xi += *oi;
            }
            layers.push(LayerCache {
                ln1,
                h1,
                qkv,
                probs,
                att,
                ln2,
                h2,
                pre,
                act,
            });
        }
        let mut lnf = LnCache::new(t, d);
        let mut hf = vec![F::zero(); t * d];
        layer_norm(&x, self.p(&self.layout.lnf_g), self.p(&self.layout.lnf_b), d, &mut hf, &mut lnf.xhat, &mut lnf.rstd);
        Cache { t, layers, lnf, hf }
    }

    fn logits_row(&self, h: &[F], out: &mut [F]) {
        let v = self.cfg.vocab_size;
        linear(h, self.p(&self.layout.w_out), self.p(&self.layout.b_out), 1, self.cfg.d_model, v, out);
    }

    /// Backward from `dhf` (gradient w.r.t. the final normed hidden states).
    fn backward(&self, ids: &[u32], cache: &Cache<F>, dhf: &[F], grad: &mut [F]) {
        let cfg = &self.cfg;
        let (t, d, f) = (cache.t, cfg.d_model, cfg.d_ff());
        let (nh, hd) = (cfg.n_heads, cfg.head_dim());
        let scale = F::lit(1.0 / (hd as f64).sqrt());
        let lay = &self.layout;

        let mut dx = vec![F::zero(); t * d];
        {
            let (dg, db) = split_pair(grad, &lay.lnf_g, &lay.lnf_b);
            layer_norm_backward(dhf, &cache.lnf.xhat, &cache.lnf.rstd, self.p(&lay.lnf_g), d, &mut dx, dg, db);
        }

        let mut tmp_d = vec![F::zero(); t * d];
        let mut dact = vec![F::zero(); t * f];
        let mut dqkv = vec![F::zero(); t * 3 * d];
        let mut dp = vec![F::zero(); t];
        let mut dq = vec![F::zero(); hd];
        for (slots, lc) in lay.layers.iter().zip(&cache.layers).rev() {
            // MLP branch: x_out = x_mid + fc2(gelu(fc1(ln2(x_mid))))
            {
                let (dw, db) = split_pair(grad, &slots.w_fc2, &slots.b_fc2);
                linear_backward(&lc.act, &dx, self.p(&slots.w_fc2), t, f, d, &mut dact, dw, db);
            }
            for (g, &z) in dact.iter_mut().zip(&lc.pre) {
                *g *= gelu_grad(z);
            }
            {
                let (dw, db) = split_pair(grad, &slots.w_fc1, &slots.b_fc1);
                linear_backward(&lc.h2, &dact, self.p(&slots.w_fc1), t, d, f, &mut tmp_d, dw, db);
            }
            {
                let (dg, db) = split_pair(grad, &slots.ln2_g, &slots.ln2_b);
                layer_norm_backward(&tmp_d, &lc.ln2.xhat, &lc.ln2.rstd, self.p(&slots.ln2_g), d, &mut dx, dg, db);
            }

            // attention branch: x_mid = x_in + w_o(attn(qkv(ln1(x_in))))
            let mut datt = vec![F::zero(); t * d];
            {
                let (dw, db) = split_pair(grad, &slots.w_o, &slots.b_o);
                linear_backward(&lc.att, &dx, self.p(&slots.w_o), t, d, d, &mut datt, dw, db);
            }
            dqkv.iter_mut().for_each(|g| *g = F::zero());
            for h in 0..nh {
                for q in 0..t {
                    let prow = &lc.probs[(h * t + q) * t..(h * t + q) * t + q + 1];
                    let dout = &datt[q * d + h * hd..q * d + (h + 1) * hd];
                    let mut weighted = F::zero();
                    for s in 0..=q {
                        let vo = s * 3 * d + 2 * d + h * hd;
                        dp[s] = dot(dout, &lc.qkv[vo..vo + hd]);
                        weighted += prow[s] * dp[s];
                        axpy(&mut dqkv[vo..vo + hd], prow[s], dout);
                    }
                    let qo = q * 3 * d + h * hd;
                    dq.iter_mut().for_each(|g| *g = F::zero());
                    for s in 0..=q {
                        let ds = prow[s] * (dp[s] - weighted) * scale;
                        let ko = s * 3 * d + d + h * hd;
                        axpy(&mut dq, ds, &lc.qkv[ko..ko + hd]);
                        axpy(&mut dqkv[ko..ko + hd], ds, &lc.qkv[qo..qo + hd]);
                    }
                    for (g, &v) in dqkv[qo..qo + hd].iter_mut().zip(&dq) {
                        *g += v;
                    }
                }
            }
            {
                let (dw, db) = split_pair(grad, &slots.w_qkv, &slots.b_qkv);
                linear_backward(&lc.h1, &dqkv, self.p(&slots.w_qkv), t, d, 3 * d, &mut tmp_d, dw, db);
            }
            {
                let (dg, db) = split_pair(grad, &slots.ln1_g, &slots.ln1_b);
                layer_norm_backward(&tmp_d, &lc.ln1.xhat, &lc.ln1.rstd, self.p(&slots.ln1_g), d, &mut dx, dg, db);
            }
        }

        for (i, &id) in ids.iter().enumerate() {
            let row = &dx[i * d..(i + 1) * d];
            let te = lay.tok.start + id as usize * d;
            for (g, &v) in grad[te..te + d].iter_mut().zip(row) {
                *g += v;
            }
            let pe = lay.pos.start + i * d;
            for (g, &v) in grad[pe..pe + d].iter_mut().zip(row) {
                *g += v;
            }
        }
    }

    /// Weighted next-token NLL over completion positions of one sequence,
    /// accumulating `scale ·` its gradient into `grad`. Returns
    /// `Σ w_l · nll_l` (unscaled).
    pub fn accumulate_sequence(&self, seq: &TokenSequence, weights: &[f64], scale: f64, grad: &mut [F]) -> Result<f64> {
        self.check_ids(&seq.ids)?;
        if weights.len() != seq.len() || seq.completion_mask.len() != seq.len() {
            return Err(Error::ShapeMismatch("weights and mask must match the sequence length".into()));
        }
        let cache = self.forward(&seq.ids);
        let (d, v) = (self.cfg.d_model, self.cfg.vocab_size);
        let mut dhf = vec![F::zero(); cache.t * d];
        let mut logits = vec![F::zero(); v];
        let mut total = 0.0;
        for target in 1..seq.len() {
            if !seq.completion_mask[target] {
                continue;
            }
            let src = target - 1;
            let h = &cache.hf[src * d..(src + 1) * d];
            self.logits_row(h, &mut logits);
            let id = seq.ids[target] as usize;
            let raw = logits[id];
            let lse = softmax_in_place(&mut logits);
            let w = weights[target];
            let nll = (lse - raw).as_f64();
            total += w * nll;
            let g = F::lit(w * scale);
            logits[id] -= F::one();
            for l in logits.iter_mut() {
                *l *= g;
            }
            let (dw, db) = split_pair(grad, &self.layout.w_out, &self.layout.b_out);
            let dh = &mut dhf[src * d..(src + 1) * d];
            linear_backward(h, &logits, self.p(&self.layout.w_out), 1, d, v, dh, dw, db);
        }
        self.backward(&seq.ids, &cache, &dhf, grad);
        Ok(total)
    }

    /// Mean weighted completion NLL over a batch and its exact gradient.
    pub fn loss_and_grad(&self, batch: &[TokenSequence], weights: &[Vec<f64>]) -> Result<(f64, Vec<F>)> {
        let mut grad = vec![F::zero(); self.params.len()];
        let loss = self.loss_and_grad_into(batch, weights, &mut grad)?;
        Ok((loss, grad))
    }

    pub fn loss_and_grad_into(&self, batch: &[TokenSequence], weights: &[Vec<f64>], grad: &mut [F]) -> Result<f64> {
        if batch.len() != weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} sequences but {} weight vectors",
                batch.len(),
                weights.len()
            )));
        }
        let count: usize = batch
            .iter()
            .map(|s| s.completion_mask.iter().skip(1).filter(|&&m| m).count())
            .sum();
        if count == 0 {
            return Err(Error::ShapeMismatch("batch has no completion tokens".into()));
        }
        let scale = 1.0 / count as f64;
        let mut total = 0.0;
        for (seq, w) in batch.iter().zip(weights) {
            total += self.accumulate_sequence(seq, w, scale, grad)?;
        }
        Ok(total * scale)
    }

    /// Mean weighted completion NLL without gradients.
    pub fn loss(&self, batch: &[TokenSequence], weights: &[Vec<f64>]) -> Result<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (seq, w) in batch.iter().zip(weights) {
            let lp = self.completion_log_probs(seq)?;
            for (k, l) in lp.iter().enumerate() {
                sum += w[seq.prompt_len + k] * -l;
            }
            count += lp.len();
        }
        Ok(sum / count as f64)
    }

    /// `log p(token_l | prefix)` for every completion position, via the full forward pass.
    pub fn completion_log_probs(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        self.check_ids(&seq.ids)?;
        if seq.prompt_len == 0 {
            return Err(Error::ShapeMismatch("sequence needs at least one prompt token".into()));
        }
        let cache = self.forward(&seq.ids);
        let d = self.cfg.d_model;
        let mut logits = vec![F::zero(); self.cfg.vocab_size];
        let mut out = Vec::with_capacity(seq.completion_len());
        for target in seq.prompt_len..seq.len() {
            let src = target - 1;
            self.logits_row(&cache.hf[src * d..(src + 1) * d], &mut logits);
            out.push(log_softmax_at(&mut logits, seq.ids[target] as usize));
        }
        Ok(out)
    }

    /// Next-token distribution at every position (for normalisation checks).
    pub fn next_token_distributions(&self, ids: &[u32]) -> Result<Vec<Vec<f64>>> {
        self.check_ids(ids)?;
        let cache = self.forward(ids);
        let d = self.cfg.d_model;
        let mut logits = vec![F::zero(); self.cfg.vocab_size];
        Ok((0..ids.len())
            .map(|i| {
                self.logits_row(&cache.hf[i * d..(i + 1) * d], &mut logits);
                softmax_in_place(&mut logits);
                logits.iter().map(|p| p.as_f64()).collect()
            })
            .collect())
    }

    pub fn start_decode(&self) -> DecodeState<F> {
        let n = self.cfg.context_length * self.cfg.d_model;
        DecodeState {
            pos: 0,
            keys: vec![vec![F::zero(); n]; self.cfg.n_layers],
            values: vec![vec![F::zero(); n]; self.cfg.n_layers],
            logits: vec![F::zero(); self.cfg.vocab_size],
        }
    }

    /// Feeds one token and leaves next-token logits in `state.logits()`.
    pub fn decode_step(&self, state: &mut DecodeState<F>, token: u32) -> Result<()> {
        let cfg = &self.cfg;
        if state.pos >= cfg.context_length {
            return Err(Error::ShapeMismatch("decode ran past the context length".into()));
        }
        if token as usize >= cfg.vocab_size {
            return Err(Error::ShapeMismatch(format!("token id {token} outside vocabulary")));
        }
        let (d, f, nh, hd) = (cfg.d_model, cfg.d_ff(), cfg.n_heads, cfg.head_dim());
        let scale = F::lit(1.0 / (hd as f64).sqrt());
        let p = state.pos;
        let tok = self.p(&self.layout.tok);
        let pos = self.p(&self.layout.pos);
        let mut x: Vec<F> = (0..d)
            .map(|k| tok[token as usize * d + k] + pos[p * d + k])
            .collect();
        let mut h = vec![F::zero(); d];
        let mut xhat = vec![F::zero(); d];
        let mut rstd = vec![F::zero(); 1];
        let mut qkv = vec![F::zero(); 3 * d];
        let mut att = vec![F::zero(); d];
        let mut o = vec![F::zero(); d];
        let mut pre = vec![F::zero(); f];
        let mut scores = vec![F::zero(); p + 1];
        for (l, slots) in self.layout.layers.iter().enumerate() {
            layer_norm(&x, self.p(&slots.ln1_g), self.p(&slots.ln1_b), d, &mut h, &mut xhat, &mut rstd);
            linear(&h, self.p(&slots.w_qkv), self.p(&slots.b_qkv), 1, d, 3 * d, &mut qkv);
            state.keys[l][p * d..(p + 1) * d].copy_from_slice(&qkv[d..2 * d]);
            state.values[l][p * d..(p + 1) * d].copy_from_slice(&qkv[2 * d..]);
            att.iter_mut().for_each(|a| *a = F::zero());
            for head in 0..nh {
                let qv = &qkv[head * hd..(head + 1) * hd];
                for (s, sc) in scores.iter_mut().enumerate() {
                    *sc = dot(qv, &state.keys[l][s * d + head * hd..s * d + (head + 1) * hd]) * scale;
                }
                softmax_in_place(&mut scores);
                let out = &mut att[head * hd..(head + 1) * hd];
                for (s, &w) in scores.iter().enumerate() {
                    axpy(out, w, &state.values[l][s * d + head * hd..s * d + (head + 1) * hd]);
                }
            }
            linear(&att, self.p(&slots.w_o), self.p(&slots.b_o), 1, d, d, &mut o);
            for (xi, oi) in x.iter_mut().zip(&o) {
                *xi += *oi;
            }
            layer_norm(&x, self.p(&slots.ln2_g), self.p(&slots.ln2_b), d, &mut h, &mut xhat, &mut rstd);
            linear(&h, self.p(&slots.w_fc1), self.p(&slots.b_fc1), 1, d, f, &mut pre);
            for v in pre.iter_mut() {
                *v = gelu(*v);
            }
            linear(&pre, self.p(&slots.w_fc2), self.p(&slots.b_fc2), 1, f, d, &mut o);
            for (xi, oi) in x.iter_mut().zip(&o) {
                *xi += *oi;
            }
        }
        layer_norm(&x, self.p(&self.layout.lnf_g), self.p(&self.layout.lnf_b), d, &mut h, &mut xhat, &mut rstd);
        let mut logits = std::mem::take(&mut state.logits);
        self.logits_row(&h, &mut logits);
        state.logits = logits;
        state.pos += 1;
        Ok(())
    }
}

/// `log softmax(logits)[id]`, computed stably in `f64`.
pub fn log_softmax_at<F: Real>(logits: &mut [F], id: usize) -> f64 {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max).as_f64();
    let sum: f64 = logits.iter().map(|l| (l.as_f64() - max).exp()).sum();
    logits[id].as_f64() - max - sum.ln()
}

/// Two disjoint mutable views into the gradient vector.
fn split_pair<'a, F>(grad: &'a mut [F], a: &Range<usize>, b: &Range<usize>) -> (&'a mut [F], &'a mut [F]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = grad.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}
