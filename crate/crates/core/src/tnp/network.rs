//! GPT-style transformer over point tokens with hand-written reverse mode.
//!
//! All parameters live in one flat `f64` buffer; layers hold offsets into it.
//! Every row of every activation matrix is computed from its own input row
//! (plus the attention keys it may see) in a fixed order, so the value at one
//! token never depends on tokens it cannot attend to, bit for bit.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

const LN_EPS: f64 = 1e-5;
pub(crate) const VAR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

#[derive(Debug, Clone, Copy)]
struct LayerNorm {
    g: usize,
    b: usize,
    dim: usize,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

/// Shape of the network plus the offsets of every tensor in the flat buffer.
#[derive(Debug, Clone)]
pub struct Network {
    embed: Vec<Linear>,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    head: [Linear; 2],
    model_dim: usize,
    heads: usize,
    specs: Vec<TensorSpec>,
    n_params: usize,
}

struct Builder {
    specs: Vec<TensorSpec>,
    offset: usize,
}

impl Builder {
    fn tensor(&mut self, name: String, shape: Vec<usize>) -> usize {
        let off = self.offset;
        let spec = TensorSpec { name, shape, offset: off };
        self.offset += spec.len();
        self.specs.push(spec);
        off
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let w = self.tensor(format!("{name}.weight"), vec![fan_out, fan_in]);
        let b = self.tensor(format!("{name}.bias"), vec![fan_out]);
        Linear { w, b, fan_in, fan_out }
    }

    fn layer_norm(&mut self, name: &str, dim: usize) -> LayerNorm {
        let g = self.tensor(format!("{name}.gain"), vec![dim]);
        let b = self.tensor(format!("{name}.bias"), vec![dim]);
        LayerNorm { g, b, dim }
    }
}

/// Architecture hyperparameters needed to lay out the network.
#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub input_dim: usize,
    pub model_dim: usize,
    pub embed_layers: usize,
    pub ff_dim: usize,
    pub heads: usize,
    pub layers: usize,
}

impl Network {
    pub fn new(shape: Shape) -> Self {
        let mut b = Builder { specs: Vec::new(), offset: 0 };
        let d = shape.model_dim;
        let embed = (0..shape.embed_layers.max(1))
            .map(|i| b.linear(&format!("embed.{i}"), if i == 0 { shape.input_dim } else { d }, d))
            .collect();
        let blocks = (0..shape.layers)
            .map(|i| Block {
                ln1: b.layer_norm(&format!("block.{i}.ln1"), d),
                q: b.linear(&format!("block.{i}.attn.q"), d, d),
                k: b.linear(&format!("block.{i}.attn.k"), d, d),
                v: b.linear(&format!("block.{i}.attn.v"), d, d),
                o: b.linear(&format!("block.{i}.attn.o"), d, d),
                ln2: b.layer_norm(&format!("block.{i}.ln2"), d),
                ff1: b.linear(&format!("block.{i}.ff.0"), d, shape.ff_dim),
                ff2: b.linear(&format!("block.{i}.ff.1"), shape.ff_dim, d),
            })
            .collect();
        let ln_f = b.layer_norm("final_ln", d);
        let head = [b.linear("head.0", d, d), b.linear("head.1", d, 2)];
        Network { embed, blocks, ln_f, head, model_dim: d, heads: shape.heads, n_params: b.offset, specs: b.specs }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    /// PyTorch-style initialization: uniform in `+-1/sqrt(fan_in)`, unit
    /// layer-norm gains, and a damped output layer.
    pub fn init(&self, rng: &mut Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params];
        let mut lin = |l: &Linear, scale: f64, p: &mut Vec<f64>| {
            let bound = scale / (l.fan_in as f64).sqrt();
            for v in &mut p[l.w..l.w + l.fan_in * l.fan_out] {
                *v = rng.random_range(-bound..bound);
            }
            for v in &mut p[l.b..l.b + l.fan_out] {
                *v = rng.random_range(-bound..bound) * 0.1;
            }
        };
        for l in &self.embed {
            lin(l, 1.0, &mut p);
        }
        for blk in &self.blocks {
            for l in [&blk.q, &blk.k, &blk.v, &blk.o, &blk.ff1, &blk.ff2] {
                lin(l, 1.0, &mut p);
            }
        }
        lin(&self.head[0], 1.0, &mut p);
        lin(&self.head[1], 0.1, &mut p);
        let mut ln = |l: &LayerNorm| p[l.g..l.g + l.dim].iter_mut().for_each(|v| *v = 1.0);
        for blk in &self.blocks {
            ln(&blk.ln1);
            ln(&blk.ln2);
        }
        ln(&self.ln_f);
        p
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators keep the loop vectorizable; order is fixed per row
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

impl Linear {
    fn forward(&self, p: &[f64], x: &Mat) -> Mat {
        debug_assert_eq!(x.cols, self.fan_in);
        let mut y = Mat::zeros(x.rows, self.fan_out);
        let w = &p[self.w..self.w + self.fan_in * self.fan_out];
        let b = &p[self.b..self.b + self.fan_out];
        for i in 0..x.rows {
            let xi = x.row(i);
            let yi = y.row_mut(i);
            for o in 0..self.fan_out {
                yi[o] = b[o] + dot(xi, &w[o * self.fan_in..(o + 1) * self.fan_in]);
            }
        }
        y
    }

    fn backward(&self, p: &[f64], x: &Mat, dy: &Mat, g: &mut [f64]) -> Mat {
        let (fi, fo) = (self.fan_in, self.fan_out);
        let w = &p[self.w..self.w + fi * fo];
        let mut dx = Mat::zeros(x.rows, fi);
        for i in 0..x.rows {
            let xi = x.row(i);
            let dyi = dy.row(i);
            let dxi = &mut dx.data[i * fi..(i + 1) * fi];
            for o in 0..fo {
                let d = dyi[o];
                if d == 0.0 {
                    continue;
                }
                g[self.b + o] += d;
                let gw = &mut g[self.w + o * fi..self.w + (o + 1) * fi];
                let wo = &w[o * fi..(o + 1) * fi];
                for k in 0..fi {
                    gw[k] += d * xi[k];
                    dxi[k] += d * wo[k];
                }
            }
        }
        dx
    }
}

struct LnCache {
    xhat: Mat,
    rstd: Vec<f64>,
}

impl LayerNorm {
    fn forward(&self, p: &[f64], x: &Mat) -> (Mat, LnCache) {
        let n = self.dim as f64;
        let g = &p[self.g..self.g + self.dim];
        let b = &p[self.b..self.b + self.dim];
        let mut y = Mat::zeros(x.rows, x.cols);
        let mut xhat = Mat::zeros(x.rows, x.cols);
        let mut rstd = Vec::with_capacity(x.rows);
        for i in 0..x.rows {
            let xi = x.row(i);
            let mean = xi.iter().sum::<f64>() / n;
            let var = xi.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let r = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(r);
            let hi = xhat.row_mut(i);
            for k in 0..self.dim {
                hi[k] = (xi[k] - mean) * r;
            }
            let yi = &mut y.data[i * self.dim..(i + 1) * self.dim];
            for k in 0..self.dim {
                yi[k] = g[k] * xhat.data[i * self.dim + k] + b[k];
            }
        }
        (y, LnCache { xhat, rstd })
    }

    fn backward(&self, p: &[f64], cache: &LnCache, dy: &Mat, grads: &mut [f64]) -> Mat {
        let n = self.dim as f64;
        let g = &p[self.g..self.g + self.dim];
        let mut dx = Mat::zeros(dy.rows, dy.cols);
        let mut dxhat = vec![0.0; self.dim];
        for i in 0..dy.rows {
            let dyi = dy.row(i);
            let xh = cache.xhat.row(i);
            for k in 0..self.dim {
                grads[self.g + k] += dyi[k] * xh[k];
                grads[self.b + k] += dyi[k];
                dxhat[k] = dyi[k] * g[k];
            }
            let m1 = dxhat.iter().sum::<f64>() / n;
            let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
            let r = cache.rstd[i];
            let dxi = dx.row_mut(i);
            for k in 0..self.dim {
                dxi[k] = r * (dxhat[k] - m1 - xh[k] * m2);
            }
        }
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn gelu_mat(x: &Mat) -> Mat {
    Mat { rows: x.rows, cols: x.cols, data: x.data.iter().map(|v| gelu(*v)).collect() }
}

fn gelu_back(pre: &Mat, dy: &Mat) -> Mat {
    Mat {
        rows: dy.rows,
        cols: dy.cols,
        data: pre.data.iter().zip(&dy.data).map(|(x, d)| d * gelu_grad(*x)).collect(),
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct AttnCache {
    q: Mat,
    k: Mat,
    v: Mat,
    /// Softmax weights per (token, head), aligned with `keys[token]`.
    probs: Vec<Vec<f64>>,
}

struct BlockCache {
    ln1_out: Mat,
    ln1: LnCache,
    attn: AttnCache,
    attn_out: Mat,
    drop1: Option<Vec<f64>>,
    ln2_out: Mat,
    ln2: LnCache,
    ff_pre: Mat,
    ff_act: Mat,
    drop2: Option<Vec<f64>>,
}

/// Activations kept for the backward pass.
pub struct Cache {
    tokens: Mat,
    embed_pre: Vec<Mat>,
    embed_in: Vec<Mat>,
    blocks: Vec<BlockCache>,
    ln_f: LnCache,
    head_in: Mat,
    head_pre: Mat,
    head_act: Mat,
    /// Rows of the token matrix the Gaussian head is read from.
    out_rows: Vec<usize>,
    raw: Mat,
}

/// Predicted Gaussian per output row, in model (standardized) units.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    raw_var: Vec<f64>,
}

impl Network {
    fn attention(&self, blk: &Block, p: &[f64], x: &Mat, keys: &[Vec<u32>]) -> (Mat, AttnCache) {
        let q = blk.q.forward(p, x);
        let k = blk.k.forward(p, x);
        let v = blk.v.forward(p, x);
        let h = self.heads;
        let dh = self.model_dim / h;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Mat::zeros(x.rows, self.model_dim);
        let mut probs = Vec::with_capacity(x.rows * h);
        for i in 0..x.rows {
            let ks = &keys[i];
            for head in 0..h {
                let lo = head * dh;
                let qi = &q.row(i)[lo..lo + dh];
                let mut s: Vec<f64> = ks.iter().map(|&j| dot(qi, &k.row(j as usize)[lo..lo + dh]) * scale).collect();
                let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for sj in &mut s {
                    *sj = (*sj - m).exp();
                    z += *sj;
                }
                for sj in &mut s {
                    *sj /= z;
                }
                let oi = &mut out.data[i * self.model_dim + lo..i * self.model_dim + lo + dh];
                for (pj, &j) in s.iter().zip(ks) {
                    let vj = &v.row(j as usize)[lo..lo + dh];
                    for c in 0..dh {
                        oi[c] += pj * vj[c];
                    }
                }
                probs.push(s);
            }
        }
        (out, AttnCache { q, k, v, probs })
    }

    fn attention_backward(
        &self,
        blk: &Block,
        p: &[f64],
        x: &Mat,
        keys: &[Vec<u32>],
        cache: &AttnCache,
        dout: &Mat,
        g: &mut [f64],
    ) -> Mat {
        let h = self.heads;
        let dh = self.model_dim / h;
        let scale = 1.0 / (dh as f64).sqrt();
        let d = self.model_dim;
        let mut dq = Mat::zeros(x.rows, d);
        let mut dk = Mat::zeros(x.rows, d);
        let mut dv = Mat::zeros(x.rows, d);
        for i in 0..x.rows {
            let ks = &keys[i];
            for head in 0..h {
                let lo = head * dh;
                let pr = &cache.probs[i * h + head];
                let doi = &dout.row(i)[lo..lo + dh];
                let mut dp: Vec<f64> = Vec::with_capacity(ks.len());
                for (pj, &j) in pr.iter().zip(ks) {
                    let j = j as usize;
                    let vj = &cache.v.row(j)[lo..lo + dh];
                    dp.push(dot(doi, vj));
                    let dvj = &mut dv.data[j * d + lo..j * d + lo + dh];
                    for c in 0..dh {
                        dvj[c] += pj * doi[c];
                    }
                }
                let inner: f64 = pr.iter().zip(&dp).map(|(a, b)| a * b).sum();
                let qi: Vec<f64> = cache.q.row(i)[lo..lo + dh].to_vec();
                for ((pj, dpj), &j) in pr.iter().zip(&dp).zip(ks) {
                    let j = j as usize;
                    let ds = pj * (dpj - inner) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &cache.k.data[j * d + lo..j * d + lo + dh];
                    let dqi = &mut dq.data[i * d + lo..i * d + lo + dh];
                    for c in 0..dh {
                        dqi[c] += ds * kj[c];
                    }
                    let dkj = &mut dk.data[j * d + lo..j * d + lo + dh];
                    for c in 0..dh {
                        dkj[c] += ds * qi[c];
                    }
                }
            }
        }
        let mut dx = blk.q.backward(p, x, &dq, g);
        let dxk = blk.k.backward(p, x, &dk, g);
        let dxv = blk.v.backward(p, x, &dv, g);
        for ((a, b), c) in dx.data.iter_mut().zip(&dxk.data).zip(&dxv.data) {
            *a += b + c;
        }
        dx
    }

    /// Runs the network on `tokens`, reading the Gaussian head at `out_rows`.
    /// `keys[i]` lists the token indices row `i` attends to. `dropout` is
    /// `(rate, rng)` during training.
    pub fn forward(
        &self,
        p: &[f64],
        tokens: &Mat,
        keys: &[Vec<u32>],
        out_rows: &[usize],
        mut dropout: Option<(f64, &mut Rng)>,
    ) -> (Outputs, Cache) {
        let mut embed_pre = Vec::new();
        let mut embed_in = Vec::new();
        let mut h = tokens.clone();
        for (i, l) in self.embed.iter().enumerate() {
            let input = if i == 0 { h.clone() } else { gelu_mat(&h) };
            let pre = l.forward(p, &input);
            embed_in.push(input);
            if i + 1 < self.embed.len() {
                embed_pre.push(pre.clone());
            }
            h = pre;
        }
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let input = h;
            let (ln1_out, ln1) = blk.ln1.forward(p, &input);
            let (att, attn) = self.attention(blk, p, &ln1_out, keys);
            let mut attn_out = blk.o.forward(p, &att);
            let drop1 = dropout.as_mut().map(|(rate, rng)| apply_dropout(&mut attn_out, *rate, rng));
            let mut h1 = input;
            h1.data.iter_mut().zip(&attn_out.data).for_each(|(a, b)| *a += b);
            let (ln2_out, ln2) = blk.ln2.forward(p, &h1);
            let ff_pre = blk.ff1.forward(p, &ln2_out);
            let ff_act = gelu_mat(&ff_pre);
            let mut ff_out = blk.ff2.forward(p, &ff_act);
            let drop2 = dropout.as_mut().map(|(rate, rng)| apply_dropout(&mut ff_out, *rate, rng));
            let mut h2 = h1;
            h2.data.iter_mut().zip(&ff_out.data).for_each(|(a, b)| *a += b);
            blocks.push(BlockCache {
                ln1_out,
                ln1,
                attn,
                attn_out: att,
                drop1,
                ln2_out,
                ln2,
                ff_pre,
                ff_act,
                drop2,
            });
            h = h2;
        }
        let mut final_in = Mat::zeros(out_rows.len(), self.model_dim);
        for (r, &i) in out_rows.iter().enumerate() {
            final_in.row_mut(r).copy_from_slice(h.row(i));
        }
        let (head_in, ln_f) = self.ln_f.forward(p, &final_in);
        let head_pre = self.head[0].forward(p, &head_in);
        let head_act = gelu_mat(&head_pre);
        let raw = self.head[1].forward(p, &head_act);
        let mean = (0..raw.rows).map(|i| raw.row(i)[0]).collect();
        let raw_var: Vec<f64> = (0..raw.rows).map(|i| raw.row(i)[1]).collect();
        let var = raw_var.iter().map(|r| softplus(*r) + VAR_FLOOR).collect();
        let cache = Cache {
            tokens: tokens.clone(),
            embed_pre,
            embed_in,
            blocks,
            ln_f,
            head_in,
            head_pre,
            head_act,
            out_rows: out_rows.to_vec(),
            raw,
        };
        (Outputs { mean, var, raw_var }, cache)
    }

    /// Accumulates into `grads` the gradient of a loss whose derivatives with
    /// respect to the predicted mean and variance are `dmean`, `dvar`.
    pub fn backward(&self, p: &[f64], keys: &[Vec<u32>], cache: &Cache, out: &Outputs, dmean: &[f64], dvar: &[f64], grads: &mut [f64]) {
        let mut draw = Mat::zeros(cache.raw.rows, 2);
        for i in 0..cache.raw.rows {
            draw.data[i * 2] = dmean[i];
            draw.data[i * 2 + 1] = dvar[i] * sigmoid(out.raw_var[i]);
        }
        let dact = self.head[1].backward(p, &cache.head_act, &draw, grads);
        let dpre = gelu_back(&cache.head_pre, &dact);
        let dhead_in = self.head[0].backward(p, &cache.head_in, &dpre, grads);
        let dfinal = self.ln_f.backward(p, &cache.ln_f, &dhead_in, grads);
        let n = cache.tokens.rows;
        let mut dh = Mat::zeros(n, self.model_dim);
        for (r, &i) in cache.out_rows.iter().enumerate() {
            dh.row_mut(i).iter_mut().zip(dfinal.row(r)).for_each(|(a, b)| *a += b);
        }
        for (blk, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            // h2 = h1 + drop(ff2(gelu(ff1(ln2(h1)))))
            let mut dff = dh.clone();
            if let Some(mask) = &bc.drop2 {
                dff.data.iter_mut().zip(mask).for_each(|(a, m)| *a *= m);
            }
            let dact = blk.ff2.backward(p, &bc.ff_act, &dff, grads);
            let dpre = gelu_back(&bc.ff_pre, &dact);
            let dln2 = blk.ff1.backward(p, &bc.ln2_out, &dpre, grads);
            let dh1_ln = blk.ln2.backward(p, &bc.ln2, &dln2, grads);
            let mut dh1 = dh;
            dh1.data.iter_mut().zip(&dh1_ln.data).for_each(|(a, b)| *a += b);
            // h1 = input + drop(o(attn(ln1(input))))
            let mut dattn_out = dh1.clone();
            if let Some(mask) = &bc.drop1 {
                dattn_out.data.iter_mut().zip(mask).for_each(|(a, m)| *a *= m);
            }
            let datt = blk.o.backward(p, &bc.attn_out, &dattn_out, grads);
            let dln1 = self.attention_backward(blk, p, &bc.ln1_out, keys, &bc.attn, &datt, grads);
            let dinput_ln = blk.ln1.backward(p, &bc.ln1, &dln1, grads);
            let mut dinput = dh1;
            dinput.data.iter_mut().zip(&dinput_ln.data).for_each(|(a, b)| *a += b);
            dh = dinput;
        }
        for (i, l) in self.embed.iter().enumerate().rev() {
            let dx = l.backward(p, &cache.embed_in[i], &dh, grads);
            if i > 0 {
                dh = gelu_back(&cache.embed_pre[i - 1], &dx);
            }
        }
    }
}

fn apply_dropout(x: &mut Mat, rate: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 - rate;
    let mask: Vec<f64> = (0..x.data.len())
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    x.data.iter_mut().zip(&mask).for_each(|(a, m)| *a *= m);
    mask
}
