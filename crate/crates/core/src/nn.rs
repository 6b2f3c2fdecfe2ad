//! Parameterised layers built on the autograd tape.

use coref_autograd::{Graph, ParamGroup, ParamId, ParamStore, Var};
use rand::Rng;

use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Glorot-initialised weight (`d_in x d_out`) and zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        group: ParamGroup,
        rng: &mut R,
    ) -> Self {
        let w = store.glorot(format!("{name}.w"), d_in, d_out, group, rng);
        let b = store.zeros(format!("{name}.b"), 1, d_out, group);
        Self { w, b, d_in, d_out }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(x, w)?;
        Ok(g.add_row(y, b)?)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

/// One hidden layer with GELU.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
        group: ParamGroup,
        rng: &mut R,
    ) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), d_in, d_hidden, group, rng),
            out: Linear::new(store, &format!("{name}.out"), d_hidden, d_out, group, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.hidden.forward(g, store, x)?;
        let h = g.gelu(h);
        self.out.forward(g, store, h)
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.hidden.w, self.hidden.b, self.out.w, self.out.b]
    }
}

/// Row-wise layer normalisation with a learnable scale and shift.
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize, group: ParamGroup) -> Self {
        Self {
            gamma: store.ones(format!("{name}.gamma"), 1, dim, group),
            beta: store.zeros(format!("{name}.beta"), 1, dim, group),
            eps: Self::EPS,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let n = g.normalize_rows(x, self.eps);
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let y = g.mul_row(n, gamma)?;
        Ok(g.add_row(y, beta)?)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.gamma, self.beta]
    }
}

/// Scaled dot-product attention split across `heads`.
#[derive(Clone, Copy, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        group: ParamGroup,
        rng: &mut R,
    ) -> Self {
        assert!(heads > 0 && dim % heads == 0, "{dim} not divisible by {heads} heads");
        Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, group, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, group, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, group, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, group, rng),
            heads,
        }
    }

    /// Rows of `queries` attend over rows of `memory`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, queries: Var, memory: Var) -> Result<Var> {
        let q = self.q.forward(g, store, queries)?;
        let k = self.k.forward(g, store, memory)?;
        let v = self.v.forward(g, store, memory)?;
        let dim = self.q.d_out;
        let dk = dim / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * dk, (h + 1) * dk);
            let qh = g.slice_cols(q, lo, hi);
            let kh = g.slice_cols(k, lo, hi);
            let vh = g.slice_cols(v, lo, hi);
            let scores = g.matmul_t(qh, kh)?;
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores);
            outs.push(g.matmul(attn, vh)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        self.o.forward(g, store, cat)
    }

    pub fn params(&self) -> Vec<ParamId> {
        [self.q, self.k, self.v, self.o].iter().flat_map(|l| l.params()).collect()
    }
}
