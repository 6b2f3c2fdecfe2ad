//! Segment-wise transformer encoding with optional bridging between
//! consecutive segments.

mod vocab;

use std::path::PathBuf;

use coref_autograd::{Graph, Mat, ParamGroup, ParamId, ParamStore, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{segment_document, Document, SegmentStrategy};
use crate::error::{CorefError, Result};
use crate::nn::{LayerNorm, Linear, MultiHeadAttention};

pub use vocab::Vocab;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    ToyTransformer,
    /// Same architecture, weights loaded from `pretrained_path`.
    Pretrained,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bridging {
    None,
    LbmFc,
    LbmMha,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_h: usize,
    pub backend: Backend,
    pub pretrained_path: Option<PathBuf>,
    pub bridging: Bridging,
    pub mha_heads: usize,
    /// Encoder window `T`, counting the CLS and SEP positions.
    pub window: usize,
    pub strategy: SegmentStrategy,
    pub layers: usize,
    pub attention_heads: usize,
    pub ffn_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_h: 64,
            backend: Backend::ToyTransformer,
            pretrained_path: None,
            bridging: Bridging::LbmFc,
            mha_heads: 4,
            window: 512,
            strategy: SegmentStrategy::Independent,
            layers: 2,
            attention_heads: 4,
            ffn_dim: 128,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CorefError::Config(msg));
        if self.d_h == 0 || self.ffn_dim == 0 {
            return fail("d_h and ffn_dim must be positive".into());
        }
        if self.window < 3 {
            return fail(format!("window {} leaves no room for tokens besides CLS/SEP", self.window));
        }
        if self.attention_heads == 0 || self.d_h % self.attention_heads != 0 {
            return fail(format!("d_h {} not divisible by attention_heads {}", self.d_h, self.attention_heads));
        }
        if self.bridging == Bridging::LbmMha && (self.mha_heads == 0 || self.d_h % self.mha_heads != 0) {
            return fail(format!("d_h {} not divisible by mha_heads {}", self.d_h, self.mha_heads));
        }
        if self.bridging != Bridging::None && self.strategy == SegmentStrategy::Overlapping {
            return fail("bridging requires the independent segmentation strategy".into());
        }
        if self.backend == Backend::Pretrained && self.pretrained_path.is_none() {
            return fail("pretrained backend needs pretrained_path".into());
        }
        Ok(())
    }
}

/// Token representations, one row per position.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenMatrix {
    values: Mat,
}

impl HiddenMatrix {
    pub fn new(values: Mat) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CorefError::Validation("hidden matrix has non-finite entries".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Mat {
        &self.values
    }

    pub fn into_values(self) -> Mat {
        self.values
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn d_h(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    attn: MultiHeadAttention,
    ln1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    ln2: LayerNorm,
}

#[derive(Clone, Copy, Debug)]
pub enum Bridge {
    Fc { fc: Linear, ln: LayerNorm },
    Mha { mha: MultiHeadAttention, ln: LayerNorm },
}

impl Bridge {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        kind: Bridging,
        d_h: usize,
        heads: usize,
        rng: &mut R,
    ) -> Option<Self> {
        let group = ParamGroup::Heads;
        match kind {
            Bridging::None => None,
            Bridging::LbmFc => Some(Bridge::Fc {
                fc: Linear::new(store, "lbm.fc", 2 * d_h, d_h, group, rng),
                ln: LayerNorm::new(store, "lbm.ln", d_h, group),
            }),
            Bridging::LbmMha => Some(Bridge::Mha {
                mha: MultiHeadAttention::new(store, "lbm.mha", d_h, heads, group, rng),
                ln: LayerNorm::new(store, "lbm.ln", d_h, group),
            }),
        }
    }

    /// Mixes the previous segment's SEP row (`1 x d_h`) into every row of
    /// `h_next` and renormalises. The output has the shape of `h_next`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, h_sep: Var, h_next: Var) -> Result<Var> {
        let (rows, d) = g.shape(h_next);
        if g.shape(h_sep) != (1, d) {
            return Err(CorefError::Shape(coref_autograd::GradError::Shape {
                op: "bridge",
                lhs: g.shape(h_sep),
                rhs: (rows, d),
            }));
        }
        let (hat, ln) = match self {
            Bridge::Fc { fc, ln } => {
                let rep = g.repeat_row(h_sep, rows)?;
                let cat = g.concat_cols(&[rep, h_next])?;
                (fc.forward(g, store, cat)?, ln)
            }
            Bridge::Mha { mha, ln } => (mha.forward(g, store, h_next, h_sep)?, ln),
        };
        let res = g.add(hat, h_next)?;
        ln.forward(g, store, res)
    }

    pub fn params(&self) -> Vec<ParamId> {
        match self {
            Bridge::Fc { fc, ln } => fc.params().into_iter().chain(ln.params()).collect(),
            Bridge::Mha { mha, ln } => mha.params().into_iter().chain(ln.params()).collect(),
        }
    }
}

/// Small post-norm transformer over word ids.
#[derive(Clone, Debug)]
pub struct Encoder {
    cfg: EncoderConfig,
    tok_emb: ParamId,
    pos_emb: ParamId,
    emb_ln: LayerNorm,
    layers: Vec<Layer>,
    bridge: Option<Bridge>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &EncoderConfig, vocab_size: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let group = ParamGroup::Encoder;
        let d = cfg.d_h;
        let tok_emb = store.uniform("encoder.tok_emb", vocab_size, d, 0.1, group, rng);
        let pos_emb = store.uniform("encoder.pos_emb", cfg.window, d, 0.1, group, rng);
        let emb_ln = LayerNorm::new(store, "encoder.emb_ln", d, group);
        let layers = (0..cfg.layers)
            .map(|i| {
                let p = format!("encoder.layer{i}");
                Layer {
                    attn: MultiHeadAttention::new(store, &format!("{p}.attn"), d, cfg.attention_heads, group, rng),
                    ln1: LayerNorm::new(store, &format!("{p}.ln1"), d, group),
                    ff1: Linear::new(store, &format!("{p}.ff1"), d, cfg.ffn_dim, group, rng),
                    ff2: Linear::new(store, &format!("{p}.ff2"), cfg.ffn_dim, d, group, rng),
                    ln2: LayerNorm::new(store, &format!("{p}.ln2"), d, group),
                }
            })
            .collect();
        let bridge = Bridge::new(store, cfg.bridging, d, cfg.mha_heads, rng);
        Ok(Self { cfg: cfg.clone(), tok_emb, pos_emb, emb_ln, layers, bridge })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn bridge(&self) -> Option<&Bridge> {
        self.bridge.as_ref()
    }

    /// Encodes `[CLS] ids [SEP]`; the result has `ids.len() + 2` rows.
    pub fn encode_segment(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        let max = self.cfg.window - 2;
        if ids.len() > max {
            return Err(CorefError::SegmentTooLong { len: ids.len(), max });
        }
        let mut full = Vec::with_capacity(ids.len() + 2);
        full.push(Vocab::CLS);
        full.extend_from_slice(ids);
        full.push(Vocab::SEP);
        let positions: Vec<usize> = (0..full.len()).collect();

        let tok = g.param(store, self.tok_emb);
        let pos = g.param(store, self.pos_emb);
        let te = g.select_rows(tok, &full);
        let pe = g.select_rows(pos, &positions);
        let x = g.add(te, pe)?;
        let mut x = self.emb_ln.forward(g, store, x)?;
        for layer in &self.layers {
            let a = layer.attn.forward(g, store, x, x)?;
            let r = g.add(x, a)?;
            let h = layer.ln1.forward(g, store, r)?;
            let f = layer.ff1.forward(g, store, h)?;
            let f = g.gelu(f);
            let f = layer.ff2.forward(g, store, f)?;
            let r = g.add(h, f)?;
            x = layer.ln2.forward(g, store, r)?;
        }
        Ok(x)
    }

    /// Encodes a whole document into an `M x d_h` node.
    ///
    /// Segments are processed left to right. With bridging enabled, each
    /// segment after the first is passed through the bridge together with
    /// the (already bridged) SEP row of its predecessor. Under the
    /// overlapping strategy each token keeps the row of the first segment
    /// that contains it.
    pub fn encode_document(&self, g: &mut Graph, store: &ParamStore, doc: &Document, vocab: &Vocab) -> Result<Var> {
        let ids = vocab.encode(&doc.tokens);
        let segments = segment_document(doc, self.cfg.strategy, self.cfg.window)?;
        let mut pieces = Vec::with_capacity(segments.len());
        let mut covered = 0;
        let mut prev_sep: Option<Var> = None;
        for seg in &segments {
            let range = seg.token_range.clone();
            let m = range.len();
            let mut h = self.encode_segment(g, store, &ids[range.clone()])?;
            if let (Some(bridge), Some(sep)) = (&self.bridge, prev_sep) {
                h = bridge.forward(g, store, sep, h)?;
            }
            prev_sep = Some(g.slice_rows(h, m + 1, m + 2));
            if range.end > covered {
                let first_new = covered.max(range.start) - range.start;
                pieces.push(g.slice_rows(h, 1 + first_new, 1 + m));
                covered = range.end;
            }
        }
        Ok(if pieces.len() == 1 { pieces[0] } else { g.concat_rows(&pieces)? })
    }

    /// Inference helper: [`Encoder::encode_document`] on a fresh tape.
    pub fn hidden(&self, store: &ParamStore, doc: &Document, vocab: &Vocab) -> Result<HiddenMatrix> {
        let mut g = Graph::new();
        let h = self.encode_document(&mut g, store, doc, vocab)?;
        HiddenMatrix::new(g.value(h).clone())
    }
}
