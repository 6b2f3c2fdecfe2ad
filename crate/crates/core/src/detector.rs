//! Start-then-end mention detection with span-length regularisation.

use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use coref_autograd::{Graph, ParamGroup, ParamId, ParamStore, Var};
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{eos_distance, Document, Mention, Span};
use crate::encoder::HiddenMatrix;
use crate::error::{CorefError, Result};
use crate::nn::{Linear, Mlp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorMode {
    /// End scored from the concatenated start and end rows.
    Baseline,
    Biaffine,
}

/// Span-length limits for candidate ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HymrConfig {
    /// `None` means unbounded, leaving only the sentence-end limit.
    #[serde(serialize_with = "ser_l_max", deserialize_with = "de_l_max")]
    pub l_max: Option<usize>,
    pub threshold: f64,
}

impl Default for HymrConfig {
    fn default() -> Self {
        Self { l_max: Some(30), threshold: 0.5 }
    }
}

impl HymrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(CorefError::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        Ok(())
    }
}

fn ser_l_max<S: Serializer>(v: &Option<usize>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(n) => s.serialize_u64(*n as u64),
        None => s.serialize_str("inf"),
    }
}

fn de_l_max<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<usize>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        N(u64),
        S(String),
    }
    match Raw::deserialize(d)? {
        Raw::N(n) => Ok(Some(n as usize)),
        Raw::S(s) if s.eq_ignore_ascii_case("inf") => Ok(None),
        Raw::S(s) => Err(serde::de::Error::custom(format!("l_max must be a number or \"inf\", got {s:?}"))),
    }
}

/// Allowed end positions for a mention starting at `t_s`: up to
/// `min(l_max, distance to the sentence end)` tokens further.
pub fn candidate_end_range(t_s: usize, doc: &Document, cfg: &HymrConfig) -> RangeInclusive<usize> {
    let eos = eos_distance(doc, t_s);
    let l_s = cfg.l_max.map_or(eos, |l| l.min(eos));
    t_s..=t_s + l_s
}

#[derive(Clone, Copy, Debug)]
pub struct Biaffine {
    pub fc1: Linear,
    pub fc2: Linear,
    /// Bilinear tensor flattened to `d_h x (d_r * d_h)`; column `r * d_h + q`
    /// holds `U[:, r, q]`.
    pub u: ParamId,
    /// Linear term over `[x_s; x_e]`, stored as `2 d_h x d_r`.
    pub w: ParamId,
    pub b: ParamId,
    pub d_r: usize,
}

impl Biaffine {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, d_h: usize, d_r: usize, rng: &mut R) -> Self {
        let g = ParamGroup::Heads;
        Self {
            fc1: Linear::new(store, "detector.fc1", d_h, d_h, g, rng),
            fc2: Linear::new(store, "detector.fc2", d_h, d_h, g, rng),
            u: store.glorot("detector.u", d_h, d_r * d_h, g, rng),
            w: store.glorot("detector.w", 2 * d_h, d_r, g, rng),
            b: store.zeros("detector.b", 1, d_r, g),
            d_r,
        }
    }

    /// Row `j` is the `d_r`-dimensional score of start row `hs[j]` paired
    /// with end row `he[j]`.
    pub fn scores(&self, g: &mut Graph, store: &ParamStore, hs: Var, he: Var) -> Result<Var> {
        let xs = self.fc1.forward(g, store, hs)?;
        let xe = self.fc2.forward(g, store, he)?;
        let u = g.param(store, self.u);
        let t = g.matmul(xs, u)?;
        let bilinear = g.pair_contract(t, xe, self.d_r)?;
        let cat = g.concat_cols(&[xs, xe])?;
        let w = g.param(store, self.w);
        let linear = g.matmul(cat, w)?;
        let b = g.param(store, self.b);
        let s = g.add(bilinear, linear)?;
        Ok(g.add_row(s, b)?)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.fc1.params().to_vec();
        p.extend(self.fc2.params());
        p.extend([self.u, self.w, self.b]);
        p
    }
}

#[derive(Clone, Debug)]
pub struct Detector {
    pub mode: DetectorMode,
    pub start_mlp: Mlp,
    pub biaffine: Option<Biaffine>,
    pub end_mlp: Mlp,
}

impl Detector {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, mode: DetectorMode, d_h: usize, d_r: usize, rng: &mut R) -> Self {
        let g = ParamGroup::Heads;
        let start_mlp = Mlp::new(store, "detector.start", d_h, d_h, 1, g, rng);
        let (biaffine, end_in) = match mode {
            DetectorMode::Biaffine => (Some(Biaffine::new(store, d_h, d_r, rng)), d_r),
            DetectorMode::Baseline => (None, 2 * d_h),
        };
        let end_mlp = Mlp::new(store, "detector.end", end_in, d_r, 1, g, rng);
        Self { mode, start_mlp, biaffine, end_mlp }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.start_mlp.params().to_vec();
        if let Some(b) = &self.biaffine {
            p.extend(b.params());
        }
        p.extend(self.end_mlp.params());
        p
    }

    /// `M x 1` start logits.
    pub fn start_logits(&self, g: &mut Graph, store: &ParamStore, h: Var) -> Result<Var> {
        self.start_mlp.forward(g, store, h)
    }

    /// End logits for each `(start, end)` pair, as a `k x 1` node.
    pub fn pair_logits(&self, g: &mut Graph, store: &ParamStore, h: Var, pairs: &[(usize, usize)]) -> Result<Var> {
        let starts: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let ends: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let hs = g.select_rows(h, &starts);
        let he = g.select_rows(h, &ends);
        let features = match &self.biaffine {
            Some(b) => b.scores(g, store, hs, he)?,
            None => g.concat_cols(&[hs, he])?,
        };
        self.end_mlp.forward(g, store, features)
    }

    pub fn start_probs(&self, store: &ParamStore, h: &HiddenMatrix) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let hv = g.input(h.values().clone());
        let z = self.start_logits(&mut g, store, hv)?;
        Ok(g.value(z).iter().map(|&z| sigmoid(z)).collect())
    }

    /// End probabilities for a start token over `ends`.
    pub fn end_probs(&self, store: &ParamStore, h: &HiddenMatrix, t_s: usize, ends: RangeInclusive<usize>) -> Result<Vec<f64>> {
        let pairs: Vec<(usize, usize)> = ends.map(|e| (t_s, e)).collect();
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let hv = g.input(h.values().clone());
        let z = self.pair_logits(&mut g, store, hv, &pairs)?;
        Ok(g.value(z).iter().map(|&z| sigmoid(z)).collect())
    }

    /// Every `(start, end)` whose start and end probabilities reach the
    /// threshold, sorted by span.
    pub fn detect_mentions(&self, store: &ParamStore, doc: &Document, h: &HiddenMatrix, cfg: &HymrConfig) -> Result<Vec<Mention>> {
        let mut g = Graph::new();
        let hv = g.input(h.values().clone());
        let zs = self.start_logits(&mut g, store, hv)?;
        let p_start: Vec<f64> = g.value(zs).iter().map(|&z| sigmoid(z)).collect();
        let mut pairs = Vec::new();
        for (t, &p) in p_start.iter().enumerate() {
            if p >= cfg.threshold {
                pairs.extend(candidate_end_range(t, doc, cfg).map(|e| (t, e)));
            }
        }
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let ze = self.pair_logits(&mut g, store, hv, &pairs)?;
        let mut out = Vec::new();
        for (&(s, e), &z) in pairs.iter().zip(g.value(ze).iter()) {
            let p_end = sigmoid(z);
            if p_end >= cfg.threshold {
                out.push(doc.mention(s, e)?.with_probs(p_start[s], p_end));
            }
        }
        Ok(out)
    }

    /// Mean binary cross-entropy over start labels for every token and end
    /// labels over the candidate ranges of gold starts and of predicted
    /// starts that are not gold.
    pub fn detection_loss(&self, g: &mut Graph, store: &ParamStore, h: Var, doc: &Document, cfg: &HymrConfig) -> Result<Var> {
        let gold: BTreeSet<Span> = doc.gold_mentions();
        let gold_starts: BTreeSet<usize> = gold.iter().map(|s| s.start).collect();
        let zs = self.start_logits(g, store, h)?;
        let start_targets: Vec<f64> = (0..doc.len()).map(|t| f64::from(u8::from(gold_starts.contains(&t)))).collect();
        let start_loss = g.bce_with_logits(zs, &start_targets)?;

        let mut starts = gold_starts.clone();
        for (t, &z) in g.value(zs).iter().enumerate() {
            if sigmoid(z) >= cfg.threshold {
                starts.insert(t);
            }
        }
        let mut pairs = Vec::new();
        let mut end_targets = Vec::new();
        for &t in &starts {
            for e in candidate_end_range(t, doc, cfg) {
                pairs.push((t, e));
                end_targets.push(f64::from(u8::from(gold.contains(&Span::new(t, e)))));
            }
        }
        let n = (start_targets.len() + end_targets.len()) as f64;
        let total = if pairs.is_empty() {
            start_loss
        } else {
            let ze = self.pair_logits(g, store, h, &pairs)?;
            let end_loss = g.bce_with_logits(ze, &end_targets)?;
            g.add(start_loss, end_loss)?
        };
        Ok(g.scale(total, 1.0 / n))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use coref_autograd::{check_param_gradients, ndarray::Array2, Mat};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    fn plain_doc(n: usize, ends: Vec<usize>) -> Document {
        Document::new("d", (0..n).map(|i| format!("t{i}")).collect(), ends, vec![]).unwrap()
    }

    fn zero(store: &mut ParamStore, ids: &[ParamId]) {
        for &id in ids {
            store.get_mut(id).fill(0.0);
        }
    }

    #[test]
    fn candidate_ranges() {
        let doc = plain_doc(50, vec![10, 40]);
        let cfg = HymrConfig::default();
        assert_eq!(candidate_end_range(5, &doc, &cfg), 5..=10);
        let doc2 = plain_doc(50, vec![40]);
        assert_eq!(candidate_end_range(5, &doc2, &HymrConfig { l_max: Some(3), ..cfg }), 5..=8);
        assert_eq!(candidate_end_range(10, &doc, &cfg), 10..=10);
        assert_eq!(candidate_end_range(11, &doc, &HymrConfig { l_max: None, ..cfg }), 11..=40);
    }

    #[test]
    fn l_max_config_accepts_inf() {
        let c: HymrConfig = toml::from_str("l_max = \"inf\"\nthreshold = 0.5").unwrap();
        assert_eq!(c.l_max, None);
        let c: HymrConfig = toml::from_str("l_max = 7").unwrap();
        assert_eq!(c.l_max, Some(7));
        assert!(toml::from_str::<HymrConfig>("l_max = \"big\"").is_err());
        let back: HymrConfig = toml::from_str(&toml::to_string(&HymrConfig { l_max: None, threshold: 0.25 }).unwrap()).unwrap();
        assert_eq!(back, HymrConfig { l_max: None, threshold: 0.25 });
    }

    #[test]
    fn zero_heads_give_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let det = Detector::new(&mut store, DetectorMode::Biaffine, 4, 3, &mut rng);
        zero(&mut store, &det.start_mlp.out.params());
        zero(&mut store, &det.end_mlp.out.params());
        let h = HiddenMatrix::new(random(7, 4, &mut rng)).unwrap();
        let ps = det.start_probs(&store, &h).unwrap();
        assert_eq!(ps.len(), 7);
        assert!(ps.iter().all(|&p| p == 0.5));
        let pe = det.end_probs(&store, &h, 2, 2..=5).unwrap();
        assert_eq!(pe, vec![0.5; 4]);
    }

    #[test]
    fn start_probability_monotone_in_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let det = Detector::new(&mut store, DetectorMode::Biaffine, 2, 2, &mut rng);
        // hidden unit 0 copies feature 0, output reads hidden unit 0
        store.set(det.start_mlp.hidden.w, Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        zero(&mut store, &[det.start_mlp.hidden.b, det.start_mlp.out.b]);
        let h = HiddenMatrix::new(Array2::from_shape_vec((1, 2), vec![1.5, -0.3]).unwrap()).unwrap();
        let mut last = 0.0;
        for w in [0.0, 0.5, 1.0, 2.0] {
            store.set(det.start_mlp.out.w, Array2::from_shape_vec((2, 1), vec![w, 0.0]).unwrap());
            let p = det.start_probs(&store, &h).unwrap()[0];
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn biaffine_zero_and_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let b = Biaffine::new(&mut store, 4, 3, &mut rng);
        zero(&mut store, &[b.u, b.w, b.b]);
        let (xs, xe) = (random(5, 4, &mut rng), random(5, 4, &mut rng));
        let run = |store: &ParamStore| {
            let mut g = Graph::new();
            let (s, e) = (g.input(xs.clone()), g.input(xe.clone()));
            let out = b.scores(&mut g, store, s, e).unwrap();
            g.value(out).clone()
        };
        assert!(run(&store).iter().all(|&v| v == 0.0));
        store.set(b.b, Array2::from_shape_vec((1, 3), vec![0.5, -1.0, 2.0]).unwrap());
        for row in run(&store).rows() {
            assert_eq!(row.to_vec(), vec![0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn biaffine_hand_example() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let b = Biaffine::new(&mut store, 2, 1, &mut rng);
        store.set(b.fc1.w, Array2::eye(2));
        store.set(b.fc2.w, Array2::eye(2));
        store.set(b.u, Array2::eye(2));
        zero(&mut store, &[b.w, b.b]);
        let mut g = Graph::new();
        let s = g.input(Array2::from_shape_vec((1, 2), vec![1.0, 2.0]).unwrap());
        let e = g.input(Array2::from_shape_vec((1, 2), vec![3.0, 4.0]).unwrap());
        let out = b.scores(&mut g, &store, s, e).unwrap();
        assert_eq!(g.value(out)[[0, 0]], 11.0);
    }

    #[test]
    fn bilinear_term_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (d_h, d_r, k) = (3, 4, 5);
        let mut store = ParamStore::new();
        let b = Biaffine::new(&mut store, d_h, d_r, &mut rng);
        store.set(b.fc1.w, Array2::eye(d_h));
        store.set(b.fc2.w, Array2::eye(d_h));
        zero(&mut store, &[b.w, b.b]);
        let (xs, xe) = (random(k, d_h, &mut rng), random(k, d_h, &mut rng));
        let mut g = Graph::new();
        let (s, e) = (g.input(xs.clone()), g.input(xe.clone()));
        let out = b.scores(&mut g, &store, s, e).unwrap();
        let u = store.get(b.u);
        for j in 0..k {
            for r in 0..d_r {
                let mut want = 0.0;
                for p in 0..d_h {
                    for q in 0..d_h {
                        want += xs[[j, p]] * u[[p, r * d_h + q]] * xe[[j, q]];
                    }
                }
                assert!((g.value(out)[[j, r]] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn biaffine_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let b = Biaffine::new(&mut store, 4, 3, &mut rng);
        let noise = random(1, 3, &mut rng);
        store.set(b.b, noise);
        let (xs, xe, w) = (random(6, 4, &mut rng), random(6, 4, &mut rng), random(6, 3, &mut rng));
        check_param_gradients(
            &store,
            &b.params(),
            |g, s| {
                let (a, c) = (g.input(xs.clone()), g.input(xe.clone()));
                let out = b.scores(g, s, a, c)?;
                let t = g.tanh(out);
                let wv = g.input(w.clone());
                let p = g.mul(t, wv)?;
                Ok::<_, CorefError>(g.sum(p))
            },
            1e-5,
            1e-4,
        )
        .unwrap();
    }

    #[test]
    fn baseline_and_biaffine_golden_values() {
        let h = {
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            HiddenMatrix::new(random(6, 4, &mut rng)).unwrap()
        };
        let mut out = Vec::new();
        for mode in [DetectorMode::Baseline, DetectorMode::Biaffine] {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut store = ParamStore::new();
            let det = Detector::new(&mut store, mode, 4, 3, &mut rng);
            out.push(det.end_probs(&store, &h, 1, 1..=4).unwrap());
        }
        assert_ne!(out[0], out[1]);
        let golden = [GOLDEN_BASELINE, GOLDEN_BIAFFINE];
        for (got, want) in out.iter().zip(golden) {
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() < 1e-12, "{got:?}");
            }
        }
    }

    const GOLDEN_BASELINE: [f64; 4] = [0.5202203764815662, 0.4766499982182407, 0.5041644200493922, 0.5004308894499158];
    const GOLDEN_BIAFFINE: [f64; 4] = [0.4594331291350755, 0.5350076451854, 0.5132244512930385, 0.5441051610318025];

    fn planted_detector() -> (ParamStore, Detector, HiddenMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let det = Detector::new(&mut store, DetectorMode::Biaffine, 2, 1, &mut rng);
        // start: hidden = relu-ish gelu(x0), logit = 10 * hidden - 5
        store.set(det.start_mlp.hidden.w, Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        zero(&mut store, &[det.start_mlp.hidden.b]);
        store.set(det.start_mlp.out.w, Array2::from_shape_vec((2, 1), vec![10.0, 0.0]).unwrap());
        store.set(det.start_mlp.out.b, Array2::from_elem((1, 1), -5.0));
        // end: score = x_e[1] through the linear term only
        let b = det.biaffine.unwrap();
        store.set(b.fc1.w, Array2::eye(2));
        store.set(b.fc2.w, Array2::eye(2));
        zero(&mut store, &[b.fc1.b, b.fc2.b, b.u, b.b]);
        store.set(b.w, Array2::from_shape_vec((4, 1), vec![0.0, 0.0, 0.0, 1.0]).unwrap());
        store.set(det.end_mlp.hidden.w, Array2::from_elem((1, 1), 1.0));
        zero(&mut store, &[det.end_mlp.hidden.b]);
        store.set(det.end_mlp.out.w, Array2::from_elem((1, 1), 10.0));
        store.set(det.end_mlp.out.b, Array2::from_elem((1, 1), -5.0));
        // feature 0 marks the start token, feature 1 the end token
        let mut hv = Array2::zeros((8, 2));
        hv[[3, 0]] = 1.0;
        hv[[4, 1]] = 1.0;
        (store, det, HiddenMatrix::new(hv).unwrap())
    }

    #[test]
    fn planted_weights_detect_one_span() {
        let (store, det, h) = planted_detector();
        let doc = plain_doc(8, vec![]);
        let got = det.detect_mentions(&store, &doc, &h, &HymrConfig::default()).unwrap();
        let spans: Vec<Span> = got.iter().map(Mention::span).collect();
        assert_eq!(spans, vec![Span::new(3, 4)]);
        let gelu1 = 0.5 * (1.0 + (0.797_884_560_802_865_4f64 * 1.044_715).tanh());
        let want = sigmoid(10.0 * gelu1 - 5.0);
        assert!((got[0].p_start.unwrap() - want).abs() < 1e-12);
        assert!((got[0].p_end.unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn eos_start_yields_single_token_only() {
        let (store, det, h) = planted_detector();
        // token 3 is now an EOS, so the (3, 4) pair is never considered
        let doc = plain_doc(8, vec![3]);
        let got = det.detect_mentions(&store, &doc, &h, &HymrConfig::default()).unwrap();
        assert!(got.iter().all(|m| m.start == 3 && m.end == 3));
    }

    #[test]
    fn no_confident_start_means_no_mentions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let det = Detector::new(&mut store, DetectorMode::Biaffine, 4, 2, &mut rng);
        zero(&mut store, &det.start_mlp.out.params());
        store.get_mut(det.start_mlp.out.b).fill(-1.0);
        let h = HiddenMatrix::new(random(6, 4, &mut rng)).unwrap();
        let doc = plain_doc(6, vec![]);
        assert!(det.detect_mentions(&store, &doc, &h, &HymrConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn threshold_tie_counts_as_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut store = ParamStore::new();
        let det = Detector::new(&mut store, DetectorMode::Baseline, 4, 2, &mut rng);
        zero(&mut store, &det.start_mlp.out.params());
        zero(&mut store, &det.end_mlp.out.params());
        let h = HiddenMatrix::new(random(3, 4, &mut rng)).unwrap();
        let doc = plain_doc(3, vec![]);
        let got = det.detect_mentions(&store, &doc, &h, &HymrConfig::default()).unwrap();
        assert_eq!(got.len(), 6);
    }

    #[test]
    fn uniform_predictions_cost_ln2() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let det = Detector::new(&mut store, DetectorMode::Biaffine, 4, 2, &mut rng);
        zero(&mut store, &det.start_mlp.out.params());
        zero(&mut store, &det.end_mlp.out.params());
        let doc = Document::new("d", (0..6).map(|i| i.to_string()).collect(), vec![2], vec![vec![Span::new(0, 1), Span::new(4, 4)]]).unwrap();
        let mut g = Graph::new();
        let h = g.input(random(6, 4, &mut rng));
        let loss = det.detection_loss(&mut g, &store, h, &doc, &HymrConfig::default()).unwrap();
        assert!((g.scalar(loss) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_perfect_fit_has_near_zero_loss() {
        let (mut store, det, h) = planted_detector();
        for id in [det.start_mlp.out.w, det.start_mlp.out.b, det.end_mlp.out.w, det.end_mlp.out.b] {
            *store.get_mut(id) *= 10.0;
        }
        let doc = Document::new("d", (0..8).map(|i| i.to_string()).collect(), vec![], vec![vec![Span::new(3, 4)]]).unwrap();
        let mut g = Graph::new();
        let hv = g.input(h.values().clone());
        let loss = det.detection_loss(&mut g, &store, hv, &doc, &HymrConfig::default()).unwrap();
        assert!(g.scalar(loss) < 1e-6, "{}", g.scalar(loss));
    }

    fn random_doc_and_h(n: usize, cuts: BTreeSet<usize>, seed: u64) -> (Document, HiddenMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let doc = plain_doc(n, cuts.into_iter().filter(|&c| c < n).collect());
        (doc, HiddenMatrix::new(random(n, 4, &mut rng)).unwrap())
    }

    fn eager_detector(seed: u64) -> (ParamStore, Detector) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let det = Detector::new(&mut store, DetectorMode::Biaffine, 4, 3, &mut rng);
        store.get_mut(det.start_mlp.out.b).fill(0.5);
        store.get_mut(det.end_mlp.out.b).fill(0.5);
        (store, det)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn emitted_spans_respect_hymr(
            n in 1usize..40,
            cuts in proptest::collection::btree_set(0usize..40, 0..6),
            l_max in 0usize..8,
            seed in any::<u64>(),
        ) {
            let (doc, h) = random_doc_and_h(n, cuts, seed);
            let (store, det) = eager_detector(seed ^ 0x5eed);
            let cfg = HymrConfig { l_max: Some(l_max), threshold: 0.5 };
            let found = det.detect_mentions(&store, &doc, &h, &cfg).unwrap();
            for m in &found {
                prop_assert!(m.end - m.start <= l_max);
                prop_assert!(!doc.sentence_ends.iter().any(|&e| m.start <= e && e < m.end));
            }
            let smaller = HymrConfig { l_max: Some(l_max / 2), ..cfg };
            let sub = det.detect_mentions(&store, &doc, &h, &smaller).unwrap();
            let big: BTreeSet<Span> = found.iter().map(Mention::span).collect();
            prop_assert!(sub.iter().all(|m| big.contains(&m.span())));
        }
    }
}
