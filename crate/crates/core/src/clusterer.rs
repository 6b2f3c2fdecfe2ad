//! Left-to-right mention clustering against running cluster means.

use std::collections::HashMap;

use coref_autograd::{Graph, Mat, ParamGroup, ParamId, ParamStore, Var};
use rand::Rng;

use crate::corpus::{Cluster, Document, Mention, Span};
use crate::detector::sigmoid;
use crate::encoder::HiddenMatrix;
use crate::error::Result;
use crate::nn::{Linear, Mlp};

#[derive(Clone, Copy, Debug)]
pub struct Clusterer {
    /// Maps `[H_start; H_end]` to a `d_h` mention vector.
    pub proj: Linear,
    /// Scores `[m; c; m * c]` with one logit.
    pub scorer: Mlp,
}

impl Clusterer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, d_h: usize, hidden: usize, rng: &mut R) -> Self {
        let g = ParamGroup::Heads;
        Self {
            proj: Linear::new(store, "clusterer.proj", 2 * d_h, d_h, g, rng),
            scorer: Mlp::new(store, "clusterer.scorer", 3 * d_h, hidden, 1, g, rng),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.proj.params().into_iter().chain(self.scorer.params()).collect()
    }

    /// One row per span: the projection of its start and end rows of `h`.
    pub fn mention_reprs(&self, g: &mut Graph, store: &ParamStore, h: Var, spans: &[Span]) -> Result<Var> {
        let starts: Vec<usize> = spans.iter().map(|s| s.start).collect();
        let ends: Vec<usize> = spans.iter().map(|s| s.end).collect();
        let hs = g.select_rows(h, &starts);
        let he = g.select_rows(h, &ends);
        let cat = g.concat_cols(&[hs, he])?;
        self.proj.forward(g, store, cat)
    }

    pub fn mention_repr(&self, store: &ParamStore, m: &Mention, h: &HiddenMatrix) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let hv = g.input(h.values().clone());
        let r = self.mention_reprs(&mut g, store, hv, &[m.span()])?;
        Ok(g.value(r).iter().copied().collect())
    }

    /// Logits for pairs `(queries[p], cluster p)` where cluster `p` is the
    /// mean of the rows of `reps` weighted by row `p` of `avg`.
    fn pair_logits(&self, g: &mut Graph, store: &ParamStore, reps: Var, queries: &[usize], avg: Mat) -> Result<Var> {
        let m = g.select_rows(reps, queries);
        let a = g.input(avg);
        let c = g.matmul(a, reps)?;
        let mc = g.mul(m, c)?;
        let feats = g.concat_cols(&[m, c, mc])?;
        self.scorer.forward(g, store, feats)
    }

    /// Greedy incremental clustering. Each mention joins the existing
    /// cluster with the highest probability if it reaches `threshold`
    /// (earliest cluster on ties), otherwise it starts a new cluster.
    pub fn cluster_mentions(&self, store: &ParamStore, mentions: &[Mention], h: &HiddenMatrix, threshold: f64) -> Result<Vec<Cluster>> {
        if mentions.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let hv = g.input(h.values().clone());
        let spans: Vec<Span> = mentions.iter().map(Mention::span).collect();
        let reps = self.mention_reprs(&mut g, store, hv, &spans)?;
        let n = mentions.len();

        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut probs: Vec<Vec<f64>> = Vec::new();
        for i in 0..n {
            if members.is_empty() {
                members.push(vec![i]);
                probs.push(Vec::new());
                continue;
            }
            let avg = averaging_matrix(&members, n);
            let z = self.pair_logits(&mut g, store, reps, &vec![i; members.len()], avg)?;
            let mut best: Option<(usize, f64)> = None;
            for (c, &z) in g.value(z).iter().enumerate() {
                let p = sigmoid(z);
                if best.is_none_or(|(_, bp)| p > bp) {
                    best = Some((c, p));
                }
            }
            match best {
                Some((c, p)) if p >= threshold => {
                    members[c].push(i);
                    probs[c].push(p);
                }
                _ => {
                    members.push(vec![i]);
                    probs.push(Vec::new());
                }
            }
        }
        Ok(members
            .into_iter()
            .zip(probs)
            .map(|(idx, pair_probs)| Cluster {
                mentions: idx.into_iter().map(|i| mentions[i].clone()).collect(),
                pair_probs,
            })
            .collect())
    }

    /// Mean binary cross-entropy over every mention-versus-cluster decision
    /// made while replaying the gold clustering of `doc` left to right.
    /// Returns `None` when the document offers no decision.
    pub fn clustering_loss(&self, g: &mut Graph, store: &ParamStore, h: Var, doc: &Document) -> Result<Option<Var>> {
        let index = doc.gold_cluster_index();
        let spans: Vec<Span> = doc.gold_mentions().into_iter().collect();
        if spans.len() < 2 {
            return Ok(None);
        }
        let n = spans.len();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut owner: HashMap<usize, usize> = HashMap::new();
        let mut queries = Vec::new();
        let mut rows: Vec<Vec<usize>> = Vec::new();
        let mut targets = Vec::new();
        for (i, span) in spans.iter().enumerate() {
            let gold = index[span];
            for (c, mem) in members.iter().enumerate() {
                queries.push(i);
                rows.push(mem.clone());
                targets.push(f64::from(u8::from(owner[&c] == gold)));
            }
            match members.iter().position(|mem| index[&spans[mem[0]]] == gold) {
                Some(c) => members[c].push(i),
                None => {
                    owner.insert(members.len(), gold);
                    members.push(vec![i]);
                }
            }
        }
        if queries.is_empty() {
            return Ok(None);
        }
        let reps = self.mention_reprs(g, store, h, &spans)?;
        let z = self.pair_logits(g, store, reps, &queries, averaging_matrix(&rows, n))?;
        let loss = g.bce_with_logits(z, &targets)?;
        Ok(Some(g.scale(loss, 1.0 / targets.len() as f64)))
    }
}

fn averaging_matrix(groups: &[Vec<usize>], n: usize) -> Mat {
    let mut a = Mat::zeros((groups.len(), n));
    for (r, group) in groups.iter().enumerate() {
        let w = 1.0 / group.len() as f64;
        for &i in group {
            a[[r, i]] = w;
        }
    }
    a
}
