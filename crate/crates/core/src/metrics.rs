//! MUC, B³, CEAF-φ4 and mention detection scores.
//!
//! Every metric is first reduced to [`Counts`] (precision and recall
//! numerators and denominators) so that corpus scores are micro-averaged by
//! summing counts over documents.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::Span;

pub type Partition = [Vec<Span>];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Score {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Self { precision, recall, f1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub p_num: f64,
    pub p_den: f64,
    pub r_num: f64,
    pub r_den: f64,
}

impl Counts {
    pub fn score(&self) -> Score {
        let ratio = |n: f64, d: f64| if d > 0.0 { n / d } else { 0.0 };
        Score::new(ratio(self.p_num, self.p_den), ratio(self.r_num, self.r_den))
    }

    /// Counts with gold and prediction roles exchanged.
    pub fn swapped(self) -> Self {
        Self { p_num: self.r_num, p_den: self.r_den, r_num: self.p_num, r_den: self.p_den }
    }
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Self) {
        self.p_num += o.p_num;
        self.p_den += o.p_den;
        self.r_num += o.r_num;
        self.r_den += o.r_den;
    }
}

fn membership(part: &Partition) -> HashMap<Span, usize> {
    let mut map = HashMap::new();
    for (i, c) in part.iter().enumerate() {
        for &s in c {
            map.insert(s, i);
        }
    }
    map
}

/// Recall side of MUC: links of `key` recovered by `response`.
fn muc_side(key: &Partition, response: &Partition) -> (f64, f64) {
    let owner = membership(response);
    let (mut num, mut den) = (0.0, 0.0);
    for c in key.iter().filter(|c| !c.is_empty()) {
        let mut parts = BTreeSet::new();
        let mut unaligned = 0usize;
        for s in c {
            match owner.get(s) {
                Some(&i) => {
                    parts.insert(i);
                }
                None => unaligned += 1,
            }
        }
        num += (c.len() - parts.len() - unaligned) as f64;
        den += (c.len() - 1) as f64;
    }
    (num, den)
}

pub fn muc_counts(gold: &Partition, pred: &Partition) -> Counts {
    let (r_num, r_den) = muc_side(gold, pred);
    let (p_num, p_den) = muc_side(pred, gold);
    Counts { p_num, p_den, r_num, r_den }
}

fn b_cubed_side(key: &Partition, response: &Partition) -> (f64, f64) {
    let owner = membership(response);
    let (mut num, mut den) = (0.0, 0.0);
    for c in key {
        let mut overlap: HashMap<usize, usize> = HashMap::new();
        for s in c {
            if let Some(&i) = owner.get(s) {
                *overlap.entry(i).or_default() += 1;
            }
        }
        // Σ over mentions of |K∩R|/|K| collapses to Σ over response clusters of |K∩R|²/|K|.
        num += overlap.values().map(|&n| (n * n) as f64).sum::<f64>() / c.len() as f64;
        den += c.len() as f64;
    }
    (num, den)
}

pub fn b_cubed_counts(gold: &Partition, pred: &Partition) -> Counts {
    let (r_num, r_den) = b_cubed_side(gold, pred);
    let (p_num, p_den) = b_cubed_side(pred, gold);
    Counts { p_num, p_den, r_num, r_den }
}

pub fn phi4(a: &[Span], b: &[Span]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let a: BTreeSet<&Span> = a.iter().collect();
    let common = b.iter().filter(|s| a.contains(s)).count();
    2.0 * common as f64 / (a.len() + b.len()) as f64
}

/// Maximum-weight one-to-one assignment between rows and columns.
/// Returns the optimal total and, per row, the assigned column if any.
pub fn max_assignment(weights: &[Vec<f64>]) -> (f64, Vec<Option<usize>>) {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return (0.0, vec![None; rows]);
    }
    // Pad to an n x n problem with zero-weight dummy cells.
    let n = rows.max(cols);
    let cost = |i: usize, j: usize| if i < rows && j < cols { -weights[i][j] } else { 0.0 };
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![None; rows];
    let mut total = 0.0;
    for j in 1..=n {
        let i = matched[j];
        if i >= 1 && i <= rows && j <= cols {
            assign[i - 1] = Some(j - 1);
            total += weights[i - 1][j - 1];
        }
    }
    (total, assign)
}

pub fn ceaf_phi4_counts(gold: &Partition, pred: &Partition) -> Counts {
    let gold: Vec<&Vec<Span>> = gold.iter().filter(|c| !c.is_empty()).collect();
    let pred: Vec<&Vec<Span>> = pred.iter().filter(|c| !c.is_empty()).collect();
    let sim: Vec<Vec<f64>> = gold.iter().map(|g| pred.iter().map(|p| phi4(g, p)).collect()).collect();
    let (total, _) = max_assignment(&sim);
    Counts { p_num: total, p_den: pred.len() as f64, r_num: total, r_den: gold.len() as f64 }
}

pub fn mention_counts(gold: &BTreeSet<Span>, pred: &BTreeSet<Span>) -> Counts {
    let hit = gold.intersection(pred).count() as f64;
    Counts { p_num: hit, p_den: pred.len() as f64, r_num: hit, r_den: gold.len() as f64 }
}

pub fn muc(gold: &Partition, pred: &Partition) -> Score {
    muc_counts(gold, pred).score()
}

pub fn b_cubed(gold: &Partition, pred: &Partition) -> Score {
    b_cubed_counts(gold, pred).score()
}

pub fn ceaf_phi4(gold: &Partition, pred: &Partition) -> Score {
    ceaf_phi4_counts(gold, pred).score()
}

pub fn mention_prf(gold: &BTreeSet<Span>, pred: &BTreeSet<Span>) -> Score {
    mention_counts(gold, pred).score()
}

pub fn avg_f1(muc: Score, b_cubed: Score, ceaf: Score) -> f64 {
    (muc.f1 + b_cubed.f1 + ceaf.f1) / 3.0
}

pub fn drop_singletons(part: &Partition) -> Vec<Vec<Span>> {
    part.iter().filter(|c| c.len() > 1).cloned().collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub muc: Score,
    pub b_cubed: Score,
    pub ceaf_phi4: Score,
    pub avg_f1: f64,
    pub mentions: Score,
}

impl Report {
    /// Fixed-width table of P/R/F1 per metric, in percent.
    pub fn table(&self) -> String {
        let mut out = format!("{:<10} {:>7} {:>7} {:>7}\n", "metric", "P", "R", "F1");
        let rows = [("MUC", self.muc), ("B3", self.b_cubed), ("CEAFphi4", self.ceaf_phi4), ("mentions", self.mentions)];
        for (name, s) in rows {
            out += &format!("{name:<10} {:>7.2} {:>7.2} {:>7.2}\n", 100.0 * s.precision, 100.0 * s.recall, 100.0 * s.f1);
        }
        out += &format!("{:<10} {:>7} {:>7} {:>7.2}\n", "Avg.F1", "", "", 100.0 * self.avg_f1);
        out
    }
}

/// Corpus-level accumulator; scores are micro-averaged over documents.
#[derive(Clone, Debug, Default)]
pub struct Evaluator {
    drop_singletons: bool,
    muc: Counts,
    b_cubed: Counts,
    ceaf: Counts,
    mentions: Counts,
    docs: usize,
}

impl Evaluator {
    /// With `drop_singletons`, predicted singleton clusters are removed
    /// before cluster scoring. Mention scores always use every prediction.
    pub fn new(drop_singletons: bool) -> Self {
        Self { drop_singletons, ..Default::default() }
    }

    pub fn add(&mut self, gold: &Partition, pred: &Partition) {
        let spans = |p: &Partition| p.iter().flatten().copied().collect::<BTreeSet<Span>>();
        self.mentions += mention_counts(&spans(gold), &spans(pred));
        let pred = if self.drop_singletons { drop_singletons(pred) } else { pred.to_vec() };
        self.muc += muc_counts(gold, &pred);
        self.b_cubed += b_cubed_counts(gold, &pred);
        self.ceaf += ceaf_phi4_counts(gold, &pred);
        self.docs += 1;
    }

    pub fn docs(&self) -> usize {
        self.docs
    }

    pub fn report(&self) -> Report {
        let (m, b, c) = (self.muc.score(), self.b_cubed.score(), self.ceaf.score());
        Report { muc: m, b_cubed: b, ceaf_phi4: c, avg_f1: avg_f1(m, b, c), mentions: self.mentions.score() }
    }
}
