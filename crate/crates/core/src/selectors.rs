//! Choosing which mentions and clusters are sent to the LLM.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{Cluster, Mention};
use crate::error::{CorefError, Result};

const PRONOUN_TABLE: &str = include_str!("../data/pronouns.txt");

/// Pronouns matched for bypass: the shipped table without "it".
pub fn default_pronouns() -> BTreeSet<String> {
    PRONOUN_TABLE
        .lines()
        .map(str::trim)
        .filter(|w| !w.is_empty() && *w != "it")
        .map(str::to_string)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub eta1: f64,
    pub eta2: f64,
    pub rho: f64,
    pub pronoun_set: BTreeSet<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { eta1: 0.6, eta2: 0.6, rho: 1e-3, pronoun_set: default_pronouns() }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, eta) in [("eta1", self.eta1), ("eta2", self.eta2)] {
            if !(0.0..=1.0).contains(&eta) {
                return Err(CorefError::Config(format!("{name} = {eta} outside [0, 1]")));
            }
        }
        if !(self.rho > 0.0) {
            return Err(CorefError::Config(format!("rho = {} must be positive", self.rho)));
        }
        if self.pronoun_set.contains("it") {
            return Err(CorefError::Config("\"it\" must not be a bypass pronoun".into()));
        }
        if let Some(p) = self.pronoun_set.iter().find(|p| p.chars().any(char::is_uppercase)) {
            return Err(CorefError::Config(format!("bypass pronoun {p:?} must be lowercase")));
        }
        Ok(())
    }
}

pub fn is_bypass_pronoun(text: &str, cfg: &FilterConfig) -> bool {
    cfg.pronoun_set.contains(&text.to_lowercase())
}

/// Size of the "bottom fraction" of `n` items.
pub fn bottom_count(eta: f64, n: usize) -> usize {
    ((eta * n as f64).ceil() as usize).min(n)
}

/// Marks the `bottom_count(eta, n)` lowest-scoring items. Ranking is a
/// stable descending sort, so among equal scores later items rank lower.
fn bottom_mask(scores: &[f64], eta: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let k = bottom_count(eta, scores.len());
    let mut mask = vec![false; scores.len()];
    for &i in &order[scores.len() - k..] {
        mask[i] = true;
    }
    mask
}

/// Splits mentions into `(to_check, bypassed)`, each in input order.
/// Pronouns are always bypassed; of the rest, the bottom `eta1` by end
/// probability are checked. A mention without an end probability ranks as 0.
pub fn select_mentions_for_check(mentions: &[Mention], cfg: &FilterConfig) -> (Vec<Mention>, Vec<Mention>) {
    let candidates: Vec<usize> = (0..mentions.len())
        .filter(|&i| !is_bypass_pronoun(&mentions[i].text, cfg))
        .collect();
    let scores: Vec<f64> = candidates.iter().map(|&i| mentions[i].p_end.unwrap_or(0.0)).collect();
    let mut check = vec![false; mentions.len()];
    for (&i, flagged) in candidates.iter().zip(bottom_mask(&scores, cfg.eta1)) {
        check[i] = flagged;
    }
    partition(mentions, &check)
}

/// `mean(p) - rho * sum_j (mean(p) - p_j)^2`.
pub fn cluster_confidence(pair_probs: &[f64], rho: f64) -> Result<f64> {
    if pair_probs.is_empty() {
        return Err(CorefError::EmptyPairProbs);
    }
    let mean = pair_probs.iter().sum::<f64>() / pair_probs.len() as f64;
    let dev: f64 = pair_probs.iter().map(|p| (mean - p).powi(2)).sum();
    Ok(mean - rho * dev)
}

/// Splits clusters into `(to_check, bypassed)`, each in input order.
/// Singletons are bypassed; of the rest, the bottom `eta2` by
/// [`cluster_confidence`] are checked. A multi-mention cluster without pair
/// probabilities ranks lowest.
pub fn select_clusters_for_check(clusters: &[Cluster], cfg: &FilterConfig) -> (Vec<Cluster>, Vec<Cluster>) {
    let multi: Vec<usize> = (0..clusters.len()).filter(|&i| clusters[i].len() > 1).collect();
    let scores: Vec<f64> = multi
        .iter()
        .map(|&i| cluster_confidence(&clusters[i].pair_probs, cfg.rho).unwrap_or(f64::NEG_INFINITY))
        .collect();
    let mut check = vec![false; clusters.len()];
    for (&i, flagged) in multi.iter().zip(bottom_mask(&scores, cfg.eta2)) {
        check[i] = flagged;
    }
    partition(clusters, &check)
}

fn partition<T: Clone>(items: &[T], mask: &[bool]) -> (Vec<T>, Vec<T>) {
    let mut yes = Vec::new();
    let mut no = Vec::new();
    for (item, &m) in items.iter().zip(mask) {
        if m {
            yes.push(item.clone());
        } else {
            no.push(item.clone());
        }
    }
    (yes, no)
}
