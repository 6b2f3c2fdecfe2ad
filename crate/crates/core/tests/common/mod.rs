#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use coref_core::corpus::{parse_conll, Cluster, Document, Mention, Span};
use coref_core::error::Result;
use coref_core::pipeline::Backbone;
use serde::Deserialize;

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// Errors planted into one document of the agent fixture.
#[derive(Clone, Debug, Deserialize)]
pub struct Plan {
    pub doc_id: String,
    /// Spans that are not gold mentions but are detected anyway.
    pub invalid_mentions: Vec<[usize; 2]>,
    /// Sets of gold cluster indices that the clusterer wrongly merges.
    pub mixed_clusters: Vec<Vec<usize>>,
}

impl Plan {
    pub fn invalid_spans(&self) -> Vec<Span> {
        self.invalid_mentions.iter().map(|&[s, e]| Span::new(s, e)).collect()
    }
}

/// A backbone that replays gold annotation with the planted errors of each
/// document. Gold mentions get high detection probabilities and planted
/// ones low; pure clusters get confident pair probabilities and mixed
/// clusters weak ones.
pub struct PlantedBackbone {
    plans: HashMap<String, Plan>,
    gold: HashMap<String, HashMap<Span, usize>>,
}

pub const GOOD_PROB: f64 = 0.95;
pub const PLANTED_PROB: f64 = 0.3;

impl PlantedBackbone {
    pub fn plan(&self, doc_id: &str) -> &Plan {
        &self.plans[doc_id]
    }

    /// Gold cluster index after the planted merges.
    fn group_of(&self, doc_id: &str, gold_idx: usize) -> usize {
        self.plans[doc_id]
            .mixed_clusters
            .iter()
            .find(|set| set.contains(&gold_idx))
            .map_or(gold_idx, |set| *set.iter().min().expect("non-empty merge set"))
    }
}

pub fn load_planted() -> (Vec<Document>, PlantedBackbone) {
    let docs = parse_conll(data("planted.conll")).expect("planted corpus parses");
    let text = std::fs::read_to_string(data("planted.jsonl")).expect("planted plan exists");
    let plans: HashMap<String, Plan> = text
        .lines()
        .map(|l| serde_json::from_str::<Plan>(l).expect("plan line"))
        .map(|p| (p.doc_id.clone(), p))
        .collect();
    assert_eq!(plans.len(), docs.len());
    let gold = docs.iter().map(|d| (d.doc_id.clone(), d.gold_cluster_index())).collect();
    (docs, PlantedBackbone { plans, gold })
}

impl Backbone for PlantedBackbone {
    type State = ();

    fn detect(&self, doc: &Document) -> Result<(Vec<Mention>, ())> {
        let mut out = Vec::new();
        for s in doc.gold_mentions() {
            out.push(doc.mention(s.start, s.end)?.with_probs(GOOD_PROB, GOOD_PROB));
        }
        for s in self.plans[&doc.doc_id].invalid_spans() {
            out.push(doc.mention(s.start, s.end)?.with_probs(PLANTED_PROB, PLANTED_PROB));
        }
        out.sort_by_key(Mention::span);
        Ok((out, ()))
    }

    fn cluster(&self, doc: &Document, mentions: &[Mention], _: &()) -> Result<Vec<Cluster>> {
        let gold = &self.gold[&doc.doc_id];
        let mut groups: BTreeMap<(usize, usize), Vec<Mention>> = BTreeMap::new();
        for (i, m) in mentions.iter().enumerate() {
            let key = match gold.get(&m.span()) {
                Some(&g) => (0, self.group_of(&doc.doc_id, g)),
                None => (1, i),
            };
            groups.entry(key).or_default().push(m.clone());
        }
        Ok(groups
            .into_iter()
            .map(|((kind, g), ms)| {
                let mixed = kind == 0 && self.plans[&doc.doc_id].mixed_clusters.iter().any(|set| set.contains(&g));
                let p = if mixed { PLANTED_PROB } else { GOOD_PROB };
                let pair_probs = vec![p; ms.len() - 1];
                Cluster { mentions: ms, pair_probs }
            })
            .collect())
    }
}
