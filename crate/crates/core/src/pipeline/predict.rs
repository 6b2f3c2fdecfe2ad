use std::collections::HashMap;

use rayon::prelude::*;

use super::model::Backbone;
use crate::agent::{Agent, AgentExchange, AgentStats, LlmClient};
use crate::corpus::{Cluster, DocPrediction, Document, Mention};
use crate::error::{CorefError, Result};
use crate::metrics::{Evaluator, Report};
use crate::selectors::{select_clusters_for_check, select_mentions_for_check, FilterConfig};

/// How the checker/splitter stage is run; absent means the stage is skipped.
#[derive(Clone, Copy)]
pub struct AgentSetup<'a> {
    pub client: &'a dyn LlmClient,
    pub filters: &'a FilterConfig,
    pub context_sentences: usize,
    pub max_parallel: usize,
}

#[derive(Clone, Debug, Default)]
pub struct DocOutcome {
    pub clusters: Vec<Cluster>,
    /// Mentions handed to clustering.
    pub clustered_mentions: Vec<Mention>,
    pub detected: usize,
    pub audit: Vec<AgentExchange>,
    pub stats: AgentStats,
}

#[derive(Clone, Debug, Default)]
pub struct PredictOutput {
    pub predictions: Vec<DocPrediction>,
    pub audit: Vec<AgentExchange>,
    pub stats: AgentStats,
}

fn by_first_span(clusters: &mut [Cluster]) {
    clusters.sort_by_key(|c| c.mentions.first().map(Mention::span));
}

/// Detect, check mentions, cluster, check clusters. Checked items that
/// survive are merged back with the bypassed ones in document order.
pub fn predict_document<B: Backbone>(model: &B, doc: &Document, agent: Option<AgentSetup<'_>>) -> Result<DocOutcome> {
    let (mut mentions, state) = model.detect(doc)?;
    let detected = mentions.len();
    let agent = agent
        .map(|a| Agent::new(a.client, a.context_sentences, a.max_parallel).map(|agent| (agent, a.filters)))
        .transpose()?;

    if let Some((agent, filters)) = &agent {
        let (to_check, bypassed) = select_mentions_for_check(&mentions, filters);
        let mut kept = agent.check_mentions(&to_check, doc);
        kept.extend(bypassed);
        kept.sort_by_key(Mention::span);
        mentions = kept;
    }

    let mut clusters = model.cluster(doc, &mentions, &state)?;

    if let Some((agent, filters)) = &agent {
        let (to_check, mut bypassed) = select_clusters_for_check(&clusters, filters);
        bypassed.extend(agent.check_and_split_clusters(&to_check, doc));
        clusters = bypassed;
    }
    by_first_span(&mut clusters);

    let (audit, stats) = agent.map(|(a, _)| (a.take_audit(), a.stats())).unwrap_or_default();
    Ok(DocOutcome { clusters, clustered_mentions: mentions, detected, audit, stats })
}

/// Runs [`predict_document`] over `docs` in parallel. Outputs and the audit
/// trail are assembled in input order.
pub fn run_predict<B: Backbone>(model: &B, docs: &[Document], agent: Option<AgentSetup<'_>>) -> Result<PredictOutput> {
    let outcomes: Vec<DocOutcome> = docs.par_iter().map(|d| predict_document(model, d, agent)).collect::<Result<_>>()?;
    let mut out = PredictOutput::default();
    for (doc, o) in docs.iter().zip(outcomes) {
        out.predictions.push(DocPrediction::from_clusters(&doc.doc_id, &o.clusters));
        out.audit.extend(o.audit);
        let s = &mut out.stats;
        s.requests += o.stats.requests;
        s.failures += o.stats.failures;
        s.mentions_removed += o.stats.mentions_removed;
        s.clusters_split += o.stats.clusters_split;
    }
    if out.stats.failures > 0 {
        log::warn!("{} LLM exchanges failed and were left unchanged", out.stats.failures);
    }
    Ok(out)
}

/// Scores predictions against the gold clusters of `docs`. A document
/// without a prediction counts as predicting nothing.
pub fn evaluate(docs: &[Document], predictions: &[DocPrediction], drop_singletons: bool) -> Result<Report> {
    let by_id: HashMap<&str, &DocPrediction> = predictions.iter().map(|p| (p.doc_id.as_str(), p)).collect();
    if by_id.len() != predictions.len() {
        return Err(CorefError::Validation("duplicate doc_id in predictions".into()));
    }
    let known: HashMap<&str, ()> = docs.iter().map(|d| (d.doc_id.as_str(), ())).collect();
    if let Some(p) = predictions.iter().find(|p| !known.contains_key(p.doc_id.as_str())) {
        return Err(CorefError::Validation(format!("prediction for unknown document {}", p.doc_id)));
    }
    let mut ev = Evaluator::new(drop_singletons);
    for doc in docs {
        let pred = match by_id.get(doc.doc_id.as_str()) {
            Some(p) => {
                p.validate(Some(doc))?;
                p.to_clusters(doc)?.iter().map(Cluster::spans).collect()
            }
            None => Vec::new(),
        };
        ev.add(&doc.gold_partition(), &pred);
    }
    Ok(ev.report())
}
