//! LLM checker and splitter stages.
//!
//! Requests for one stage may run concurrently, but every result is applied
//! and every exchange is logged in input order, so a stage's output and its
//! audit trail depend only on the replies.

pub mod client;
pub mod context;
pub mod parse;
pub mod prompt;

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use client::{HttpLlmClient, LlmClient, LlmClientConfig, LlmRequest, TargetRef};
pub use context::{annotate_cluster_context, annotate_mention_context, ClusterContext};
pub use parse::{parse_regrouping, parse_verdict, Regrouping, Verdict, VerdictValue};
pub use prompt::{render_prompt, ExchangeKind, Payload};

use crate::corpus::{Cluster, Document, Mention};
use crate::error::{CorefError, Result};

/// Preceding sentences shown with a mention under check.
pub const DEFAULT_CONTEXT_SENTENCES: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parsed {
    Verdict(Verdict),
    Regrouping(Regrouping),
    /// Transport failure or an unparseable reply.
    Error(String),
}

/// One prompt/reply pair as written to the audit log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentExchange {
    pub doc_id: String,
    pub kind: ExchangeKind,
    pub prompt: String,
    pub raw_reply: String,
    pub parsed: Parsed,
    pub target_ref: TargetRef,
    pub attempt: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentStats {
    pub requests: usize,
    pub failures: usize,
    pub mentions_removed: usize,
    pub clusters_split: usize,
}

pub struct Agent<'c> {
    client: &'c dyn LlmClient,
    context_sentences: usize,
    pool: rayon::ThreadPool,
    audit: Mutex<Vec<AgentExchange>>,
    requests: AtomicUsize,
    failures: AtomicUsize,
    removed: AtomicUsize,
    split: AtomicUsize,
}

impl<'c> Agent<'c> {
    pub fn new(client: &'c dyn LlmClient, context_sentences: usize, max_parallel: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(max_parallel.max(1))
            .build()
            .map_err(|e| CorefError::Config(format!("agent thread pool: {e}")))?;
        Ok(Self {
            client,
            context_sentences,
            pool,
            audit: Mutex::new(Vec::new()),
            requests: AtomicUsize::new(0),
            failures: AtomicUsize::new(0),
            removed: AtomicUsize::new(0),
            split: AtomicUsize::new(0),
        })
    }

    pub fn stats(&self) -> AgentStats {
        AgentStats {
            requests: self.requests.load(Ordering::Relaxed),
            failures: self.failures.load(Ordering::Relaxed),
            mentions_removed: self.removed.load(Ordering::Relaxed),
            clusters_split: self.split.load(Ordering::Relaxed),
        }
    }

    /// Drains the exchanges recorded so far.
    pub fn take_audit(&self) -> Vec<AgentExchange> {
        std::mem::take(&mut *self.audit.lock().expect("audit lock poisoned"))
    }

    /// Sends `request` and parses the reply, retrying a malformed reply once
    /// with the same prompt. `None` means the item should be left alone.
    fn ask<T>(
        &self,
        request: &LlmRequest,
        parse: impl Fn(&str) -> Result<T>,
        wrap: impl Fn(&T) -> Parsed,
        log: &mut Vec<AgentExchange>,
    ) -> Option<T> {
        for attempt in 1..=2 {
            self.requests.fetch_add(1, Ordering::Relaxed);
            let mut record = |raw_reply: String, parsed: Parsed| {
                log.push(AgentExchange {
                    doc_id: request.doc_id.clone(),
                    kind: request.kind,
                    prompt: request.prompt.clone(),
                    raw_reply,
                    parsed,
                    target_ref: request.target.clone(),
                    attempt,
                })
            };
            let raw = match self.client.complete(request) {
                Ok(raw) => raw,
                Err(e) => {
                    log::warn!("{:?} on {} left unchanged: {e}", request.kind, request.doc_id);
                    self.failures.fetch_add(1, Ordering::Relaxed);
                    record(String::new(), Parsed::Error(e.to_string()));
                    return None;
                }
            };
            match parse(&raw) {
                Ok(value) => {
                    record(raw, wrap(&value));
                    return Some(value);
                }
                Err(e) => {
                    log::warn!("malformed {:?} reply on {} (attempt {attempt}): {e}", request.kind, request.doc_id);
                    record(raw, Parsed::Error(e.to_string()));
                }
            }
        }
        self.failures.fetch_add(1, Ordering::Relaxed);
        None
    }

    fn finish<T>(&self, results: Vec<(T, Vec<AgentExchange>)>) -> Vec<T> {
        let mut audit = self.audit.lock().expect("audit lock poisoned");
        results
            .into_iter()
            .map(|(value, log)| {
                audit.extend(log);
                value
            })
            .collect()
    }

    /// Drops every mention the checker rejects. Accepted, pending and
    /// failed checks keep the mention. Input order is preserved.
    pub fn check_mentions(&self, to_check: &[Mention], doc: &Document) -> Vec<Mention> {
        let results: Vec<(bool, Vec<AgentExchange>)> = self.pool.install(|| {
            to_check
                .par_iter()
                .map(|m| {
                    let ctx = annotate_mention_context(doc, m, self.context_sentences);
                    let request = LlmRequest {
                        doc_id: doc.doc_id.clone(),
                        kind: ExchangeKind::MentionCheck,
                        prompt: render_prompt(ExchangeKind::MentionCheck, Payload::Mention(&ctx)),
                        target: TargetRef::Mention(m.span()),
                    };
                    let mut log = Vec::new();
                    let verdict = self.ask(&request, parse_verdict, |v| Parsed::Verdict(v.clone()), &mut log);
                    (!matches!(verdict, Some(Verdict { value: VerdictValue::No, .. })), log)
                })
                .collect()
        });
        let keep = self.finish(results);
        let survivors: Vec<Mention> =
            to_check.iter().zip(&keep).filter(|(_, &k)| k).map(|(m, _)| m.clone()).collect();
        self.removed.fetch_add(to_check.len() - survivors.len(), Ordering::Relaxed);
        survivors
    }

    /// Checks each cluster and regroups the rejected ones. A successful
    /// regrouping replaces the cluster by one cluster per group, in group
    /// order; anything else keeps the cluster as it was.
    pub fn check_and_split_clusters(&self, to_check: &[Cluster], doc: &Document) -> Vec<Cluster> {
        let results: Vec<(Vec<Cluster>, Vec<AgentExchange>)> = self.pool.install(|| {
            to_check
                .par_iter()
                .enumerate()
                .map(|(id, c)| {
                    let mut log = Vec::new();
                    let out = self.check_cluster(id, c, doc, &mut log);
                    (out, log)
                })
                .collect()
        });
        self.finish(results).into_iter().flatten().collect()
    }

    fn check_cluster(&self, id: usize, c: &Cluster, doc: &Document, log: &mut Vec<AgentExchange>) -> Vec<Cluster> {
        let unchanged = vec![c.clone()];
        if c.len() < 2 {
            return unchanged;
        }
        let ctx = annotate_cluster_context(doc, c);
        let target = TargetRef::Cluster { id, spans: ctx.spans.clone() };
        let request = |kind| LlmRequest {
            doc_id: doc.doc_id.clone(),
            kind,
            prompt: render_prompt(kind, Payload::Cluster(&ctx)),
            target: target.clone(),
        };
        let verdict = self.ask(&request(ExchangeKind::ClusterCheck), parse_verdict, |v| Parsed::Verdict(v.clone()), log);
        if !matches!(verdict, Some(Verdict { value: VerdictValue::No, .. })) {
            return unchanged;
        }
        let k = ctx.spans.len();
        let regrouping = self.ask(
            &request(ExchangeKind::ClusterSplit),
            |raw| parse_regrouping(raw, k),
            |r| Parsed::Regrouping(r.clone()),
            log,
        );
        let Some(Regrouping::Groups(groups)) = regrouping else {
            return unchanged;
        };
        if groups.len() > 1 {
            self.split.fetch_add(1, Ordering::Relaxed);
        }
        groups
            .iter()
            .map(|g| {
                let mentions = g
                    .iter()
                    .map(|&n| {
                        let span = ctx.spans[n - 1];
                        c.mentions.iter().find(|m| m.span() == span).cloned().expect("numbered span comes from the cluster")
                    })
                    .collect();
                Cluster::new(mentions)
            })
            .collect()
    }
}

pub fn write_audit(path: &Path, exchanges: &[AgentExchange]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CorefError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for x in exchanges {
        serde_json::to_writer(&mut w, x)?;
        w.write_all(b"\n").map_err(|e| CorefError::io(path, e))?;
    }
    w.flush().map_err(|e| CorefError::io(path, e))
}

pub fn read_audit(path: &Path) -> Result<Vec<AgentExchange>> {
    let file = std::fs::File::open(path).map_err(|e| CorefError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorefError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CorefError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}
