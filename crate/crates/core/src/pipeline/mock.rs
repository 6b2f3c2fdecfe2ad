//! Offline stand-ins for the LLM endpoint.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use crate::agent::{AgentExchange, ExchangeKind, LlmClient, LlmRequest, Parsed, TargetRef};
use crate::corpus::{Document, Span};
use crate::error::{CorefError, Result};

pub const YES_REPLY: &str = "Consistent with context. Yes";
pub const NO_REPLY: &str = "Inconsistent with context. No";

enum Mode {
    AllYes,
    AllNo,
    GoldBacked(HashMap<String, GoldView>),
    Scripted(Mutex<Script>),
}

struct GoldView {
    cluster_of: HashMap<Span, usize>,
}

struct Script {
    entries: Vec<(ExchangeKind, Option<String>, Option<String>)>,
    used: Vec<bool>,
    served: usize,
}

/// Deterministic replies in the same surface format a real model is asked
/// to produce, so the reply parsers are always exercised.
pub struct MockLlm {
    mode: Mode,
}

impl MockLlm {
    pub fn all_yes() -> Self {
        Self { mode: Mode::AllYes }
    }

    /// Rejects every check. Regroup requests get a failure reply.
    pub fn all_no() -> Self {
        Self { mode: Mode::AllNo }
    }

    /// Answers from the gold annotation of each document: a mention is
    /// valid iff it is a gold mention, a cluster is valid iff all of its
    /// mentions share one gold cluster, and a regrouping follows gold
    /// identity with every non-gold mention on its own.
    pub fn gold_backed<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let views = docs
            .into_iter()
            .map(|d| (d.doc_id.clone(), GoldView { cluster_of: d.gold_cluster_index() }))
            .collect();
        Self { mode: Mode::GoldBacked(views) }
    }

    /// Replays recorded replies. A request is matched to the first unused
    /// record with the same kind and prompt. A record whose reply failed in
    /// transport replays as a failure.
    pub fn scripted(records: &[AgentExchange]) -> Self {
        let entries = records
            .iter()
            .map(|x| {
                let reply = match (&x.parsed, x.raw_reply.is_empty()) {
                    (Parsed::Error(_), true) => None,
                    _ => Some(x.raw_reply.clone()),
                };
                (x.kind, Some(x.prompt.clone()), reply)
            })
            .collect();
        Self::from_script(entries)
    }

    /// Replies handed out in order to any request of the matching kind.
    pub fn scripted_replies(replies: Vec<(ExchangeKind, String)>) -> Self {
        Self::from_script(replies.into_iter().map(|(k, r)| (k, None, Some(r))).collect())
    }

    fn from_script(entries: Vec<(ExchangeKind, Option<String>, Option<String>)>) -> Self {
        let used = vec![false; entries.len()];
        Self { mode: Mode::Scripted(Mutex::new(Script { entries, used, served: 0 })) }
    }

    fn gold_reply(view: &GoldView, req: &LlmRequest) -> String {
        match (&req.target, req.kind) {
            (TargetRef::Mention(span), _) => {
                if view.cluster_of.contains_key(span) {
                    "The span matches an annotated entity mention. Yes".into()
                } else {
                    "The span is not an annotated entity mention. No".into()
                }
            }
            (TargetRef::Cluster { spans, .. }, ExchangeKind::ClusterSplit) => {
                let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
                for (i, s) in spans.iter().enumerate() {
                    let key = match view.cluster_of.get(s) {
                        Some(&c) => (0, c),
                        None => (1, i),
                    };
                    groups.entry(key).or_default().push(i + 1);
                }
                let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
                groups.sort_by_key(|g| g[0]);
                let text = groups
                    .iter()
                    .map(|g| format!("[{}]", g.iter().map(|n| format!("#{n}")).collect::<Vec<_>>().join(",")))
                    .collect::<Vec<_>>()
                    .join(", ");
                format!("Mentions are regrouped by annotated entity. {text}")
            }
            (TargetRef::Cluster { spans, .. }, _) => {
                let first = view.cluster_of.get(&spans[0]);
                if first.is_some() && spans.iter().all(|s| view.cluster_of.get(s) == first) {
                    "All mentions belong to one annotated entity. Yes".into()
                } else {
                    "The mentions span several annotated entities. No".into()
                }
            }
        }
    }
}

impl LlmClient for MockLlm {
    fn complete(&self, req: &LlmRequest) -> Result<String> {
        match &self.mode {
            Mode::AllYes => Ok(YES_REPLY.into()),
            Mode::AllNo if req.kind == ExchangeKind::ClusterSplit => {
                Ok("Correction failed: the mock oracle never regroups".into())
            }
            Mode::AllNo => Ok(NO_REPLY.into()),
            Mode::GoldBacked(views) => views
                .get(&req.doc_id)
                .map(|v| Self::gold_reply(v, req))
                .ok_or_else(|| CorefError::Llm(format!("no gold annotation for document {}", req.doc_id))),
            Mode::Scripted(script) => {
                let mut s = script.lock().expect("script lock poisoned");
                let hit = (0..s.entries.len()).find(|&i| {
                    let (kind, prompt, _) = &s.entries[i];
                    !s.used[i] && *kind == req.kind && prompt.as_ref().is_none_or(|p| *p == req.prompt)
                });
                let Some(i) = hit else {
                    return Err(CorefError::ScriptExhausted(s.served));
                };
                s.used[i] = true;
                s.served += 1;
                s.entries[i].2.clone().ok_or_else(|| CorefError::Llm("recorded transport failure".into()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{parse_regrouping, parse_verdict, Regrouping, VerdictValue};

    fn doc() -> Document {
        let tokens: Vec<String> = "Ann met Bob . She saw him .".split(' ').map(String::from).collect();
        let gold = vec![vec![Span::new(0, 0), Span::new(4, 4)], vec![Span::new(2, 2), Span::new(6, 6)]];
        Document::new("d", tokens, vec![3], gold).unwrap()
    }

    fn req(kind: ExchangeKind, target: TargetRef) -> LlmRequest {
        LlmRequest { doc_id: "d".into(), kind, prompt: "p".into(), target }
    }

    #[test]
    fn gold_backed_replies_parse() {
        let d = doc();
        let mock = MockLlm::gold_backed([&d]);
        let verdict = |kind, target| parse_verdict(&mock.complete(&req(kind, target)).unwrap()).unwrap().value;
        assert_eq!(verdict(ExchangeKind::MentionCheck, TargetRef::Mention(Span::new(0, 0))), VerdictValue::Yes);
        assert_eq!(verdict(ExchangeKind::MentionCheck, TargetRef::Mention(Span::new(1, 1))), VerdictValue::No);
        let pure = TargetRef::Cluster { id: 0, spans: vec![Span::new(0, 0), Span::new(4, 4)] };
        assert_eq!(verdict(ExchangeKind::ClusterCheck, pure), VerdictValue::Yes);
        let mixed = vec![Span::new(0, 0), Span::new(1, 1), Span::new(2, 2), Span::new(4, 4), Span::new(6, 6)];
        let target = TargetRef::Cluster { id: 0, spans: mixed };
        assert_eq!(verdict(ExchangeKind::ClusterCheck, target.clone()), VerdictValue::No);
        let reply = mock.complete(&req(ExchangeKind::ClusterSplit, target)).unwrap();
        assert!(reply.ends_with("[#1,#4], [#2], [#3,#5]"));
        assert_eq!(parse_regrouping(&reply, 5).unwrap(), Regrouping::Groups(vec![vec![1, 4], vec![2], vec![3, 5]]));
        let mut other = req(ExchangeKind::MentionCheck, TargetRef::Mention(Span::new(0, 0)));
        other.doc_id = "unknown".into();
        assert!(mock.complete(&other).is_err());
    }

    #[test]
    fn fixed_modes() {
        let r = req(ExchangeKind::MentionCheck, TargetRef::Mention(Span::new(0, 0)));
        assert_eq!(MockLlm::all_yes().complete(&r).unwrap(), YES_REPLY);
        assert_eq!(parse_verdict(&MockLlm::all_no().complete(&r).unwrap()).unwrap().value, VerdictValue::No);
        let split = req(ExchangeKind::ClusterSplit, TargetRef::Cluster { id: 0, spans: vec![] });
        let reply = MockLlm::all_no().complete(&split).unwrap();
        assert!(matches!(parse_regrouping(&reply, 2).unwrap(), Regrouping::Failed(_)));
    }

    #[test]
    fn scripts_run_out() {
        let mock = MockLlm::scripted_replies(vec![(ExchangeKind::MentionCheck, "ok. Yes".into())]);
        let r = req(ExchangeKind::MentionCheck, TargetRef::Mention(Span::new(0, 0)));
        assert_eq!(mock.complete(&r).unwrap(), "ok. Yes");
        assert!(matches!(mock.complete(&r), Err(CorefError::ScriptExhausted(1))));
    }

    #[test]
    fn scripts_match_by_prompt() {
        let record = |prompt: &str, reply: &str| AgentExchange {
            doc_id: "d".into(),
            kind: ExchangeKind::MentionCheck,
            prompt: prompt.into(),
            raw_reply: reply.into(),
            parsed: Parsed::Error(String::new()),
            target_ref: TargetRef::Mention(Span::new(0, 0)),
            attempt: 1,
        };
        let mock = MockLlm::scripted(&[record("a", "A. Yes"), record("b", "B. No"), record("c", "")]);
        let mut r = req(ExchangeKind::MentionCheck, TargetRef::Mention(Span::new(0, 0)));
        r.prompt = "b".into();
        assert_eq!(mock.complete(&r).unwrap(), "B. No");
        r.prompt = "a".into();
        assert_eq!(mock.complete(&r).unwrap(), "A. Yes");
        r.prompt = "c".into();
        assert!(matches!(mock.complete(&r), Err(CorefError::Llm(_))));
        assert!(matches!(mock.complete(&r), Err(CorefError::ScriptExhausted(3))));
    }
}
