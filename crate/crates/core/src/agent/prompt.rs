use serde::{Deserialize, Serialize};

use super::context::ClusterContext;

const MENTION_CHECK: &str = include_str!("../../templates/mention_check.txt");
const CLUSTER_CHECK: &str = include_str!("../../templates/cluster_check.txt");
const CLUSTER_SPLIT: &str = include_str!("../../templates/cluster_split.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExchangeKind {
    MentionCheck,
    ClusterCheck,
    ClusterSplit,
}

impl ExchangeKind {
    pub fn template(self) -> &'static str {
        match self {
            ExchangeKind::MentionCheck => MENTION_CHECK,
            ExchangeKind::ClusterCheck => CLUSTER_CHECK,
            ExchangeKind::ClusterSplit => CLUSTER_SPLIT,
        }
    }
}

pub enum Payload<'a> {
    Mention(&'a str),
    Cluster(&'a ClusterContext),
}

/// Template text, a blank line, then the input section.
///
/// # Panics
/// If a mention payload is paired with a cluster kind or vice versa.
pub fn render_prompt(kind: ExchangeKind, payload: Payload<'_>) -> String {
    let input = match (kind, payload) {
        (ExchangeKind::MentionCheck, Payload::Mention(ctx)) => format!("### Input to be Checked\n{ctx}"),
        (ExchangeKind::ClusterCheck | ExchangeKind::ClusterSplit, Payload::Cluster(c)) => {
            let verb = if kind == ExchangeKind::ClusterSplit { "Regrouped" } else { "Checked" };
            format!(
                "### Input to be {verb}\nOriginal text: \n{}\n\n\
                 Coreference cluster result (with a set of numbered mentions): \n{}\n\n\
                 Text with these numbered mentions: \n{}",
                c.original, c.numbered_list, c.marked
            )
        }
        _ => panic!("payload does not match prompt kind {kind:?}"),
    };
    format!("{}\n\n{input}", kind.template().trim_end())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Span;

    fn ctx() -> ClusterContext {
        ClusterContext {
            spans: vec![Span::new(0, 0), Span::new(2, 2)],
            original: "a b c".into(),
            numbered_list: "#1:a, #2:c".into(),
            marked: "[(#1)a](#1) b [(#2)c](#2)".into(),
        }
    }

    #[test]
    fn mention_prompt() {
        let p = render_prompt(ExchangeKind::MentionCheck, Payload::Mention("But [Jesus] said"));
        assert!(p.starts_with("Your task is to check whether a mention is valid.\n\n### Task Description\n"));
        assert!(p.contains("- **Mention**: Refers to"));
        assert!(p.contains("(e.g., \"U.S.A.\")"));
        assert!(p.ends_with("\"Reason text. Pending\".\n\n### Input to be Checked\nBut [Jesus] said"));
        assert!(!p.contains('\\'));
    }

    #[test]
    fn cluster_prompts() {
        let c = ctx();
        let check = render_prompt(ExchangeKind::ClusterCheck, Payload::Cluster(&c));
        assert!(check.contains("point to the same entity"));
        assert!(check.ends_with(
            "### Input to be Checked\nOriginal text: \na b c\n\n\
             Coreference cluster result (with a set of numbered mentions): \n#1:a, #2:c\n\n\
             Text with these numbered mentions: \n[(#1)a](#1) b [(#2)c](#2)"
        ));
        let split = render_prompt(ExchangeKind::ClusterSplit, Payload::Cluster(&c));
        assert!(split.starts_with("Your task is to regroup a coreference cluster."));
        assert!(split.contains("**Intra-group Consistency**"));
        assert!(split.contains("[#1,#2,#4], [#3,#5]"));
        assert!(split.contains("### Input to be Regrouped\n"));
    }

    #[test]
    #[should_panic]
    fn mismatched_payload_panics() {
        render_prompt(ExchangeKind::ClusterCheck, Payload::Mention("x"));
    }
}
