//! Bracketed text views of mentions and clusters.

use crate::corpus::{Cluster, Document, Mention, Span};

/// Host sentence of `m` plus up to `n_prev` preceding sentences, with the
/// mention wrapped in `[` and `]`.
pub fn annotate_mention_context(doc: &Document, m: &Mention, n_prev: usize) -> String {
    let host = doc.sentence_of(m.start);
    let first = host.saturating_sub(n_prev);
    let range = doc.sentence_range(first).start..doc.sentence_range(host).end;
    let mut words = Vec::with_capacity(range.len());
    for t in range {
        let mut w = doc.tokens[t].clone();
        if t == m.start {
            w.insert(0, '[');
        }
        if t == m.end {
            w.push(']');
        }
        words.push(w);
    }
    words.join(" ")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterContext {
    /// Spans in numbering order: `#1` is `spans[0]`.
    pub spans: Vec<Span>,
    pub original: String,
    pub numbered_list: String,
    pub marked: String,
}

/// Numbers the cluster's mentions in document order and marks each one as
/// `[(#X)...](#X)` inside the sentence window spanning all of them.
pub fn annotate_cluster_context(doc: &Document, c: &Cluster) -> ClusterContext {
    let mut spans = c.spans();
    spans.sort();
    spans.dedup();
    let first = spans.iter().map(|s| doc.sentence_of(s.start)).min().unwrap_or(0);
    let last = spans.iter().map(|s| doc.sentence_of(s.end)).max().unwrap_or(0);
    let range = doc.sentence_range(first).start..doc.sentence_range(last).end;

    let numbered_list = spans
        .iter()
        .enumerate()
        .map(|(i, s)| format!("#{}:{}", i + 1, doc.tokens[s.start..=s.end].join(" ")))
        .collect::<Vec<_>>()
        .join(", ");

    let mut marked = Vec::with_capacity(range.len());
    for t in range.clone() {
        let mut opens: Vec<(usize, &Span)> = spans.iter().enumerate().filter(|(_, s)| s.start == t).collect();
        opens.sort_by(|a, b| b.1.end.cmp(&a.1.end));
        let mut closes: Vec<(usize, &Span)> = spans.iter().enumerate().filter(|(_, s)| s.end == t).collect();
        closes.sort_by(|a, b| b.1.start.cmp(&a.1.start));
        let mut w = String::new();
        for (i, _) in opens {
            w.push_str(&format!("[(#{})", i + 1));
        }
        w.push_str(&doc.tokens[t]);
        for (i, _) in closes {
            w.push_str(&format!("](#{})", i + 1));
        }
        marked.push(w);
    }

    ClusterContext {
        spans,
        original: doc.tokens[range].join(" "),
        numbered_list,
        marked: marked.join(" "),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use regex::Regex;

    fn doc() -> Document {
        let text = "He answered . The Son of Man can rest his head . '' Jesus said to another man , `` Follow me ! ''";
        let tokens: Vec<String> = text.split(' ').map(String::from).collect();
        let ends: Vec<usize> = tokens.iter().enumerate().filter(|(_, t)| *t == ".").map(|(i, _)| i).collect();
        Document::new("d", tokens, ends, vec![]).unwrap()
    }

    #[test]
    fn mention_context_brackets_one_span() {
        let d = doc();
        let m = d.mention(16, 17).unwrap();
        assert_eq!(m.text, "another man");
        assert_eq!(
            annotate_mention_context(&d, &m, 0),
            "'' Jesus said to [another man] , `` Follow me ! ''"
        );
        let wide = annotate_mention_context(&d, &m, 2);
        assert!(wide.starts_with("He answered ."));
        assert_eq!(wide.matches('[').count(), 1);
        let first = d.mention(0, 0).unwrap();
        assert_eq!(annotate_mention_context(&d, &first, 2), "[He] answered .");
    }

    #[test]
    fn cluster_context_numbers_and_marks() {
        let d = doc();
        let c = Cluster::new(vec![d.mention(13, 13).unwrap(), d.mention(9, 9).unwrap()]);
        let ctx = annotate_cluster_context(&d, &c);
        assert_eq!(ctx.numbered_list, "#1:his, #2:Jesus");
        assert!(ctx.marked.contains("rest [(#1)his](#1) head . '' [(#2)Jesus](#2) said"));
        assert!(ctx.original.starts_with("The Son of Man"));
        assert!(ctx.original.ends_with("! ''"));
    }

    /// Pops matching `[(#X)` / `](#X)` pairs; returns the unmarked text.
    fn check_balance(marked: &str) -> Option<String> {
        let re = Regex::new(r"\[\(#(\d+)\)|\]\(#(\d+)\)").unwrap();
        let mut stack = Vec::new();
        for cap in re.captures_iter(marked) {
            if let Some(open) = cap.get(1) {
                stack.push(open.as_str().to_string());
            } else if stack.pop()? != cap[2] {
                return None;
            }
        }
        stack.is_empty().then(|| re.replace_all(marked, "").into_owned())
    }

    #[test]
    fn nested_spans_are_well_nested() {
        let d = doc();
        let c = Cluster::new(vec![d.mention(3, 6).unwrap(), d.mention(3, 3).unwrap(), d.mention(4, 6).unwrap()]);
        let ctx = annotate_cluster_context(&d, &c);
        assert!(ctx.marked.contains("[(#2)[(#1)The](#1) [(#3)Son of Man](#3)](#2)"));
        assert_eq!(check_balance(&ctx.marked).as_deref(), Some(ctx.original.as_str()));
    }

    #[test]
    fn single_sentence_window() {
        let d = doc();
        let c = Cluster::new(vec![d.mention(3, 6).unwrap(), d.mention(9, 9).unwrap()]);
        let ctx = annotate_cluster_context(&d, &c);
        assert_eq!(ctx.original, "The Son of Man can rest his head .");
        assert_eq!(check_balance(&ctx.marked).unwrap(), ctx.original);
    }
}
