use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{CorefError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictValue {
    Yes,
    No,
    Pending,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub value: VerdictValue,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regrouping {
    /// 1-based mention numbers, ascending within each group.
    Groups(Vec<Vec<usize>>),
    Failed(String),
}

const FAILURE_MARKER: &str = "Correction failed:";

static GROUP: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\[\s*#?\s*\d+(?:\s*,\s*#?\s*\d+)*\s*,?\s*\]").unwrap());
static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").unwrap());

/// Reads the judgment from the reply's final word.
pub fn parse_verdict(raw: &str) -> Result<Verdict> {
    let body = raw.trim_end_matches(|c: char| !c.is_alphanumeric());
    let split = body.rfind(char::is_whitespace).map_or(0, |i| i + 1);
    let word = body[split..].trim_start_matches(|c: char| !c.is_alphanumeric());
    let value = match word.to_ascii_lowercase().as_str() {
        "yes" => VerdictValue::Yes,
        "no" => VerdictValue::No,
        "pending" => VerdictValue::Pending,
        _ => return Err(CorefError::Verdict(raw.chars().rev().take(60).collect::<Vec<_>>().into_iter().rev().collect())),
    };
    Ok(Verdict { value, reason: body[..split].trim().to_string() })
}

/// Reads the trailing run of `[#a,#b,...]` groups and checks that they
/// partition `1..=k`.
pub fn parse_regrouping(raw: &str, k: usize) -> Result<Regrouping> {
    if let Some(pos) = raw.find(FAILURE_MARKER) {
        return Ok(Regrouping::Failed(raw[pos + FAILURE_MARKER.len()..].trim().to_string()));
    }
    let matches: Vec<regex::Match> = GROUP.find_iter(raw).collect();
    let Some(last) = matches.last() else {
        return Err(CorefError::Regrouping("no bracketed groups in reply".into()));
    };
    if !raw[last.end()..].chars().all(|c| c.is_whitespace() || ".,;".contains(c)) {
        return Err(CorefError::Regrouping("reply does not end with the grouping".into()));
    }
    let mut first = matches.len() - 1;
    while first > 0 && raw[matches[first - 1].end()..matches[first].start()].chars().all(|c| c.is_whitespace() || c == ',') {
        first -= 1;
    }

    let mut seen = vec![false; k + 1];
    let mut groups = Vec::new();
    for m in &matches[first..] {
        let mut group = Vec::new();
        for n in NUMBER.find_iter(m.as_str()) {
            let n: usize = n.as_str().parse().map_err(|_| CorefError::Regrouping(format!("bad number {}", n.as_str())))?;
            if n == 0 || n > k {
                return Err(CorefError::Regrouping(format!("#{n} is outside 1..={k}")));
            }
            if std::mem::replace(&mut seen[n], true) {
                return Err(CorefError::Regrouping(format!("#{n} appears twice")));
            }
            group.push(n);
        }
        group.sort_unstable();
        groups.push(group);
    }
    if let Some(missing) = (1..=k).find(|&n| !seen[n]) {
        return Err(CorefError::Regrouping(format!("#{missing} is missing")));
    }
    Ok(Regrouping::Groups(groups))
}
