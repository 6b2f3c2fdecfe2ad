use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use regex::Regex;

use super::{Document, Span};
use crate::error::{CorefError, Result};

/// Reads every `#begin document` block of a CoNLL-2012 style file.
pub fn parse_conll(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| CorefError::io(path, e))?;
    parse_conll_str(&text, &path.display().to_string())
}

struct OpenDoc {
    name: String,
    genre: Option<String>,
    begin_line: usize,
    tokens: Vec<String>,
    sentence_ends: Vec<usize>,
    open: HashMap<u64, Vec<(usize, usize)>>,
    clusters: BTreeMap<u64, Vec<Span>>,
}

impl OpenDoc {
    fn break_sentence(&mut self) {
        if let Some(last) = self.tokens.len().checked_sub(1) {
            if self.sentence_ends.last() != Some(&last) {
                self.sentence_ends.push(last);
            }
        }
    }
}

enum Marker {
    Open(u64),
    Close(u64),
    Single(u64),
}

fn parse_coref_column(col: &str) -> Option<Vec<Marker>> {
    if col == "-" || col == "_" {
        return Some(Vec::new());
    }
    col.split('|')
        .map(|part| {
            let opens = part.starts_with('(');
            let closes = part.ends_with(')');
            let inner = part.trim_start_matches('(').trim_end_matches(')');
            let id = inner.parse::<u64>().ok()?;
            match (opens, closes) {
                (true, true) => Some(Marker::Single(id)),
                (true, false) => Some(Marker::Open(id)),
                (false, true) => Some(Marker::Close(id)),
                (false, false) => None,
            }
        })
        .collect()
}

/// Parses CoNLL text; `source` names the input in error messages.
pub fn parse_conll_str(text: &str, source: &str) -> Result<Vec<Document>> {
    let begin_re = Regex::new(r"^#begin document\s*\(?([^)]*?)\)?;?\s*(?:part\s+(\S+))?\s*$").expect("valid regex");
    let err = |line: usize, msg: String| CorefError::Parse { path: source.to_string(), line, msg };

    let mut docs = Vec::new();
    let mut current: Option<OpenDoc> = None;

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end();
        if line.starts_with("#begin document") {
            if current.is_some() {
                return Err(err(lineno, "nested #begin document".into()));
            }
            let caps = begin_re
                .captures(line)
                .ok_or_else(|| err(lineno, format!("unreadable document header {line:?}")))?;
            let base = caps.get(1).map_or("", |m| m.as_str()).trim();
            let name = match caps.get(2) {
                Some(part) => format!("{base}_{}", part.as_str()),
                None => base.to_string(),
            };
            let genre = base.split_once('/').map(|(g, _)| g.to_string());
            current = Some(OpenDoc {
                name,
                genre,
                begin_line: lineno,
                tokens: Vec::new(),
                sentence_ends: Vec::new(),
                open: HashMap::new(),
                clusters: BTreeMap::new(),
            });
            continue;
        }
        if line.starts_with("#end document") {
            let doc = current
                .take()
                .ok_or_else(|| err(lineno, "#end document without #begin".into()))?;
            docs.push(finish(doc, lineno, source)?);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        if line.trim().is_empty() {
            if let Some(doc) = current.as_mut() {
                doc.break_sentence();
            }
            continue;
        }
        let doc = current
            .as_mut()
            .ok_or_else(|| err(lineno, "token line outside a document".into()))?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() < 2 {
            return Err(err(lineno, "expected a token column and a coreference column".into()));
        }
        let word = if cols.len() >= 4 { cols[3] } else { cols[0] };
        let coref = cols[cols.len() - 1];
        let markers = parse_coref_column(coref)
            .ok_or_else(|| err(lineno, format!("malformed coreference column {coref:?}")))?;
        let t = doc.tokens.len();
        doc.tokens.push(word.to_string());
        for marker in markers {
            match marker {
                Marker::Open(id) => doc.open.entry(id).or_default().push((t, lineno)),
                Marker::Single(id) => doc.clusters.entry(id).or_default().push(Span::new(t, t)),
                Marker::Close(id) => {
                    let (start, _) = doc
                        .open
                        .get_mut(&id)
                        .and_then(Vec::pop)
                        .ok_or_else(|| err(lineno, format!("cluster {id} closed without being opened")))?;
                    doc.clusters.entry(id).or_default().push(Span::new(start, t));
                }
            }
        }
    }

    if let Some(doc) = current {
        return Err(err(doc.begin_line, format!("document {} has no #end document", doc.name)));
    }
    Ok(docs)
}

fn finish(mut doc: OpenDoc, end_line: usize, source: &str) -> Result<Document> {
    if let Some((id, &(_, line))) = doc
        .open
        .iter()
        .filter_map(|(id, stack)| stack.first().map(|s| (id, s)))
        .min_by_key(|(_, (_, line))| *line)
    {
        return Err(CorefError::Parse {
            path: source.to_string(),
            line,
            msg: format!("cluster {id} opened here is never closed"),
        });
    }
    if doc.tokens.is_empty() {
        return Err(CorefError::Parse {
            path: source.to_string(),
            line: end_line,
            msg: format!("document {} has no tokens", doc.name),
        });
    }
    doc.break_sentence();
    let gold = doc.clusters.into_values().collect();
    let mut out = Document::new(doc.name, doc.tokens, doc.sentence_ends, gold)?;
    out.genre = doc.genre;
    Ok(out)
}

/// Renders documents in a minimal two-column layout (`token coref`) that
/// [`parse_conll_str`] reads back to the same tokens, sentences and gold
/// clusters.
pub fn write_conll(docs: &[Document]) -> String {
    let mut out = String::new();
    for doc in docs {
        let _ = writeln!(out, "#begin document ({})", doc.doc_id);
        let mut markers: Vec<Vec<String>> = vec![Vec::new(); doc.len()];
        // closes first (inner before outer), then singles, then opens (outer first)
        let mut closes: Vec<(usize, usize, usize)> = Vec::new();
        let mut opens: Vec<(usize, usize, usize)> = Vec::new();
        let mut singles: Vec<(usize, usize)> = Vec::new();
        for (k, c) in doc.gold_clusters.iter().enumerate() {
            for s in c.spans() {
                if s.start == s.end {
                    singles.push((s.start, k));
                } else {
                    opens.push((s.start, s.end, k));
                    closes.push((s.end, s.start, k));
                }
            }
        }
        closes.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        opens.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        singles.sort();
        for (t, _, k) in closes {
            markers[t].push(format!("{k})"));
        }
        for (t, k) in singles {
            markers[t].push(format!("({k})"));
        }
        for (t, _, k) in opens {
            markers[t].push(format!("({k}"));
        }
        for (t, token) in doc.tokens.iter().enumerate() {
            let col = if markers[t].is_empty() { "-".to_string() } else { markers[t].join("|") };
            let _ = writeln!(out, "{token}\t{col}");
            if doc.sentence_ends.binary_search(&t).is_ok() {
                out.push('\n');
            }
        }
        out.push_str("#end document\n");
    }
    out
}
