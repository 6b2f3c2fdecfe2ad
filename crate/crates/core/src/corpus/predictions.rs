use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cluster, Document};
use crate::error::{CorefError, Result};

const KNOWN_KEYS: [&str; 3] = ["doc_id", "clusters", "pair_probs"];

/// One line of a predictions file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocPrediction {
    pub doc_id: String,
    pub clusters: Vec<Vec<[usize; 2]>>,
    pub pair_probs: Vec<Vec<f64>>,
}

impl DocPrediction {
    pub fn from_clusters(doc_id: impl Into<String>, clusters: &[Cluster]) -> Self {
        Self {
            doc_id: doc_id.into(),
            clusters: clusters
                .iter()
                .map(|c| c.mentions.iter().map(|m| [m.start, m.end]).collect())
                .collect(),
            pair_probs: clusters.iter().map(|c| c.pair_probs.clone()).collect(),
        }
    }

    /// Checks span ordering and, when `doc` is given, that spans fit it.
    pub fn validate(&self, doc: Option<&Document>) -> Result<()> {
        if self.pair_probs.len() != self.clusters.len() {
            return Err(CorefError::Validation(format!(
                "{}: {} clusters but {} pair_probs entries",
                self.doc_id,
                self.clusters.len(),
                self.pair_probs.len()
            )));
        }
        for &[s, e] in self.clusters.iter().flatten() {
            if s > e {
                return Err(CorefError::Validation(format!("{}: span [{s}, {e}] has start > end", self.doc_id)));
            }
            if let Some(doc) = doc {
                if e >= doc.len() {
                    return Err(CorefError::Validation(format!(
                        "{}: span [{s}, {e}] outside {} tokens",
                        self.doc_id,
                        doc.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Rebuilds clusters with surface text taken from `doc`.
    pub fn to_clusters(&self, doc: &Document) -> Result<Vec<Cluster>> {
        self.validate(Some(doc))?;
        self.clusters
            .iter()
            .zip(&self.pair_probs)
            .map(|(spans, probs)| {
                let mentions = spans.iter().map(|&[s, e]| doc.mention(s, e)).collect::<Result<Vec<_>>>()?;
                let mut c = Cluster::new(mentions);
                c.pair_probs = probs.clone();
                Ok(c)
            })
            .collect()
    }
}

pub fn write_predictions(preds: &[DocPrediction], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| CorefError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in preds {
        p.validate(None)?;
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| CorefError::io(path, e))?;
    }
    w.flush().map_err(|e| CorefError::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<DocPrediction>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| CorefError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorefError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| CorefError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if let Some(obj) = value.as_object() {
            for key in obj.keys().filter(|k| !KNOWN_KEYS.contains(&k.as_str())) {
                log::warn!("{}:{}: ignoring unknown key {key:?}", path.display(), i + 1);
            }
        }
        let pred: DocPrediction = serde_json::from_value(value).map_err(|e| CorefError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        pred.validate(None)?;
        out.push(pred);
    }
    Ok(out)
}
