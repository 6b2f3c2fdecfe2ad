//! Documents, mentions and clusters, plus corpus I/O.
//!
//! All positions are word-token indices into [`Document::tokens`]; mention
//! ends are inclusive.

mod conll;
mod predictions;
pub mod synthetic;

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{CorefError, Result};

pub use conll::{parse_conll, parse_conll_str, write_conll};
pub use predictions::{read_predictions, write_predictions, DocPrediction};

/// Inclusive token span.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

impl From<(usize, usize)> for Span {
    fn from((start, end): (usize, usize)) -> Self {
        Span::new(start, end)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub p_start: Option<f64>,
    pub p_end: Option<f64>,
}

impl Mention {
    pub fn span(&self) -> Span {
        Span::new(self.start, self.end)
    }

    pub fn with_probs(mut self, p_start: f64, p_end: f64) -> Self {
        self.p_start = Some(p_start);
        self.p_end = Some(p_end);
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub mentions: Vec<Mention>,
    /// Probabilities of the accepted assignment decisions that built this
    /// cluster (`len = mentions - 1` when produced by the clusterer).
    pub pair_probs: Vec<f64>,
}

impl Cluster {
    pub fn new(mentions: Vec<Mention>) -> Self {
        let mut c = Self { mentions, pair_probs: Vec::new() };
        c.normalize();
        c
    }

    pub fn len(&self) -> usize {
        self.mentions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mentions.is_empty()
    }

    pub fn spans(&self) -> Vec<Span> {
        self.mentions.iter().map(Mention::span).collect()
    }

    /// Sorts by `(start, end)` and drops repeated spans.
    pub fn normalize(&mut self) {
        self.mentions.sort_by_key(|m| (m.start, m.end));
        self.mentions.dedup_by_key(|m| (m.start, m.end));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentStrategy {
    Independent,
    Overlapping,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub doc_id: String,
    pub seg_index: usize,
    pub token_range: Range<usize>,
    pub has_cls: bool,
    pub has_sep: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
    /// Strictly increasing EOS token indices; the last entry is always
    /// `tokens.len() - 1`.
    pub sentence_ends: Vec<usize>,
    pub gold_clusters: Vec<Cluster>,
    pub genre: Option<String>,
    /// Gold spans that cross a sentence break. They are kept in
    /// `gold_clusters` and listed here for inspection.
    pub cross_sentence: Vec<Span>,
}

impl Document {
    /// Builds a validated document. The final token is always treated as an
    /// EOS, whether or not `sentence_ends` lists it.
    pub fn new(
        doc_id: impl Into<String>,
        tokens: Vec<String>,
        mut sentence_ends: Vec<usize>,
        gold: Vec<Vec<Span>>,
    ) -> Result<Self> {
        let doc_id = doc_id.into();
        if tokens.is_empty() {
            return Err(CorefError::Validation(format!("document {doc_id} has no tokens")));
        }
        let last = tokens.len() - 1;
        if sentence_ends.last() != Some(&last) {
            sentence_ends.push(last);
        }
        if sentence_ends.windows(2).any(|w| w[0] >= w[1]) || sentence_ends.iter().any(|&e| e > last) {
            return Err(CorefError::Validation(format!(
                "document {doc_id}: sentence ends must be strictly increasing and < {}",
                tokens.len()
            )));
        }
        let mut doc = Document {
            doc_id,
            tokens,
            sentence_ends,
            gold_clusters: Vec::new(),
            genre: None,
            cross_sentence: Vec::new(),
        };
        let mut clusters = Vec::with_capacity(gold.len());
        for spans in gold {
            let mentions = spans
                .into_iter()
                .map(|s| doc.mention(s.start, s.end))
                .collect::<Result<Vec<_>>>()?;
            if !mentions.is_empty() {
                clusters.push(Cluster::new(mentions));
            }
        }
        clusters.sort_by_key(|c| (c.mentions[0].start, c.mentions[0].end));
        doc.cross_sentence = clusters
            .iter()
            .flat_map(|c| c.spans())
            .filter(|s| doc.sentence_of(s.start) != doc.sentence_of(s.end))
            .collect();
        for span in &doc.cross_sentence {
            log::warn!("{}: gold mention {:?} crosses a sentence break", doc.doc_id, span);
        }
        doc.gold_clusters = clusters;
        Ok(doc)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Mention over `tokens[start..=end]` without detection probabilities.
    pub fn mention(&self, start: usize, end: usize) -> Result<Mention> {
        if start > end || end >= self.tokens.len() {
            return Err(CorefError::Validation(format!(
                "span [{start}, {end}] out of range for {} ({} tokens)",
                self.doc_id,
                self.tokens.len()
            )));
        }
        Ok(Mention {
            start,
            end,
            text: self.tokens[start..=end].join(" "),
            p_start: None,
            p_end: None,
        })
    }

    /// Index of the sentence containing `token`.
    pub fn sentence_of(&self, token: usize) -> usize {
        self.sentence_ends.partition_point(|&e| e < token)
    }

    /// Token range of sentence `idx`.
    pub fn sentence_range(&self, idx: usize) -> Range<usize> {
        let start = if idx == 0 { 0 } else { self.sentence_ends[idx - 1] + 1 };
        start..self.sentence_ends[idx] + 1
    }

    pub fn num_sentences(&self) -> usize {
        self.sentence_ends.len()
    }

    pub fn gold_mentions(&self) -> BTreeSet<Span> {
        self.gold_clusters.iter().flat_map(|c| c.spans()).collect()
    }

    pub fn gold_partition(&self) -> Vec<Vec<Span>> {
        self.gold_clusters.iter().map(|c| c.spans()).collect()
    }

    /// Gold cluster index for every gold span.
    pub fn gold_cluster_index(&self) -> HashMap<Span, usize> {
        let mut out = HashMap::new();
        for (i, c) in self.gold_clusters.iter().enumerate() {
            for s in c.spans() {
                out.entry(s).or_insert(i);
            }
        }
        out
    }
}

/// Distance from `token` to the first EOS at or after it.
pub fn eos_distance(doc: &Document, token: usize) -> usize {
    let idx = doc.sentence_of(token);
    doc.sentence_ends[idx] - token
}

/// Splits a document into encoder windows of `window` positions, two of
/// which are reserved for the CLS and SEP markers.
///
/// `Independent` yields disjoint consecutive ranges. `Overlapping` slides by
/// `floor(payload / 2)` tokens, so consecutive windows share
/// `payload - stride` tokens; the last window may be shorter.
pub fn segment_document(doc: &Document, strategy: SegmentStrategy, window: usize) -> Result<Vec<Segment>> {
    if window < 3 {
        return Err(CorefError::Config(format!(
            "window size {window} leaves no room for tokens besides CLS/SEP"
        )));
    }
    let payload = window - 2;
    let n = doc.len();
    let stride = match strategy {
        SegmentStrategy::Independent => payload,
        SegmentStrategy::Overlapping => (payload / 2).max(1),
    };
    let mut ranges = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + payload).min(n);
        ranges.push(start..end);
        if end >= n {
            break;
        }
        start += stride;
    }
    Ok(ranges
        .into_iter()
        .enumerate()
        .map(|(seg_index, token_range)| Segment {
            doc_id: doc.doc_id.clone(),
            seg_index,
            token_range,
            has_cls: true,
            has_sep: true,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn toy_doc(n: usize, ends: Vec<usize>) -> Document {
        let tokens = (0..n).map(|i| format!("w{i}")).collect();
        Document::new("d", tokens, ends, vec![]).unwrap()
    }

    #[test]
    fn eos_distance_examples() {
        let doc = toy_doc(10, vec![4, 9]);
        assert_eq!(eos_distance(&doc, 2), 2);
        assert_eq!(eos_distance(&doc, 4), 0);
        assert_eq!(eos_distance(&doc, 7), 2);
    }

    #[test]
    fn final_token_is_always_eos() {
        let doc = toy_doc(6, vec![2]);
        assert_eq!(doc.sentence_ends, vec![2, 5]);
        assert_eq!(eos_distance(&doc, 5), 0);
    }

    #[test]
    fn document_rejects_bad_input() {
        assert!(Document::new("d", vec![], vec![], vec![]).is_err());
        let toks = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        assert!(Document::new("d", toks.clone(), vec![1, 1, 2], vec![]).is_err());
        assert!(Document::new("d", toks, vec![], vec![vec![Span::new(1, 3)]]).is_err());
    }

    #[test]
    fn cross_sentence_gold_is_flagged_and_kept() {
        let toks = (0..6).map(|i| i.to_string()).collect();
        let doc = Document::new("d", toks, vec![2, 5], vec![vec![Span::new(1, 3), Span::new(5, 5)]]).unwrap();
        assert_eq!(doc.cross_sentence, vec![Span::new(1, 3)]);
        assert_eq!(doc.gold_clusters[0].len(), 2);
    }

    #[test]
    fn mention_text_joins_tokens() {
        let doc = toy_doc(5, vec![4]);
        assert_eq!(doc.mention(1, 3).unwrap().text, "w1 w2 w3");
        assert!(doc.mention(3, 1).is_err());
        assert!(doc.mention(2, 5).is_err());
    }

    #[test]
    fn independent_segments_divide_exactly() {
        let doc = toy_doc(10, vec![9]);
        let segs = segment_document(&doc, SegmentStrategy::Independent, 7).unwrap();
        let ranges: Vec<_> = segs.iter().map(|s| s.token_range.clone()).collect();
        assert_eq!(ranges, vec![0..5, 5..10]);
        assert!(segs.iter().all(|s| s.has_cls && s.has_sep));
    }

    #[test]
    fn overlapping_segments_cover_with_half_window_stride() {
        let doc = toy_doc(10, vec![9]);
        let segs = segment_document(&doc, SegmentStrategy::Overlapping, 7).unwrap();
        let ranges: Vec<_> = segs.iter().map(|s| s.token_range.clone()).collect();
        // payload 5, stride floor(5/2) = 2
        assert_eq!(ranges, vec![0..5, 2..7, 4..9, 6..10]);
        let mut covered = vec![false; 10];
        for r in &ranges {
            for t in r.clone() {
                covered[t] = true;
            }
        }
        assert!(covered.iter().all(|&c| c));
        for w in ranges.windows(2) {
            assert_eq!(w[0].start + 2, w[1].start);
        }
    }

    #[test]
    fn short_document_is_one_segment() {
        let doc = toy_doc(3, vec![2]);
        for strategy in [SegmentStrategy::Independent, SegmentStrategy::Overlapping] {
            let segs = segment_document(&doc, strategy, 512).unwrap();
            assert_eq!(segs.len(), 1);
            assert_eq!(segs[0].token_range, 0..3);
        }
    }

    #[test]
    fn tiny_window_is_a_config_error() {
        let doc = toy_doc(3, vec![2]);
        assert!(matches!(
            segment_document(&doc, SegmentStrategy::Independent, 1),
            Err(CorefError::Config(_))
        ));
    }

    proptest! {
        #[test]
        fn segmentation_covers_every_token(n in 1usize..200, window in 3usize..40, overlap in any::<bool>()) {
            let doc = toy_doc(n, vec![n - 1]);
            let strategy = if overlap { SegmentStrategy::Overlapping } else { SegmentStrategy::Independent };
            let segs = segment_document(&doc, strategy, window).unwrap();
            let mut count = vec![0usize; n];
            for s in &segs {
                prop_assert!(s.token_range.len() <= window - 2);
                prop_assert!(!s.token_range.is_empty());
                for t in s.token_range.clone() {
                    count[t] += 1;
                }
            }
            prop_assert!(count.iter().all(|&c| c >= 1));
            if !overlap {
                prop_assert!(count.iter().all(|&c| c == 1));
                prop_assert_eq!(segs.len(), n.div_ceil(window - 2));
            } else {
                let payload = window - 2;
                let stride = (payload / 2).max(1);
                for w in segs.windows(2) {
                    prop_assert_eq!(w[1].token_range.start - w[0].token_range.start, stride);
                }
            }
        }

        #[test]
        fn eos_distance_zero_iff_eos(n in 1usize..60, cuts in proptest::collection::btree_set(0usize..60, 0..10)) {
            let ends: Vec<usize> = cuts.into_iter().filter(|&c| c < n).collect();
            let doc = toy_doc(n, ends);
            for t in 0..n {
                let is_eos = doc.sentence_ends.contains(&t);
                prop_assert_eq!(eos_distance(&doc, t) == 0, is_eos);
            }
        }
    }
}
