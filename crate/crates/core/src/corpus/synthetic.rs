//! Small generated corpus with planted coreference patterns.
//!
//! Each document talks about at most one man, at most one woman and one or
//! two role nouns ("the doctor"). Names repeat verbatim, people are also
//! referred to with gendered pronouns, and role nouns repeat with their
//! article. Places and things appear in the same "the X" frame but are never
//! mentions.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Document, Span};
use crate::error::Result;

const MALE: [&str; 10] = ["John", "Peter", "David", "Paul", "Mark", "James", "Tom", "Adam", "Luke", "Simon"];
const FEMALE: [&str; 10] = ["Mary", "Anna", "Sarah", "Ruth", "Martha", "Lydia", "Grace", "Emma", "Julia", "Clara"];
const ROLES: [&str; 12] = [
    "doctor", "teacher", "farmer", "soldier", "merchant", "captain", "baker", "judge", "priest", "sailor",
    "driver", "writer",
];
const PLACES: [&str; 10] = ["park", "river", "market", "station", "church", "garden", "harbor", "office", "village", "bridge"];
const THINGS: [&str; 10] = ["book", "letter", "bread", "lamp", "coin", "basket", "key", "map", "cup", "ring"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Male(usize),
    Female(usize),
    Role(usize),
}

#[derive(Clone, Copy, Debug)]
pub struct SyntheticConfig {
    pub docs: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { docs: 50, min_sentences: 4, max_sentences: 7, seed: 13 }
    }
}

struct Builder {
    tokens: Vec<String>,
    sentence_ends: Vec<usize>,
    mentions: Vec<(usize, Span)>,
    seen: Vec<bool>,
}

impl Builder {
    fn word(&mut self, w: &str) {
        self.tokens.push(w.to_string());
    }

    fn entity(&mut self, idx: usize, kind: Kind, subject: bool, rng: &mut ChaCha8Rng) {
        let start = self.tokens.len();
        let pronoun = self.seen[idx] && rng.random_bool(0.5);
        match kind {
            Kind::Male(_) | Kind::Female(_) if pronoun => {
                let male = matches!(kind, Kind::Male(_));
                let w = match (male, subject) {
                    (true, true) => "he",
                    (true, false) => "him",
                    (false, true) => "she",
                    (false, false) => "her",
                };
                self.word(w);
            }
            Kind::Male(i) => self.word(MALE[i]),
            Kind::Female(i) => self.word(FEMALE[i]),
            Kind::Role(i) => {
                self.word("the");
                self.word(ROLES[i]);
            }
        }
        self.seen[idx] = true;
        self.mentions.push((idx, Span::new(start, self.tokens.len() - 1)));
    }

    fn end_sentence(&mut self) {
        self.word(".");
        self.sentence_ends.push(self.tokens.len() - 1);
    }
}

fn sentence(b: &mut Builder, kinds: &[Kind], rng: &mut ChaCha8Rng) {
    let n = kinds.len();
    let a = rng.random_range(0..n);
    let mut other = rng.random_range(0..n);
    if n > 1 {
        while other == a {
            other = rng.random_range(0..n);
        }
    }
    let place = *PLACES.choose(rng).expect("non-empty");
    let thing = *THINGS.choose(rng).expect("non-empty");
    match rng.random_range(0..6) {
        0 => {
            b.entity(a, kinds[a], true, rng);
            for w in ["walked", "to", "the", place] {
                b.word(w);
            }
        }
        1 if n > 1 => {
            b.entity(a, kinds[a], true, rng);
            b.word("saw");
            b.entity(other, kinds[other], false, rng);
            for w in ["near", "the", place] {
                b.word(w);
            }
        }
        2 if n > 1 => {
            b.entity(a, kinds[a], true, rng);
            b.word("gave");
            b.entity(other, kinds[other], false, rng);
            b.word("the");
            b.word(thing);
        }
        3 => {
            b.word("later");
            b.word(",");
            b.entity(a, kinds[a], true, rng);
            b.word("smiled");
        }
        4 if n > 1 => {
            b.entity(a, kinds[a], true, rng);
            b.word("said");
            b.word("that");
            b.entity(other, kinds[other], true, rng);
            b.word("liked");
            b.word("the");
            b.word(thing);
        }
        _ => {
            for w in ["the", thing, "was", "in", "the", place] {
                b.word(w);
            }
        }
    }
    b.end_sentence();
}

/// Generates `cfg.docs` documents deterministically from `cfg.seed`.
pub fn generate(cfg: &SyntheticConfig) -> Result<Vec<Document>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.docs)
        .map(|d| {
            let mut kinds = Vec::new();
            if rng.random_bool(0.8) {
                kinds.push(Kind::Male(rng.random_range(0..MALE.len())));
            }
            if rng.random_bool(0.8) {
                kinds.push(Kind::Female(rng.random_range(0..FEMALE.len())));
            }
            let r1 = rng.random_range(0..ROLES.len());
            kinds.push(Kind::Role(r1));
            if kinds.len() < 3 && rng.random_bool(0.5) {
                let r2 = (r1 + 1 + rng.random_range(0..ROLES.len() - 1)) % ROLES.len();
                kinds.push(Kind::Role(r2));
            }
            let mut b = Builder {
                tokens: Vec::new(),
                sentence_ends: Vec::new(),
                mentions: Vec::new(),
                seen: vec![false; kinds.len()],
            };
            let sentences = rng.random_range(cfg.min_sentences..=cfg.max_sentences);
            for _ in 0..sentences {
                sentence(&mut b, &kinds, &mut rng);
            }
            let mut gold = vec![Vec::new(); kinds.len()];
            for (idx, span) in b.mentions {
                gold[idx].push(span);
            }
            Document::new(format!("synth_{d:03}"), b.tokens, b.sentence_ends, gold)
        })
        .collect()
}
