//! Inverted index with BM25 scoring, partitioned by node type.
//!
//! Collection statistics (document count, average length, document frequency)
//! are summed over whichever type partitions a query selects, so a query over
//! `{Turn, Summary}` scores exactly as if those documents shared one index.

use std::collections::HashMap;

use crate::hash::Hash;
use crate::model::NodeType;
use crate::store::{Map, Set};

pub const K1: f64 = 1.2;
pub const B: f64 = 0.75;

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be", "been", "before",
    "but", "by", "can", "could", "did", "do", "does", "for", "from", "had", "has", "have", "he", "her", "his",
    "how", "i", "if", "in", "into", "is", "it", "its", "me", "my", "no", "not", "of", "on", "or", "our", "she",
    "so", "than", "that", "the", "their", "them", "then", "there", "these", "they", "this", "to", "was", "we",
    "were", "what", "when", "where", "which", "who", "why", "will", "with", "would", "you", "your",
];

/// Lowercase, split on anything that is not alphanumeric, drop stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

#[derive(Debug, Clone, Default)]
struct Partition {
    docs: Vec<Hash>,
    lens: Vec<u32>,
    total_len: u64,
    postings: Map<String, Vec<(u32, u32)>>,
}

#[derive(Debug, Clone, Default)]
pub struct LexicalIndex {
    parts: Map<NodeType, Partition>,
    indexed: Set<Hash>,
}

impl LexicalIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.indexed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indexed.is_empty()
    }

    /// Index a document once. Node content is immutable, so re-adds are ignored.
    pub fn add(&mut self, node_type: &NodeType, id: Hash, text: &str) {
        if !self.indexed.insert(id) {
            return;
        }
        let part = self.parts.entry(node_type.clone()).or_default();
        let doc = part.docs.len() as u32;
        let tokens = tokenize(text);
        let mut tf: HashMap<&str, u32> = HashMap::new();
        for t in &tokens {
            *tf.entry(t.as_str()).or_default() += 1;
        }
        let mut terms: Vec<(&str, u32)> = tf.into_iter().collect();
        terms.sort_unstable();
        for (term, n) in terms {
            part.postings.entry(term.to_string()).or_default().push((doc, n));
        }
        part.docs.push(id);
        part.lens.push(tokens.len() as u32);
        part.total_len += tokens.len() as u64;
    }

    /// Top-`k` documents by BM25 over the given types (`None` = every type).
    /// Scores are computed before `keep` filters, so filtering never changes
    /// the score of a surviving document.
    pub fn search(
        &self,
        query: &str,
        types: Option<&[NodeType]>,
        k: usize,
        keep: &dyn Fn(&Hash) -> bool,
    ) -> Vec<(Hash, f64)> {
        let mut terms = tokenize(query);
        terms.sort_unstable();
        terms.dedup();
        if terms.is_empty() || k == 0 {
            return Vec::new();
        }
        let parts: Vec<&Partition> = match types {
            Some(ts) => ts.iter().filter_map(|t| self.parts.get(t)).collect(),
            None => self.parts.values().collect(),
        };
        let n_docs: usize = parts.iter().map(|p| p.docs.len()).sum();
        if n_docs == 0 {
            return Vec::new();
        }
        let avgdl = parts.iter().map(|p| p.total_len).sum::<u64>() as f64 / n_docs as f64;
        let avgdl = if avgdl > 0.0 { avgdl } else { 1.0 };
        let mut scores: HashMap<Hash, f64> = HashMap::new();
        for term in &terms {
            let df: usize = parts.iter().map(|p| p.postings.get(term).map_or(0, Vec::len)).sum();
            if df == 0 {
                continue;
            }
            let idf = (1.0 + (n_docs as f64 - df as f64 + 0.5) / (df as f64 + 0.5)).ln();
            for p in &parts {
                let Some(list) = p.postings.get(term) else { continue };
                for &(doc, tf) in list {
                    let tf = tf as f64;
                    let dl = p.lens[doc as usize] as f64;
                    let s = idf * tf * (K1 + 1.0) / (tf + K1 * (1.0 - B + B * dl / avgdl));
                    *scores.entry(p.docs[doc as usize]).or_default() += s;
                }
            }
        }
        let mut hits: Vec<(Hash, f64)> = scores.into_iter().filter(|(h, _)| keep(h)).collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hits.truncate(k);
        hits
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(i: u8) -> Hash {
        Hash::from_bytes([i; 32])
    }

    #[test]
    fn tokenizer_drops_stopwords_and_punctuation() {
        assert_eq!(tokenize("What is the pre-approval $185?"), vec!["pre", "approval", "185"]);
        assert!(tokenize("the of and").is_empty());
    }

    #[test]
    fn single_relevant_document_ranks_first() {
        let mut idx = LexicalIndex::new();
        idx.add(&NodeType::TURN, h(1), "Our mortgage pre-approval came through at $185k");
        idx.add(&NodeType::TURN, h(2), "We talked about the garden and tomatoes");
        idx.add(&NodeType::ENTITY, h(3), "pre-approval");
        let hits = idx.search("pre-approval amount", Some(&[NodeType::TURN, NodeType::SUMMARY]), 10, &|_| true);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, h(1));
    }

    #[test]
    fn scores_match_hand_evaluated_formula() {
        // two docs: "apple banana" and "apple"; query "banana"
        let mut idx = LexicalIndex::new();
        idx.add(&NodeType::TURN, h(1), "apple banana");
        idx.add(&NodeType::TURN, h(2), "apple");
        let hits = idx.search("banana", None, 10, &|_| true);
        let n = 2.0f64;
        let df = 1.0;
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        let avgdl = 1.5;
        let expected = idf * 1.0 * 2.2 / (1.0 + 1.2 * (0.25 + 0.75 * 2.0 / avgdl));
        assert_eq!(hits.len(), 1);
        assert!((hits[0].1 - expected).abs() < 1e-12);
    }

    #[test]
    fn re_adding_is_ignored() {
        let mut idx = LexicalIndex::new();
        idx.add(&NodeType::TURN, h(1), "alpha");
        idx.add(&NodeType::TURN, h(1), "alpha");
        assert_eq!(idx.len(), 1);
        assert_eq!(idx.search("alpha", None, 5, &|_| true).len(), 1);
    }
}
