use std::collections::{BTreeMap, HashMap};

use crate::text::tokenize;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

/// Inverted index scored with Okapi BM25 (k1 = 1.2, b = 0.75).
///
/// Documents are stored in ascending id order so that an ordinal comparison
/// doubles as the id tie-break.
#[derive(Debug, Clone, Default)]
pub struct LexicalIndex {
    doc_ids: Vec<String>,
    postings: HashMap<String, Vec<(u32, u32)>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
}

impl LexicalIndex {
    /// Builds the index from `(doc-id, text)` pairs. Ids are assumed unique.
    pub fn build<I, S>(docs: I) -> Self
    where
        I: IntoIterator<Item = (String, S)>,
        S: AsRef<str>,
    {
        let mut docs: Vec<(String, Vec<String>)> = docs
            .into_iter()
            .map(|(id, text)| (id, tokenize(text.as_ref())))
            .collect();
        docs.sort_by(|a, b| a.0.cmp(&b.0));

        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        let mut doc_lengths = Vec::with_capacity(docs.len());
        let mut doc_ids = Vec::with_capacity(docs.len());
        for (ordinal, (id, tokens)) in docs.into_iter().enumerate() {
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.as_str()).or_default() += 1;
            }
            for (term, count) in tf {
                postings
                    .entry(term.to_string())
                    .or_default()
                    .push((ordinal as u32, count));
            }
            doc_lengths.push(tokens.len() as u32);
            doc_ids.push(id);
        }
        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            doc_lengths.iter().map(|&l| f64::from(l)).sum::<f64>() / doc_lengths.len() as f64
        };
        Self {
            doc_ids,
            postings,
            doc_lengths,
            avg_doc_length,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, id: &str) -> Option<u32> {
        self.ordinal(id).map(|o| self.doc_lengths[o])
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    fn ordinal(&self, id: &str) -> Option<usize> {
        self.doc_ids.binary_search_by(|d| d.as_str().cmp(id)).ok()
    }

    /// Non-negative BM25 idf: `ln(1 + (N - n + 0.5) / (n + 0.5))`.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_freq(term) as f64;
        let total = self.doc_count() as f64;
        (1.0 + (total - n + 0.5) / (n + 0.5)).ln()
    }

    /// Top-`k` documents by BM25, score descending then id ascending.
    /// Repeated query terms count once.
    pub fn search(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        let mut terms = tokenize(query);
        terms.sort();
        terms.dedup();

        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(term);
            for &(ordinal, tf) in list {
                let tf = f64::from(tf);
                let dl = f64::from(self.doc_lengths[ordinal as usize]);
                let norm = BM25_K1 * (1.0 - BM25_B + BM25_B * dl / self.avg_doc_length);
                *scores.entry(ordinal).or_default() += idf * tf * (BM25_K1 + 1.0) / (tf + norm);
            }
        }
        let mut ranked: Vec<(u32, f64)> = scores.into_iter().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        ranked
            .into_iter()
            .map(|(o, s)| (self.doc_ids[o as usize].clone(), s))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> LexicalIndex {
        LexicalIndex::build(vec![
            ("d1".to_string(), "wireless earbuds black"),
            ("d2".to_string(), "wired earbuds"),
            ("d3".to_string(), "espresso machine stainless"),
        ])
    }

    #[test]
    fn no_match_is_empty() {
        assert!(toy().search("kayak", 5).is_empty());
        assert!(toy().search("", 5).is_empty());
    }

    #[test]
    fn lengths_and_average() {
        let idx = toy();
        assert_eq!(idx.doc_length("d1"), Some(3));
        assert_eq!(idx.doc_length("d2"), Some(2));
        assert!((idx.avg_doc_length() - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn unique_title_ranks_first() {
        let hits = toy().search("espresso machine stainless", 3);
        assert_eq!(hits[0].0, "d3");
        assert_eq!(hits.len(), 1);
    }

    #[test]
    fn ties_break_by_id() {
        let idx = LexicalIndex::build(vec![("b".to_string(), "lamp"), ("a".to_string(), "lamp")]);
        let hits = idx.search("lamp", 2);
        assert_eq!(hits[0].0, "a");
        assert_eq!(hits[0].1, hits[1].1);
    }

    #[test]
    fn empty_index_searches_cleanly() {
        let idx = LexicalIndex::build(Vec::<(String, &str)>::new());
        assert!(idx.search("anything", 3).is_empty());
    }
}
