use super::embed::Embedder;

/// Exact cosine search over unit-normalized vectors. Brute force by design of
/// the catalog sizes involved (tens of thousands of items).
#[derive(Debug, Clone, Default)]
pub struct VectorIndex {
    dim: usize,
    doc_ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl VectorIndex {
    pub fn build<I, S>(embedder: &dyn Embedder, docs: I) -> Self
    where
        I: IntoIterator<Item = (String, S)>,
        S: AsRef<str>,
    {
        let mut docs: Vec<(String, Vec<f64>)> = docs
            .into_iter()
            .map(|(id, text)| {
                let v = embedder.embed(text.as_ref());
                (id, v)
            })
            .collect();
        docs.sort_by(|a, b| a.0.cmp(&b.0));
        let (doc_ids, vectors) = docs.into_iter().unzip();
        Self {
            dim: embedder.dim(),
            doc_ids,
            vectors,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn vector(&self, id: &str) -> Option<&[f64]> {
        self.doc_ids
            .binary_search_by(|d| d.as_str().cmp(id))
            .ok()
            .map(|o| self.vectors[o].as_slice())
    }

    /// Top-`k` by cosine against an already-embedded query; descending, ties
    /// by ascending id. Stored vectors are unit norm (or zero), so the dot
    /// product against a unit query is the cosine.
    pub fn search_vector(&self, query: &[f64], k: usize) -> Vec<(String, f64)> {
        let mut scored: Vec<(usize, f64)> = self
            .vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.iter().zip(query).map(|(a, b)| a * b).sum::<f64>()))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
            .into_iter()
            .map(|(i, s)| (self.doc_ids[i].clone(), s))
            .collect()
    }

    pub fn search(&self, embedder: &dyn Embedder, query: &str, k: usize) -> Vec<(String, f64)> {
        self.search_vector(&embedder.embed(query), k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::embed::HashingEmbedder;

    #[test]
    fn self_similarity_and_empty_query() {
        let e = HashingEmbedder::default();
        let idx = VectorIndex::build(
            &e,
            vec![
                ("c".to_string(), "trail running shoe"),
                ("a".to_string(), "cast iron skillet"),
                ("b".to_string(), "noise cancelling headphones"),
            ],
        );
        let hits = idx.search(&e, "cast iron skillet", 3);
        assert_eq!(hits[0].0, "a");
        assert!((hits[0].1 - 1.0).abs() < 1e-6);

        let empty = idx.search(&e, "", 3);
        let ids: Vec<_> = empty.iter().map(|h| h.0.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!(empty.iter().all(|h| h.1 == 0.0));
    }

    #[test]
    fn stored_vectors_are_unit_norm() {
        let e = HashingEmbedder::new(64);
        let idx = VectorIndex::build(&e, vec![("x".to_string(), "hello world")]);
        let v = idx.vector("x").unwrap();
        assert_eq!(v.len(), 64);
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }
}
