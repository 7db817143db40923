//! Product catalog, review corpus and local web corpus, plus the lexical and
//! vector indexes built over them.
//!
//! Ingestion is line-oriented: every input line is one JSON record, and every
//! rejected line is reported with its line number and reason. A [`Catalog`] is
//! immutable once built; rebuilding produces a new value that callers swap in
//! behind an `Arc`.

mod embed;
mod lexical;
mod types;
mod vector;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{cosine, normalize, Embedder, HashingEmbedder, DEFAULT_DIM};
pub use lexical::{LexicalIndex, BM25_B, BM25_K1};
pub use types::{AttrValue, Product, Review, WebDocument};
pub use vector::VectorIndex;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("index at {path} is damaged: {reason}")]
    Corrupt { path: PathBuf, reason: String },
}

pub const INDEX_FORMAT: u32 = 1;

/// `manifest.json` of an index directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format: u32,
    pub ingested_at: DateTime<Utc>,
    pub products: usize,
    pub reviews: usize,
    pub webdocs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: usize,
    pub rejections: Vec<Rejection>,
}

impl IngestReport {
    fn reject(&mut self, line: usize, reason: impl Into<String>) {
        self.rejected += 1;
        self.rejections.push(Rejection {
            line,
            reason: reason.into(),
        });
    }
}

/// Ingestion reports for the three input files.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogReport {
    pub products: IngestReport,
    pub reviews: IngestReport,
    pub webdocs: IngestReport,
}

impl CatalogReport {
    pub fn total_rejected(&self) -> usize {
        self.products.rejected + self.reviews.rejected + self.webdocs.rejected
    }
}

/// Collects validated records before the indexes are built.
pub struct CatalogBuilder {
    embedder: Arc<dyn Embedder>,
    products: BTreeMap<String, Product>,
    reviews: BTreeMap<String, Review>,
    webdocs: BTreeMap<String, WebDocument>,
}

impl Default for CatalogBuilder {
    fn default() -> Self {
        Self::new(Arc::new(HashingEmbedder::default()))
    }
}

impl CatalogBuilder {
    pub fn new(embedder: Arc<dyn Embedder>) -> Self {
        Self {
            embedder,
            products: BTreeMap::new(),
            reviews: BTreeMap::new(),
            webdocs: BTreeMap::new(),
        }
    }

    pub fn add_product(&mut self, product: Product) -> Result<(), String> {
        product.validate()?;
        if self.products.contains_key(&product.id) {
            return Err("duplicate id".into());
        }
        self.products.insert(product.id.clone(), product);
        Ok(())
    }

    /// Reviews must reference a product that is already present.
    pub fn add_review(&mut self, review: Review) -> Result<(), String> {
        if review.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if !(1..=5).contains(&review.stars) {
            return Err(format!("stars must be in 1..=5, got {}", review.stars));
        }
        if !self.products.contains_key(&review.product_id) {
            return Err(format!("unknown product_id '{}'", review.product_id));
        }
        if self.reviews.contains_key(&review.id) {
            return Err("duplicate id".into());
        }
        self.reviews.insert(review.id.clone(), review);
        Ok(())
    }

    pub fn add_webdoc(
        &mut self,
        doc: WebDocument,
        ingested_at: DateTime<Utc>,
    ) -> Result<(), String> {
        if doc.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if doc.published_at > ingested_at {
            return Err(format!(
                "published_at {} is after ingestion time",
                doc.published_at.to_rfc3339()
            ));
        }
        if self.webdocs.contains_key(&doc.id) {
            return Err("duplicate id".into());
        }
        self.webdocs.insert(doc.id.clone(), doc);
        Ok(())
    }

    pub fn read_products(&mut self, reader: impl BufRead) -> IngestReport {
        read_lines(reader, |line| {
            let p: Product =
                serde_json::from_str(line).map_err(|e| format!("malformed line: {e}"))?;
            self.add_product(p)
        })
    }

    pub fn read_reviews(&mut self, reader: impl BufRead) -> IngestReport {
        read_lines(reader, |line| {
            let r: Review =
                serde_json::from_str(line).map_err(|e| format!("malformed line: {e}"))?;
            self.add_review(r)
        })
    }

    pub fn read_webdocs(
        &mut self,
        reader: impl BufRead,
        ingested_at: DateTime<Utc>,
    ) -> IngestReport {
        read_lines(reader, |line| {
            let d: WebDocument =
                serde_json::from_str(line).map_err(|e| format!("malformed line: {e}"))?;
            self.add_webdoc(d, ingested_at)
        })
    }

    pub fn build(self) -> Catalog {
        let embedder = self.embedder;
        let product_lexical = LexicalIndex::build(
            self.products
                .values()
                .map(|p| (p.id.clone(), p.lexical_text())),
        );
        let product_vectors = VectorIndex::build(
            embedder.as_ref(),
            self.products
                .values()
                .map(|p| (p.id.clone(), p.vector_text())),
        );
        let web_lexical =
            LexicalIndex::build(self.webdocs.values().map(|d| (d.id.clone(), d.full_text())));
        let web_vectors = VectorIndex::build(
            embedder.as_ref(),
            self.webdocs.values().map(|d| (d.id.clone(), d.full_text())),
        );
        let mut reviews_by_product: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in self.reviews.values() {
            reviews_by_product
                .entry(r.product_id.clone())
                .or_default()
                .push(r.id.clone());
        }
        Catalog {
            embedder,
            products: self.products,
            reviews: self.reviews,
            reviews_by_product,
            webdocs: self.webdocs,
            product_lexical,
            product_vectors,
            web_lexical,
            web_vectors,
        }
    }
}

fn read_lines(
    reader: impl BufRead,
    mut accept: impl FnMut(&str) -> Result<(), String>,
) -> IngestReport {
    let mut report = IngestReport::default();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                report.reject(lineno, format!("unreadable line: {e}"));
                continue;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        match accept(&line) {
            Ok(()) => report.accepted += 1,
            Err(reason) => report.reject(lineno, reason),
        }
    }
    report
}

fn open(path: &Path) -> Result<BufReader<File>, CatalogError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| CatalogError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Input locations for a full ingestion run.
#[derive(Debug, Clone, Default)]
pub struct CatalogSources {
    pub products: PathBuf,
    pub reviews: Option<PathBuf>,
    pub webdocs: Option<PathBuf>,
}

/// Reads all three files and builds the indexes.
pub fn ingest_catalog(
    sources: &CatalogSources,
    ingested_at: DateTime<Utc>,
) -> Result<(Catalog, CatalogReport), CatalogError> {
    let mut builder = CatalogBuilder::default();
    let mut report = CatalogReport {
        products: builder.read_products(open(&sources.products)?),
        ..Default::default()
    };
    if let Some(path) = &sources.reviews {
        report.reviews = builder.read_reviews(open(path)?);
    }
    if let Some(path) = &sources.webdocs {
        report.webdocs = builder.read_webdocs(open(path)?, ingested_at);
    }
    Ok((builder.build(), report))
}

/// Writes the accepted records and a manifest to `dir`. Indexes are not
/// stored; [`load_index`] rebuilds them, which is deterministic.
pub fn save_index(
    catalog: &Catalog,
    dir: &Path,
    ingested_at: DateTime<Utc>,
) -> Result<IndexManifest, CatalogError> {
    let write_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CatalogError::Write { path, source }
    };
    std::fs::create_dir_all(dir).map_err(write_err(dir))?;
    fn lines<'a, T: Serialize + 'a>(
        path: &Path,
        rows: impl Iterator<Item = &'a T>,
    ) -> std::io::Result<()> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(File::create(path)?);
        for r in rows {
            serde_json::to_writer(&mut f, r)?;
            f.write_all(b"\n")?;
        }
        f.flush()
    }
    let p = dir.join("products.jsonl");
    lines(&p, catalog.products.values()).map_err(write_err(&p))?;
    let p = dir.join("reviews.jsonl");
    lines(&p, catalog.reviews.values()).map_err(write_err(&p))?;
    let p = dir.join("webdocs.jsonl");
    lines(&p, catalog.webdocs.values()).map_err(write_err(&p))?;
    let manifest = IndexManifest {
        format: INDEX_FORMAT,
        ingested_at,
        products: catalog.products.len(),
        reviews: catalog.reviews.len(),
        webdocs: catalog.webdocs.len(),
    };
    let p = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&p, body).map_err(write_err(&p))?;
    Ok(manifest)
}

/// Loads an index directory written by [`save_index`]. Any rejected record or
/// count mismatch means the directory was edited or truncated.
pub fn load_index(dir: &Path) -> Result<(Catalog, IndexManifest), CatalogError> {
    let corrupt = |reason: String| CatalogError::Corrupt {
        path: dir.to_path_buf(),
        reason,
    };
    let mpath = dir.join("manifest.json");
    let body = std::fs::read_to_string(&mpath).map_err(|source| CatalogError::Io {
        path: mpath.clone(),
        source,
    })?;
    let manifest: IndexManifest =
        serde_json::from_str(&body).map_err(|e| corrupt(format!("manifest: {e}")))?;
    if manifest.format != INDEX_FORMAT {
        return Err(corrupt(format!("unsupported format {}", manifest.format)));
    }
    let (catalog, report) = ingest_catalog(
        &CatalogSources {
            products: dir.join("products.jsonl"),
            reviews: Some(dir.join("reviews.jsonl")),
            webdocs: Some(dir.join("webdocs.jsonl")),
        },
        manifest.ingested_at,
    )?;
    if let Some((file, r)) = [
        ("products", &report.products),
        ("reviews", &report.reviews),
        ("webdocs", &report.webdocs),
    ]
    .into_iter()
    .find_map(|(f, r)| r.rejections.first().map(|x| (f, x)))
    {
        return Err(corrupt(format!(
            "{file}.jsonl line {}: {}",
            r.line, r.reason
        )));
    }
    let counts = (
        catalog.products.len(),
        catalog.reviews.len(),
        catalog.webdocs.len(),
    );
    if counts != (manifest.products, manifest.reviews, manifest.webdocs) {
        return Err(corrupt(format!(
            "record counts {counts:?} do not match the manifest"
        )));
    }
    Ok((catalog, manifest))
}

/// Immutable, indexed view over products, reviews and web documents.
pub struct Catalog {
    embedder: Arc<dyn Embedder>,
    products: BTreeMap<String, Product>,
    reviews: BTreeMap<String, Review>,
    reviews_by_product: BTreeMap<String, Vec<String>>,
    webdocs: BTreeMap<String, WebDocument>,
    product_lexical: LexicalIndex,
    product_vectors: VectorIndex,
    web_lexical: LexicalIndex,
    web_vectors: VectorIndex,
}

impl std::fmt::Debug for Catalog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Catalog")
            .field("products", &self.products.len())
            .field("reviews", &self.reviews.len())
            .field("webdocs", &self.webdocs.len())
            .finish()
    }
}

impl Catalog {
    pub fn empty() -> Self {
        CatalogBuilder::default().build()
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        self.embedder.embed(text)
    }

    pub fn product(&self, id: &str) -> Option<&Product> {
        self.products.get(id)
    }

    pub fn products(&self) -> impl Iterator<Item = &Product> {
        self.products.values()
    }

    pub fn product_count(&self) -> usize {
        self.products.len()
    }

    pub fn reviews(&self) -> impl Iterator<Item = &Review> {
        self.reviews.values()
    }

    pub fn reviews_for(&self, product_id: &str) -> impl Iterator<Item = &Review> {
        self.reviews_by_product
            .get(product_id)
            .into_iter()
            .flatten()
            .filter_map(|id| self.reviews.get(id))
    }

    pub fn webdoc(&self, id: &str) -> Option<&WebDocument> {
        self.webdocs.get(id)
    }

    pub fn webdocs(&self) -> impl Iterator<Item = &WebDocument> {
        self.webdocs.values()
    }

    pub fn product_lexical(&self) -> &LexicalIndex {
        &self.product_lexical
    }

    pub fn product_vectors(&self) -> &VectorIndex {
        &self.product_vectors
    }

    pub fn web_lexical(&self) -> &LexicalIndex {
        &self.web_lexical
    }

    pub fn web_vector(&self, doc_id: &str) -> Option<&[f64]> {
        self.web_vectors.vector(doc_id)
    }

    pub fn bm25_search(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        self.product_lexical.search(query, k)
    }

    pub fn vector_search(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        self.product_vectors
            .search(self.embedder.as_ref(), query, k)
    }

    /// Distinct attribute names across the catalog, with the units observed
    /// on measure-valued entries.
    pub fn attribute_units(&self) -> BTreeMap<String, BTreeSet<String>> {
        let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for p in self.products.values() {
            for (name, value) in &p.attributes {
                let units = out.entry(name.clone()).or_default();
                if let Some(u) = value.unit() {
                    units.insert(u.to_string());
                }
            }
        }
        out
    }

    /// Lowercased text attribute values mapped to the attributes carrying them.
    pub fn text_values(&self) -> BTreeMap<String, BTreeSet<String>> {
        let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for p in self.products.values() {
            for (name, value) in &p.attributes {
                if let AttrValue::Text(s) = value {
                    out.entry(s.to_lowercase())
                        .or_default()
                        .insert(name.clone());
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn product_line(id: &str, title: &str) -> String {
        format!(
            r#"{{"id":"{id}","title":"{title}","category_path":["Audio","Headphones"],"attributes":{{"color":"black","weight":{{"value":250,"unit":"g"}}}},"price":99.5,"rating":4.2,"review_ids":[]}}"#
        )
    }

    #[test]
    fn three_valid_lines() {
        let input = [
            product_line("p1", "Alpha"),
            product_line("p2", "Beta"),
            product_line("p3", "Gamma"),
        ]
        .join("\n");
        let mut b = CatalogBuilder::default();
        let report = b.read_products(Cursor::new(input));
        assert_eq!(report.accepted, 3);
        assert_eq!(report.rejected, 0);
        let c = b.build();
        assert_eq!(c.product_count(), 3);
        assert_eq!(
            c.product("p1").unwrap().attributes["weight"],
            AttrValue::Measure {
                value: 250.0,
                unit: "g".into()
            }
        );
    }

    #[test]
    fn duplicate_id_rejected_with_line() {
        let input = [
            product_line("p1", "Alpha"),
            product_line("p2", "Beta"),
            product_line("p1", "Alpha again"),
        ]
        .join("\n");
        let mut b = CatalogBuilder::default();
        let report = b.read_products(Cursor::new(input));
        assert_eq!(report.accepted, 2);
        assert_eq!(report.rejected, 1);
        assert_eq!(report.rejections[0].line, 3);
        assert_eq!(report.rejections[0].reason, "duplicate id");
    }

    #[test]
    fn empty_file_is_empty_catalog() {
        let mut b = CatalogBuilder::default();
        let report = b.read_products(Cursor::new(""));
        assert_eq!(report, IngestReport::default());
        assert_eq!(b.build().product_count(), 0);
    }

    #[test]
    fn malformed_and_invalid_records_reported() {
        let input = format!(
            "{}\nnot json\n{}\n{}",
            product_line("p1", "Alpha"),
            r#"{"id":"p2","title":"x","category_path":[],"price":1,"rating":1}"#,
            r#"{"id":"p3","title":"x","category_path":["a"],"price":-1,"rating":1}"#
        );
        let mut b = CatalogBuilder::default();
        let report = b.read_products(Cursor::new(input));
        assert_eq!(report.accepted, 1);
        assert_eq!(report.rejected, 3);
        assert!(report.rejections[0].reason.starts_with("malformed line"));
        assert_eq!(report.rejections[1].line, 3);
        assert!(report.rejections[1].reason.contains("category_path"));
        assert!(report.rejections[2].reason.contains("price"));
    }

    #[test]
    fn reviews_must_resolve() {
        let mut b = CatalogBuilder::default();
        b.read_products(Cursor::new(product_line("p1", "Alpha")));
        let reviews = concat!(
            r#"{"id":"r1","product_id":"p1","text":"Great sound.","stars":5}"#,
            "\n",
            r#"{"id":"r2","product_id":"nope","text":"?","stars":3}"#,
            "\n",
            r#"{"id":"r3","product_id":"p1","text":"?","stars":0}"#,
        );
        let report = b.read_reviews(Cursor::new(reviews));
        assert_eq!(report.accepted, 1);
        assert_eq!(report.rejected, 2);
        let c = b.build();
        assert_eq!(c.reviews_for("p1").count(), 1);
    }

    #[test]
    fn future_webdocs_rejected() {
        let now: DateTime<Utc> = "2025-01-01T00:00:00Z".parse().unwrap();
        let docs = concat!(
            r#"{"id":"w1","url":"https://a","source":"a","title":"t","body":"b","published_at":"2024-12-01T00:00:00Z"}"#,
            "\n",
            r#"{"id":"w2","url":"https://a","source":"a","title":"t","body":"b","published_at":"2025-02-01T00:00:00Z"}"#,
        );
        let mut b = CatalogBuilder::default();
        let report = b.read_webdocs(Cursor::new(docs), now);
        assert_eq!((report.accepted, report.rejected), (1, 1));
    }

    #[test]
    fn unreadable_file_is_an_error() {
        let err = ingest_catalog(
            &CatalogSources {
                products: "/definitely/not/here.jsonl".into(),
                ..Default::default()
            },
            Utc::now(),
        )
        .unwrap_err();
        assert!(matches!(err, CatalogError::Io { .. }));
    }
}
