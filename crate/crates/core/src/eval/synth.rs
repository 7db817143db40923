//! Seeded synthetic catalogs: products with brand, colour and one measured
//! attribute per category, templated reviews and a few buying guides.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::catalog::{AttrValue, Catalog, CatalogBuilder, Product, Review, WebDocument};
use crate::planner::PlannerConfig;
use crate::text::is_stopword;

/// `(leaf category, department, measured attribute, unit, range, price range)`.
pub const CATEGORIES: &[(&str, &str, &str, &str, (f64, f64), (f64, f64))] = &[
    (
        "Earbuds",
        "Audio",
        "battery-life",
        "h",
        (4.0, 12.0),
        (20.0, 300.0),
    ),
    (
        "Headphones",
        "Audio",
        "battery-life",
        "h",
        (15.0, 60.0),
        (40.0, 450.0),
    ),
    (
        "Laptops",
        "Computers",
        "battery-life",
        "h",
        (5.0, 20.0),
        (300.0, 2500.0),
    ),
    (
        "Tents",
        "Outdoor",
        "weight",
        "g",
        (1200.0, 4500.0),
        (60.0, 600.0),
    ),
    (
        "Backpacks",
        "Outdoor",
        "capacity",
        "L",
        (15.0, 40.0),
        (30.0, 250.0),
    ),
    (
        "Blenders",
        "Kitchen",
        "power",
        "W",
        (300.0, 1500.0),
        (30.0, 400.0),
    ),
    (
        "Desk Lamps",
        "Home",
        "brightness",
        "lm",
        (300.0, 1200.0),
        (15.0, 150.0),
    ),
    (
        "Running Shoes",
        "Sports",
        "weight",
        "g",
        (180.0, 320.0),
        (50.0, 220.0),
    ),
    (
        "Mirrorless Cameras",
        "Photo",
        "resolution",
        "MP",
        (16.0, 61.0),
        (500.0, 4000.0),
    ),
    (
        "Strollers",
        "Baby",
        "weight",
        "kg",
        (5.0, 15.0),
        (100.0, 900.0),
    ),
];

pub const BRANDS: &[&str] = &[
    "Arvola", "Brisko", "Calder", "Dunmore", "Elvaro", "Fenwick", "Galtra", "Holloway", "Ithaca",
    "Juniper", "Kestrel", "Lumora", "Marlow", "Norvik", "Ostara", "Pellion",
];

pub const COLORS: &[&str] = &[
    "black", "white", "grey", "navy", "green", "red", "silver", "sand",
];

pub const SOURCES: &[(&str, f64)] = &[
    ("gearlab.example", 0.9),
    ("reviewhub.example", 0.75),
    ("dealsforum.example", 0.4),
];

const POSITIVE: &[&str] = &[
    "Great build quality",
    "Very comfortable for daily use",
    "Excellent value for the price",
    "Setup was easy",
    "Solid and reliable so far",
    "Impressive performance",
];

const NEGATIVE: &[&str] = &[
    "Feels flimsy after a month",
    "The manual is poor",
    "Too heavy to carry around",
    "Customer support was slow",
    "Disappointing battery",
];

pub const USES: &[&str] = &[
    "travel",
    "commuting",
    "beginners",
    "families",
    "everyday use",
    "small spaces",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub products: usize,
    pub seed: u64,
    /// Buying guides per category.
    pub guides_per_category: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            products: 1000,
            seed: 7,
            guides_per_category: 3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SyntheticCatalog {
    pub products: Vec<Product>,
    pub reviews: Vec<Review>,
    pub webdocs: Vec<WebDocument>,
}

/// Fixed reference time for synthetic documents and ingestion.
pub fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap()
}

/// Model names are pronounceable, unique, and never a word the planner or
/// tokenizer treats specially.
fn model_name(
    rng: &mut ChaCha8Rng,
    used: &mut BTreeSet<String>,
    reserved: &BTreeSet<String>,
) -> String {
    const C: &[u8] = b"bdfgklmprstvz";
    const V: &[u8] = b"aeiou";
    loop {
        let syllables = rng.gen_range(2..=3);
        let mut s = String::new();
        for i in 0..syllables {
            let c = C[rng.gen_range(0..C.len())] as char;
            s.push(if i == 0 { c.to_ascii_uppercase() } else { c });
            s.push(V[rng.gen_range(0..V.len())] as char);
        }
        s.push(C[rng.gen_range(0..C.len())] as char);
        let lower = s.to_lowercase();
        if !is_stopword(&lower) && !reserved.contains(&lower) && used.insert(lower) {
            return s;
        }
    }
}

fn reserved_words() -> BTreeSet<String> {
    let cfg = PlannerConfig::default();
    let mut words: BTreeSet<String> = BTreeSet::new();
    for list in [
        &cfg.consultative_triggers,
        &cfg.upper_bound_words,
        &cfg.lower_bound_words,
        &cfg.negation_words,
        &cfg.currency_words,
    ] {
        for w in list {
            words.extend(w.split_whitespace().map(str::to_lowercase));
        }
    }
    words.extend(["with", "for", "vs", "versus"].map(String::from));
    for b in BRANDS {
        words.insert(b.to_lowercase());
    }
    words
}

fn round_to(v: f64, step: f64) -> f64 {
    (v / step).round() * step
}

pub fn generate_catalog(config: &SynthConfig) -> SyntheticCatalog {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let reserved = reserved_words();
    let mut used = BTreeSet::new();
    let mut out = SyntheticCatalog::default();
    let width = config.products.max(1).to_string().len().max(5);

    for i in 0..config.products {
        let (leaf, dept, attr, unit, (lo, hi), (plo, phi)) = CATEGORIES[i % CATEGORIES.len()];
        let brand = BRANDS[rng.gen_range(0..BRANDS.len())];
        let model = model_name(&mut rng, &mut used, &reserved);
        let id = format!("p{:0width$}", i + 1);
        let step = if hi - lo > 100.0 { 10.0 } else { 1.0 };
        let measure = round_to(rng.gen_range(lo..=hi), step);
        let price = rng.gen_range(plo..=phi).floor() + 0.99;
        let rating = round_to(rng.gen_range(2.5..=5.0), 0.1);
        let mut attributes = BTreeMap::new();
        attributes.insert("brand".to_string(), AttrValue::Text(brand.to_string()));
        attributes.insert(
            "color".to_string(),
            AttrValue::Text(COLORS[rng.gen_range(0..COLORS.len())].to_string()),
        );
        attributes.insert(
            attr.to_string(),
            AttrValue::Measure {
                value: measure,
                unit: unit.to_string(),
            },
        );
        let mut review_ids = Vec::new();
        for r in 0..rng.gen_range(0..=3) {
            let positive = rng.gen_bool(((rating - 2.0) / 3.0).clamp(0.1, 0.9));
            let (stars, text) = if positive {
                (
                    rng.gen_range(4..=5),
                    *POSITIVE.choose(&mut rng).expect("non-empty"),
                )
            } else {
                (
                    rng.gen_range(1..=2),
                    *NEGATIVE.choose(&mut rng).expect("non-empty"),
                )
            };
            let rid = format!("{id}-r{}", r + 1);
            review_ids.push(rid.clone());
            out.reviews.push(Review {
                id: rid,
                product_id: id.clone(),
                text: format!("{text}."),
                stars,
            });
        }
        out.products.push(Product {
            id,
            title: format!("{brand} {model} {leaf}"),
            category_path: vec![dept.to_string(), leaf.to_string()],
            attributes,
            price,
            rating,
            review_ids,
        });
    }

    for (c, (leaf, _, attr, ..)) in CATEGORIES.iter().enumerate() {
        let mut in_cat: Vec<&Product> = out
            .products
            .iter()
            .filter(|p| p.leaf_category() == *leaf)
            .collect();
        if in_cat.is_empty() {
            continue;
        }
        in_cat.sort_by(|a, b| b.rating.total_cmp(&a.rating).then_with(|| a.id.cmp(&b.id)));
        for g in 0..config.guides_per_category {
            let (source, _) = SOURCES[g % SOURCES.len()];
            let use_case = USES[(c + g) % USES.len()];
            let picks: Vec<&str> = in_cat
                .iter()
                .skip(g)
                .take(3)
                .map(|p| p.title.as_str())
                .collect();
            let head = attr.split('-').next().unwrap_or(attr);
            out.webdocs.push(WebDocument {
                id: format!("w{c:02}{g:02}"),
                url: format!(
                    "https://{source}/{}-{g}",
                    leaf.to_lowercase().replace(' ', "-")
                ),
                source: source.to_string(),
                title: format!("Best {} for {use_case}", leaf.to_lowercase()),
                body: format!(
                    "We compared {} for {use_case}. Our picks: {}. Pay attention to {head} \
                     and return policies before buying.",
                    leaf.to_lowercase(),
                    picks.join("; ")
                ),
                published_at: epoch() - Duration::days(rng.gen_range(1..=365)),
            });
        }
    }
    out
}

impl SyntheticCatalog {
    pub fn build(&self) -> Catalog {
        let mut b = CatalogBuilder::default();
        for p in &self.products {
            b.add_product(p.clone())
                .expect("synthetic product is valid");
        }
        for r in &self.reviews {
            b.add_review(r.clone()).expect("synthetic review is valid");
        }
        for d in &self.webdocs {
            b.add_webdoc(d.clone(), epoch())
                .expect("synthetic doc is valid");
        }
        b.build()
    }

    /// Writes `products.jsonl`, `reviews.jsonl` and `webdocs.jsonl`.
    pub fn write_jsonl(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        write_lines(&dir.join("products.jsonl"), &self.products)?;
        write_lines(&dir.join("reviews.jsonl"), &self.reviews)?;
        write_lines(&dir.join("webdocs.jsonl"), &self.webdocs)
    }
}

fn write_lines<T: Serialize>(path: &Path, rows: &[T]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}

/// Source authorities matching [`SOURCES`], for the web scorer.
pub fn source_authority() -> BTreeMap<String, f64> {
    SOURCES.iter().map(|(s, a)| (s.to_string(), *a)).collect()
}
