use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// An attribute value: free text, a bare number, or a number tagged with a unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Number(f64),
    Text(String),
    Measure { value: f64, unit: String },
}

impl AttrValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            AttrValue::Number(v) | AttrValue::Measure { value: v, .. } => Some(*v),
            AttrValue::Text(_) => None,
        }
    }

    pub fn unit(&self) -> Option<&str> {
        match self {
            AttrValue::Measure { unit, .. } => Some(unit),
            _ => None,
        }
    }

    /// Text used for matching and display. Numbers keep their unit suffix.
    pub fn display_text(&self) -> String {
        match self {
            AttrValue::Text(s) => s.clone(),
            AttrValue::Number(v) => crate::text::format_number(*v),
            AttrValue::Measure { value, unit } => {
                format!("{}{}", crate::text::format_number(*value), unit)
            }
        }
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display_text())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub id: String,
    pub title: String,
    pub category_path: Vec<String>,
    #[serde(default)]
    pub attributes: BTreeMap<String, AttrValue>,
    pub price: f64,
    pub rating: f64,
    #[serde(default)]
    pub review_ids: Vec<String>,
}

impl Product {
    pub fn leaf_category(&self) -> &str {
        self.category_path.last().map(String::as_str).unwrap_or("")
    }

    /// Text fed to the lexical index.
    pub fn lexical_text(&self) -> String {
        let mut text = self.title.clone();
        for c in &self.category_path {
            text.push(' ');
            text.push_str(c);
        }
        for v in self.attributes.values() {
            if let AttrValue::Text(s) = v {
                text.push(' ');
                text.push_str(s);
            }
        }
        text
    }

    /// Text fed to the embedder.
    pub fn vector_text(&self) -> String {
        self.title.clone()
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if !(self.price >= 0.0) || !self.price.is_finite() {
            return Err(format!("price must be >= 0, got {}", self.price));
        }
        if !(0.0..=5.0).contains(&self.rating) {
            return Err(format!("rating must be in [0,5], got {}", self.rating));
        }
        if self.category_path.is_empty() {
            return Err("category_path is empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Review {
    pub id: String,
    pub product_id: String,
    pub text: String,
    pub stars: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebDocument {
    pub id: String,
    pub url: String,
    pub source: String,
    pub title: String,
    pub body: String,
    pub published_at: DateTime<Utc>,
}

impl WebDocument {
    pub fn full_text(&self) -> String {
        format!("{} {}", self.title, self.body)
    }
}
