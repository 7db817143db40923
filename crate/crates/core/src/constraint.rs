use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::{AttrValue, Product};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintOp {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "contains")]
    Contains,
    #[serde(rename = "not_contains")]
    NotContains,
}

impl ConstraintOp {
    pub fn symbol(self) -> &'static str {
        match self {
            ConstraintOp::Le => "≤",
            ConstraintOp::Ge => "≥",
            ConstraintOp::Eq => "=",
            ConstraintOp::Ne => "≠",
            ConstraintOp::Contains => "contains",
            ConstraintOp::NotContains => "not-contains",
        }
    }

    fn is_numeric(self) -> bool {
        matches!(self, ConstraintOp::Le | ConstraintOp::Ge)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConstraintValue {
    Number(f64),
    Text(String),
}

impl fmt::Display for ConstraintValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintValue::Number(n) => f.write_str(&crate::text::format_number(*n)),
            ConstraintValue::Text(s) => write!(f, "\"{s}\""),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hardness {
    Hard,
    Soft,
}

/// Attribute names with special resolution rules.
pub const PRICE: &str = "price";
pub const RATING: &str = "rating";
pub const TITLE: &str = "title";
pub const CATEGORY: &str = "category";
/// Matches against the item's whole text (title, categories, text attributes).
pub const ANY: &str = "any";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConstraint")]
pub struct Constraint {
    pub attribute: String,
    pub op: ConstraintOp,
    pub value: ConstraintValue,
    pub hardness: Hardness,
    /// Query text the constraint was extracted from, when it came from a query.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched: Option<String>,
}

#[derive(Deserialize)]
struct RawConstraint {
    attribute: String,
    op: ConstraintOp,
    value: ConstraintValue,
    hardness: Hardness,
    #[serde(default)]
    matched: Option<String>,
}

impl TryFrom<RawConstraint> for Constraint {
    type Error = String;

    fn try_from(raw: RawConstraint) -> Result<Self, Self::Error> {
        let mut c = Constraint::new(&raw.attribute, raw.op, raw.value, raw.hardness)?;
        c.matched = raw.matched;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Resolved<'a> {
    Number(f64),
    Text(&'a str),
}

impl Constraint {
    /// Fails when a numeric comparison is given a text value or the attribute
    /// name is empty.
    pub fn new(
        attribute: &str,
        op: ConstraintOp,
        value: ConstraintValue,
        hardness: Hardness,
    ) -> Result<Self, String> {
        if attribute.trim().is_empty() {
            return Err("constraint attribute is empty".into());
        }
        if op.is_numeric() && !matches!(value, ConstraintValue::Number(_)) {
            return Err(format!(
                "operator {} needs a numeric value, got {value}",
                op.symbol()
            ));
        }
        Ok(Self {
            attribute: attribute.to_string(),
            op,
            value,
            hardness,
            matched: None,
        })
    }

    pub fn price_at_most(limit: f64, hardness: Hardness) -> Self {
        Self::new(
            PRICE,
            ConstraintOp::Le,
            ConstraintValue::Number(limit),
            hardness,
        )
        .expect("numeric price constraint")
    }

    pub fn with_matched(mut self, text: impl Into<String>) -> Self {
        self.matched = Some(text.into());
        self
    }

    pub fn is_hard(&self) -> bool {
        self.hardness == Hardness::Hard
    }

    /// Upper price bound expressed by this constraint, if it is one.
    pub fn budget(&self) -> Option<f64> {
        match (&self.attribute[..], self.op, &self.value) {
            (PRICE, ConstraintOp::Le, ConstraintValue::Number(n)) => Some(*n),
            _ => None,
        }
    }

    /// Same attribute, operator and value; provenance and hardness ignored.
    pub fn same_predicate(&self, other: &Constraint) -> bool {
        self.attribute.eq_ignore_ascii_case(&other.attribute)
            && self.op == other.op
            && match (&self.value, &other.value) {
                (ConstraintValue::Number(a), ConstraintValue::Number(b)) => (a - b).abs() < 1e-9,
                (ConstraintValue::Text(a), ConstraintValue::Text(b)) => a.eq_ignore_ascii_case(b),
                _ => false,
            }
    }

    /// Whether `product` satisfies the predicate. A missing attribute satisfies
    /// the negative operators and fails the rest.
    pub fn satisfied_by(&self, product: &Product) -> bool {
        let owned_text;
        let resolved = match self.attribute.as_str() {
            PRICE => Some(Resolved::Number(product.price)),
            RATING => Some(Resolved::Number(product.rating)),
            TITLE => Some(Resolved::Text(&product.title)),
            CATEGORY => {
                owned_text = product.category_path.join(" / ");
                Some(Resolved::Text(&owned_text))
            }
            ANY => {
                owned_text = product.lexical_text();
                Some(Resolved::Text(&owned_text))
            }
            name => match product.attributes.get(name) {
                None => None,
                Some(AttrValue::Text(s)) => Some(Resolved::Text(s)),
                Some(v) => Some(Resolved::Number(v.as_number().expect("numeric variant"))),
            },
        };
        let Some(actual) = resolved else {
            return matches!(self.op, ConstraintOp::Ne | ConstraintOp::NotContains);
        };
        match self.op {
            ConstraintOp::Le | ConstraintOp::Ge => {
                let (ConstraintValue::Number(limit), Resolved::Number(v)) = (&self.value, actual)
                else {
                    return false;
                };
                if self.op == ConstraintOp::Le {
                    v <= *limit
                } else {
                    v >= *limit
                }
            }
            ConstraintOp::Eq => equals(actual, &self.value),
            ConstraintOp::Ne => !equals(actual, &self.value),
            ConstraintOp::Contains => contains(actual, &self.value),
            ConstraintOp::NotContains => !contains(actual, &self.value),
        }
    }
}

fn resolved_text(actual: Resolved<'_>) -> String {
    match actual {
        Resolved::Number(n) => crate::text::format_number(n),
        Resolved::Text(s) => s.to_lowercase(),
    }
}

fn equals(actual: Resolved<'_>, expected: &ConstraintValue) -> bool {
    match (actual, expected) {
        (Resolved::Number(a), ConstraintValue::Number(b)) => (a - b).abs() < 1e-9,
        (Resolved::Text(a), ConstraintValue::Text(b)) => a.trim().eq_ignore_ascii_case(b.trim()),
        (Resolved::Number(a), ConstraintValue::Text(b)) => {
            b.trim().parse::<f64>().is_ok_and(|b| (a - b).abs() < 1e-9)
        }
        (Resolved::Text(a), ConstraintValue::Number(b)) => {
            a.trim().parse::<f64>().is_ok_and(|a| (a - b).abs() < 1e-9)
        }
    }
}

fn contains(actual: Resolved<'_>, needle: &ConstraintValue) -> bool {
    let needle = match needle {
        ConstraintValue::Number(n) => crate::text::format_number(*n),
        ConstraintValue::Text(s) => s.to_lowercase(),
    };
    resolved_text(actual).contains(needle.trim())
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hardness = match self.hardness {
            Hardness::Hard => "hard",
            Hardness::Soft => "soft",
        };
        write!(
            f,
            "{} {} {} ({hardness})",
            self.attribute,
            self.op.symbol(),
            self.value
        )
    }
}
