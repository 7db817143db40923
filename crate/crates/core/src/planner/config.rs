use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;

/// A keyword that adds a tool call to the plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolTrigger {
    /// Phrase matched case-insensitively on word boundaries.
    pub phrase: String,
    pub tool: String,
    /// Argument name that receives the word following the phrase.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture: Option<String>,
    /// Profile keys copied into the tool's arguments when present.
    #[serde(default)]
    pub profile_args: Vec<String>,
    /// Output slot of another task this tool consumes (e.g. `candidates`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consumes: Option<String>,
}

/// Trigger lexicons and patterns for the rule planner. Loaded from JSON so the
/// vocabulary can change without a rebuild.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub consultative_triggers: Vec<String>,
    /// When set, "for <word>" counts as a consultative trigger.
    pub activity_trigger: bool,
    pub tool_triggers: Vec<ToolTrigger>,
    pub currency_symbols: Vec<String>,
    pub currency_words: Vec<String>,
    pub upper_bound_words: Vec<String>,
    pub lower_bound_words: Vec<String>,
    pub negation_words: Vec<String>,
    /// Negated term (lowercase) to the attribute it constrains. Unlisted terms
    /// constrain the item's whole text.
    pub negation_attributes: BTreeMap<String, String>,
    /// Unit suffix (lowercase) to the attributes measured in it.
    pub unit_attributes: BTreeMap<String, BTreeSet<String>>,
    /// Attribute names usable in "with <attribute> <value>" phrases.
    pub attributes: BTreeSet<String>,
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            consultative_triggers: words(&[
                "best",
                "vs",
                "versus",
                "compare",
                "comparison",
                "which",
                "how to",
                "recommend",
                "recommendation",
                "should i",
                "worth it",
                "review",
                "reviews",
            ]),
            activity_trigger: true,
            tool_triggers: vec![
                ToolTrigger {
                    phrase: "delivery by".into(),
                    tool: "logistics_eta".into(),
                    capture: Some("deadline".into()),
                    profile_args: vec!["zip".into()],
                    consumes: None,
                },
                ToolTrigger {
                    phrase: "deliver by".into(),
                    tool: "logistics_eta".into(),
                    capture: Some("deadline".into()),
                    profile_args: vec!["zip".into()],
                    consumes: None,
                },
                ToolTrigger {
                    phrase: "arrive by".into(),
                    tool: "logistics_eta".into(),
                    capture: Some("deadline".into()),
                    profile_args: vec!["zip".into()],
                    consumes: None,
                },
                ToolTrigger {
                    phrase: "weather".into(),
                    tool: "weather".into(),
                    capture: None,
                    profile_args: vec!["city".into()],
                    consumes: None,
                },
                ToolTrigger {
                    phrase: "price history".into(),
                    tool: "price_history".into(),
                    capture: None,
                    profile_args: vec![],
                    consumes: Some("candidates".into()),
                },
                ToolTrigger {
                    phrase: "price trend".into(),
                    tool: "price_history".into(),
                    capture: None,
                    profile_args: vec![],
                    consumes: Some("candidates".into()),
                },
            ],
            currency_symbols: words(&["$", "€", "£", "¥"]),
            currency_words: words(&[
                "dollar", "dollars", "usd", "bucks", "eur", "euro", "euros", "rmb", "yuan",
            ]),
            upper_bound_words: words(&[
                "under",
                "below",
                "less than",
                "cheaper than",
                "up to",
                "at most",
                "max",
                "within",
                "<",
                "<=",
                "≤",
            ]),
            lower_bound_words: words(&["over", "above", "more than", "at least", ">", ">=", "≥"]),
            negation_words: words(&["without", "no", "non"]),
            negation_attributes: [("oled", "display-type"), ("lcd", "display-type")]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            unit_attributes: BTreeMap::new(),
            attributes: BTreeSet::new(),
        }
    }
}

impl PlannerConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, String> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        serde_json::from_str(&body).map_err(|e| format!("invalid planner config: {e}"))
    }

    /// Adds the catalog's attribute names, measure units and single-attribute
    /// text values to the vocabulary. Explicit config entries win.
    pub fn with_catalog_vocabulary(mut self, catalog: &Catalog) -> Self {
        for (attr, units) in catalog.attribute_units() {
            for unit in units {
                self.unit_attributes
                    .entry(unit.to_lowercase())
                    .or_default()
                    .insert(attr.clone());
            }
            self.attributes.insert(attr);
        }
        for (value, attrs) in catalog.text_values() {
            if attrs.len() == 1 && !value.contains(char::is_whitespace) {
                let attr = attrs.into_iter().next().expect("one attribute");
                self.negation_attributes.entry(value).or_insert(attr);
            }
        }
        self
    }
}
