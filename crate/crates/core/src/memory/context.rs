use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    Click,
    AddToCart,
    FacetClick,
    SuggestionClick,
}

/// One user interaction. For facet clicks `item_id` holds `attribute=label`;
/// for suggestion clicks it holds the suggestion text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub item_id: String,
    pub kind: InteractionKind,
    pub timestamp: DateTime<Utc>,
}

impl Interaction {
    pub fn facet_key(attribute: &str, label: &str) -> String {
        format!("{attribute}={label}")
    }

    /// Splits a facet-click item id back into `(attribute, label)`.
    pub fn facet_parts(&self) -> Option<(&str, &str)> {
        if self.kind != InteractionKind::FacetClick {
            return None;
        }
        self.item_id.split_once('=')
    }
}

/// Everything the agents know about the session at the start of a turn.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionContext {
    pub session_id: String,
    /// Current query.
    pub query: String,
    /// Prior queries, oldest first.
    #[serde(default)]
    pub search_history: Vec<String>,
    #[serde(default)]
    pub click_history: Vec<Interaction>,
    #[serde(default)]
    pub user_profile: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub turn_index: u64,
}

impl SessionContext {
    pub fn new(session_id: impl Into<String>, query: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            query: query.into(),
            ..Default::default()
        }
    }

    pub fn with_profile(mut self, key: &str, value: serde_json::Value) -> Self {
        self.user_profile.insert(key.to_string(), value);
        self
    }

    /// Numeric budget from the profile, if one was given.
    pub fn profile_budget(&self) -> Option<f64> {
        match self.user_profile.get("budget")? {
            serde_json::Value::Number(n) => n.as_f64(),
            serde_json::Value::String(s) => s.trim().trim_start_matches('$').parse().ok(),
            _ => None,
        }
    }
}
