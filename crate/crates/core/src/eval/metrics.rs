use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("gold set is empty")]
    EmptyGold,
    #[error("no transactions in the logs; decision cost is undefined")]
    NoTransactions,
    #[error("log {0} has more than one transaction")]
    MultipleTransactions(usize),
}

/// 1 when a gold id is within the first `k` ranked ids.
pub fn acc_at_k(ranked: &[String], gold: &BTreeSet<String>, k: usize) -> Result<u8, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    if gold.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    Ok(u8::from(ranked.iter().take(k).any(|id| gold.contains(id))))
}

/// Arithmetic mean; 0 for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogEventKind {
    Search,
    Click,
    FacetClick,
    SuggestionClick,
    Transaction,
}

impl LogEventKind {
    /// Searches and every kind of click count as interactions.
    pub fn is_interaction(self) -> bool {
        !matches!(self, LogEventKind::Transaction)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub kind: LogEventKind,
    /// Item bought, for transactions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_id: Option<String>,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub events: Vec<LogEvent>,
}

impl SessionLog {
    pub fn interactions(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.kind.is_interaction())
            .count()
    }

    pub fn transactions(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.kind == LogEventKind::Transaction)
            .count()
    }
}

/// Interactions per transaction, pooled over all logs.
pub fn decision_cost(logs: &[SessionLog]) -> Result<f64, MetricError> {
    let mut interactions = 0usize;
    let mut transactions = 0usize;
    for (i, log) in logs.iter().enumerate() {
        let t = log.transactions();
        if t > 1 {
            return Err(MetricError::MultipleTransactions(i));
        }
        transactions += t;
        interactions += log.interactions();
    }
    if transactions == 0 {
        return Err(MetricError::NoTransactions);
    }
    Ok(interactions as f64 / transactions as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn gold(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn log(searches: usize, clicks: usize, facets: usize, txn: bool) -> SessionLog {
        let t = DateTime::<Utc>::UNIX_EPOCH;
        let ev = |kind| LogEvent {
            kind,
            item_id: None,
            timestamp: t,
        };
        let mut events = Vec::new();
        events.extend((0..searches).map(|_| ev(LogEventKind::Search)));
        events.extend((0..clicks).map(|_| ev(LogEventKind::Click)));
        events.extend((0..facets).map(|_| ev(LogEventKind::FacetClick)));
        if txn {
            events.push(LogEvent {
                kind: LogEventKind::Transaction,
                item_id: Some("p1".into()),
                timestamp: t,
            });
        }
        SessionLog { events }
    }

    #[test]
    fn acc_examples() {
        assert_eq!(acc_at_k(&ids(&["a", "b"]), &gold(&["a"]), 5), Ok(1));
        assert_eq!(acc_at_k(&ids(&["a", "b"]), &gold(&["z"]), 5), Ok(0));
        assert_eq!(acc_at_k(&ids(&["a", "b", "c"]), &gold(&["c"]), 2), Ok(0));
        assert_eq!(
            acc_at_k(&ids(&["a"]), &gold(&[]), 5),
            Err(MetricError::EmptyGold)
        );
        assert_eq!(
            acc_at_k(&ids(&["a"]), &gold(&["a"]), 0),
            Err(MetricError::ZeroK)
        );
        assert_eq!(mean(&[1.0, 0.0]), 0.5);
    }

    #[test]
    fn decision_cost_examples() {
        assert_eq!(decision_cost(&[log(2, 3, 0, true)]), Ok(5.0));
        assert_eq!(
            decision_cost(&[log(2, 1, 1, true), log(3, 3, 0, true)]),
            Ok(5.0)
        );
        assert_eq!(
            decision_cost(&[log(2, 2, 0, false)]),
            Err(MetricError::NoTransactions)
        );
        let mut two = log(1, 0, 0, true);
        two.events.push(two.events[1].clone());
        assert_eq!(
            decision_cost(&[two]),
            Err(MetricError::MultipleTransactions(0))
        );
    }
}
