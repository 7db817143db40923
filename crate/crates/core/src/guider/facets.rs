use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{GuideError, GuiderConfig, UserState};
use crate::catalog::AttrValue;
use crate::executor::CandidateSet;
use crate::text::format_number;

pub const UNKNOWN_BUCKET: &str = "unknown";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucketing {
    #[default]
    EqualWidth,
    Quantile,
}

/// Membership rule of one bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BucketPredicate {
    Equals {
        value: String,
    },
    /// `min <= v < max`; either side may be open.
    Range {
        #[serde(skip_serializing_if = "Option::is_none")]
        min: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        max: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        unit: Option<String>,
    },
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub label: String,
    pub predicate: BucketPredicate,
    pub count: usize,
    /// Candidate ids in candidate-set order.
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Facet {
    pub attribute: String,
    pub buckets: Vec<Bucket>,
    pub info_gain: f64,
}

impl Facet {
    pub fn bucket(&self, label: &str) -> Option<&Bucket> {
        self.buckets.iter().find(|b| b.label == label)
    }
}

fn attr<'a>(candidates: &'a CandidateSet, id: &str, attribute: &str) -> Option<&'a AttrValue> {
    candidates.enriched.get(id)?.attributes.get(attribute)
}

/// Partitions the candidates by their value of `attribute`. Numeric
/// attributes (every present value numeric) get range buckets; anything else
/// is grouped by display text. Candidates lacking the attribute go to the
/// `unknown` bucket. Empty buckets are dropped.
pub fn partition(candidates: &CandidateSet, attribute: &str, config: &GuiderConfig) -> Vec<Bucket> {
    let values: Vec<(&str, Option<&AttrValue>)> = candidates
        .ids()
        .map(|id| (id, attr(candidates, id, attribute)))
        .collect();
    let present: Vec<&AttrValue> = values.iter().filter_map(|(_, v)| *v).collect();
    let numeric = !present.is_empty() && present.iter().all(|v| v.as_number().is_some());

    let mut buckets: Vec<Bucket> = if numeric {
        let unit = present
            .iter()
            .filter_map(|v| v.unit())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .next()
            .map(str::to_string);
        let nums: Vec<f64> = present.iter().filter_map(|v| v.as_number()).collect();
        let edges = bucket_edges(&nums, config.buckets.max(1), config.bucketing);
        let mut out = range_buckets(&edges, &nums, unit.as_deref());
        for (id, v) in &values {
            if let Some(n) = v.and_then(AttrValue::as_number) {
                let idx = edges.iter().filter(|&&e| n >= e).count();
                out[idx].members.push(id.to_string());
            }
        }
        out
    } else {
        let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (id, v) in &values {
            if let Some(v) = v {
                groups
                    .entry(v.display_text())
                    .or_default()
                    .push(id.to_string());
            }
        }
        groups
            .into_iter()
            .map(|(value, members)| Bucket {
                label: value.clone(),
                predicate: BucketPredicate::Equals { value },
                count: 0,
                members,
            })
            .collect()
    };
    let missing: Vec<String> = values
        .iter()
        .filter(|(_, v)| v.is_none())
        .map(|(id, _)| id.to_string())
        .collect();
    if !missing.is_empty() {
        buckets.push(Bucket {
            label: UNKNOWN_BUCKET.into(),
            predicate: BucketPredicate::Missing,
            count: 0,
            members: missing,
        });
    }
    buckets.retain(|b| !b.members.is_empty());
    for b in &mut buckets {
        b.count = b.members.len();
    }
    buckets
}

/// Interior cut points; a value lands in bucket `#{edges <= v}`.
fn bucket_edges(values: &[f64], buckets: usize, bucketing: Bucketing) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return vec![];
    }
    let mut edges: Vec<f64> = match bucketing {
        Bucketing::EqualWidth => {
            let width = (max - min) / buckets as f64;
            (1..buckets).map(|j| min + j as f64 * width).collect()
        }
        Bucketing::Quantile => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            (1..buckets)
                .map(|j| sorted[j * sorted.len() / buckets])
                .filter(|&e| e > min)
                .collect()
        }
    };
    edges.dedup();
    edges
}

fn range_buckets(edges: &[f64], values: &[f64], unit: Option<&str>) -> Vec<Bucket> {
    let u = unit.unwrap_or("");
    let precise = edges
        .windows(2)
        .any(|w| format_number(w[0]) == format_number(w[1]));
    let fmt = |x: f64| {
        if precise {
            format!("{x}")
        } else {
            format_number(x)
        }
    };
    let mk = |label: String, min: Option<f64>, max: Option<f64>| Bucket {
        label,
        predicate: BucketPredicate::Range {
            min,
            max,
            unit: unit.map(str::to_string),
        },
        count: 0,
        members: vec![],
    };
    if edges.is_empty() {
        let v = values.first().copied().unwrap_or_default();
        return vec![mk(format!("{}{u}", fmt(v)), Some(v), None)];
    }
    let mut out = vec![mk(format!("<{}{u}", fmt(edges[0])), None, Some(edges[0]))];
    for w in edges.windows(2) {
        out.push(mk(
            format!("{}–{}{u}", fmt(w[0]), fmt(w[1])),
            Some(w[0]),
            Some(w[1]),
        ));
    }
    let last = *edges.last().expect("non-empty");
    out.push(mk(format!("≥{}{u}", fmt(last)), Some(last), None));
    out
}

/// Entropy (bits) of the attribute's value distribution under the
/// user-weighted prior over candidates.
pub fn info_gain(
    attribute: &str,
    candidates: &CandidateSet,
    state: &UserState,
    config: &GuiderConfig,
) -> Result<f64, GuideError> {
    if candidates.is_empty() {
        return Err(GuideError::EmptyCandidates);
    }
    Ok(gain_of(
        &partition(candidates, attribute, config),
        candidates,
        state,
    ))
}

fn gain_of(buckets: &[Bucket], candidates: &CandidateSet, state: &UserState) -> f64 {
    let weights: Vec<f64> = candidates.ids().map(|id| state.weight(id)).collect();
    let total: f64 = weights.iter().sum();
    let uniform = !(total > 0.0);
    let index: BTreeMap<&str, usize> = candidates
        .ids()
        .enumerate()
        .map(|(i, id)| (id, i))
        .collect();
    let mut h = 0.0;
    for b in buckets {
        let mass: f64 = if uniform {
            b.members.len() as f64 / weights.len() as f64
        } else {
            b.members
                .iter()
                .map(|id| weights[index[id.as_str()]])
                .sum::<f64>()
                / total
        };
        if mass > 0.0 {
            h -= mass * mass.log2();
        }
    }
    h.clamp(0.0, (candidates.len() as f64).log2())
}

/// Attributes carried by at least two candidates, in name order.
pub fn facetable_attributes(candidates: &CandidateSet) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for id in candidates.ids() {
        if let Some(e) = candidates.enriched.get(id) {
            for name in e.attributes.keys() {
                *counts.entry(name).or_default() += 1;
            }
        }
    }
    counts
        .into_iter()
        .filter(|&(_, c)| c >= 2)
        .map(|(n, _)| n.to_string())
        .collect()
}

/// Gains are compared after rounding to 1e-10 so that last-ulp noise from
/// weight normalization cannot reorder equal-gain facets.
fn gain_key(g: f64) -> i64 {
    (g * 1e10).round() as i64
}

/// Top `max_facets` attributes by info gain, excluding attributes in
/// `fixed` and zero-gain ones. Ties go to the lexicographically smaller name.
pub fn generate_facets(
    candidates: &CandidateSet,
    state: &UserState,
    fixed: &BTreeSet<String>,
    max_facets: usize,
    config: &GuiderConfig,
) -> Vec<Facet> {
    if candidates.is_empty() {
        return vec![];
    }
    let mut facets: Vec<Facet> = facetable_attributes(candidates)
        .into_iter()
        .filter(|a| !fixed.contains(a) && !state.active_facets.iter().any(|(f, _)| f == a))
        .filter_map(|attribute| {
            let buckets = partition(candidates, &attribute, config);
            let info_gain = gain_of(&buckets, candidates, state);
            (gain_key(info_gain) > 0).then_some(Facet {
                attribute,
                buckets,
                info_gain,
            })
        })
        .collect();
    facets.sort_by(|a, b| {
        gain_key(b.info_gain)
            .cmp(&gain_key(a.info_gain))
            .then_with(|| a.attribute.cmp(&b.attribute))
    });
    facets.truncate(max_facets);
    facets
}

/// Keeps exactly the members of the selected bucket, in their original order.
pub fn apply_facet(
    candidates: &CandidateSet,
    facets: &[Facet],
    attribute: &str,
    label: &str,
) -> Result<CandidateSet, GuideError> {
    let stale = || GuideError::StaleSelection {
        attribute: attribute.to_string(),
        bucket: label.to_string(),
    };
    let bucket = facets
        .iter()
        .find(|f| f.attribute == attribute)
        .and_then(|f| f.bucket(label))
        .ok_or_else(stale)?;
    let keep: BTreeSet<&str> = bucket.members.iter().map(String::as_str).collect();
    let mut out = candidates.clone();
    out.retain(|id| keep.contains(id));
    Ok(out)
}
