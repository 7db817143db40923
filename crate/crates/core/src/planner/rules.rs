use std::collections::BTreeMap;
use std::ops::Range;

use regex::Regex;

use super::config::PlannerConfig;
use super::graph::{
    ProductSearchParams, TaskEdge, TaskGraph, TaskNode, TaskSpec, ToolParams, WebSearchParams,
};
use super::{Plan, PlanError};
use crate::constraint::{self, Constraint, ConstraintOp, ConstraintValue, Hardness};
use crate::memory::SessionContext;
use crate::text::{is_stopword, tokenize};

pub const PRODUCT_NODE: &str = "product_search";
pub const WEB_NODE: &str = "web_search";
pub const CANDIDATES_SLOT: &str = "candidates";
pub const EVIDENCE_SLOT: &str = "evidence";

pub fn tool_node_id(tool: &str) -> String {
    format!("tool:{tool}")
}

const NUMBER: &str = r"[0-9]+(?:\.[0-9]+)?";

/// Deterministic planner: a fixed rule table over the query text.
#[derive(Debug, Clone)]
pub struct RulePlanner {
    config: PlannerConfig,
    with_attr: Regex,
    comparison: Regex,
    range: Regex,
    bare_currency: Regex,
    negation: Regex,
    tools: Vec<Regex>,
    value_bound: Regex,
    value_range: Regex,
    value_stop: Regex,
}

fn alternation(words: &[String]) -> String {
    let mut words: Vec<&String> = words.iter().filter(|w| !w.is_empty()).collect();
    words.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    words
        .iter()
        .map(|w| regex::escape(w).replace(' ', r"\s+"))
        .collect::<Vec<_>>()
        .join("|")
}

/// Matches `words` only where they are not glued to a preceding letter/digit.
fn bounded(words: &str) -> String {
    format!(r"(?:^|[^\p{{L}}\p{{N}}])(?P<op>{words})")
}

impl Default for RulePlanner {
    fn default() -> Self {
        Self::new(PlannerConfig::default())
    }
}

impl RulePlanner {
    pub fn new(config: PlannerConfig) -> Self {
        let mut bound_words = config.upper_bound_words.clone();
        bound_words.extend(config.lower_bound_words.iter().cloned());
        let currency_sym = alternation(&config.currency_symbols);
        let comparison = format!(
            r"(?i){}\s*(?P<cur>{currency_sym})?\s*(?P<num>{NUMBER})(?:\s*(?P<unit>\p{{L}}+))?(?:\s+(?P<word>[\p{{L}}-]+))?",
            bounded(&alternation(&bound_words)),
        );
        let range = format!(
            r"(?i)(?:^|[^\p{{L}}\p{{N}}.])(?P<lo>{NUMBER})\s*[–-]\s*(?P<hi>{NUMBER})\s*(?P<unit>\p{{L}}+)(?:\s+(?P<word>[\p{{L}}-]+))?"
        );
        let bare_currency = format!(
            r"(?i)(?:(?P<cur>{currency_sym})\s*(?P<num1>{NUMBER})|(?:^|[^\p{{L}}\p{{N}}.])(?P<num2>{NUMBER})\s*(?P<word>{})\b)",
            alternation(&config.currency_words)
        );
        let negation = format!(
            r"(?i){}(?:\s+|-)(?P<term>[\p{{L}}\p{{N}}]+)",
            bounded(&alternation(&config.negation_words))
        );
        let tools = config
            .tool_triggers
            .iter()
            .map(|t| {
                let p = alternation(std::slice::from_ref(&t.phrase));
                Regex::new(&format!(
                    r"(?i){}\b(?:\s+(?P<arg>[\p{{L}}\p{{N}}]+))?",
                    bounded(&p)
                ))
                .expect("tool trigger regex")
            })
            .collect();
        Self {
            with_attr: Regex::new(r"(?i)\bwith\s+(?P<attr>[\p{L}][\p{L}\p{N}_-]*)\s+")
                .expect("with regex"),
            comparison: Regex::new(&comparison).expect("comparison regex"),
            range: Regex::new(&range).expect("range regex"),
            bare_currency: Regex::new(&bare_currency).expect("currency regex"),
            negation: Regex::new(&negation).expect("negation regex"),
            tools,
            value_bound: Regex::new(&format!(
                r"(?i)^(?P<op>{})\s*(?P<num>{NUMBER})\s*\p{{L}}*$",
                alternation(&bound_words)
            ))
            .expect("value bound regex"),
            value_range: Regex::new(&format!(
                r"^(?P<lo>{NUMBER})\s*[–-]\s*(?P<hi>{NUMBER})\s*\p{{L}}*$"
            ))
            .expect("value range regex"),
            value_stop: Regex::new(r"(?i)[,;]|\bwith(?:out)?\b").expect("stop regex"),
            config,
        }
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    /// Plans one turn. Pure in `ctx`.
    pub fn plan(&self, ctx: &SessionContext) -> Result<Plan, PlanError> {
        let q = ctx.query.as_str();
        if q.trim().is_empty() {
            return Err(PlanError::EmptyQuery);
        }
        let mut x = Extraction::default();
        self.extract_with_attributes(q, &mut x);
        self.extract_comparisons(q, &mut x);
        self.extract_ranges(q, &mut x);
        self.extract_bare_prices(q, &mut x);
        self.extract_negations(q, &mut x);
        let tools = self.extract_tools(q, ctx, &mut x);

        let core = x.strip(q);
        let core = if core.is_empty() {
            q.trim().to_string()
        } else {
            core
        };

        let mut graph = TaskGraph::default();
        graph.nodes.push(
            TaskNode::new(
                PRODUCT_NODE,
                TaskSpec::ProductSearch(ProductSearchParams {
                    query: core.clone(),
                    constraints: x.constraints.clone(),
                }),
            )
            .with_outputs([CANDIDATES_SLOT]),
        );
        let consultative = self.is_consultative(q);
        if consultative {
            graph.nodes.push(
                TaskNode::new(
                    WEB_NODE,
                    TaskSpec::WebSearch(WebSearchParams { need: core }),
                )
                .with_outputs([EVIDENCE_SLOT]),
            );
        }
        for (tool, (args, consumes)) in tools {
            let id = tool_node_id(&tool);
            let mut node = TaskNode::new(
                id.clone(),
                TaskSpec::ToolInvocation(ToolParams {
                    tool: tool.clone(),
                    args,
                }),
            )
            .with_outputs([id.clone()]);
            let producer = match consumes.as_deref() {
                Some(CANDIDATES_SLOT) => Some(PRODUCT_NODE),
                Some(EVIDENCE_SLOT) if consultative => Some(WEB_NODE),
                _ => None,
            };
            if let (Some(producer), Some(slot)) = (producer, consumes) {
                node = node.with_inputs([slot.clone()]);
                graph.edges.push(TaskEdge::new(producer, &id, &slot));
            }
            graph.nodes.push(node);
        }
        Ok(Plan {
            graph,
            constraints: x.constraints,
        })
    }

    fn extract_with_attributes(&self, q: &str, x: &mut Extraction) {
        for caps in self.with_attr.captures_iter(q) {
            let attr_m = caps.name("attr").expect("attr group");
            let attr = attr_m.as_str().to_lowercase();
            if !self.config.attributes.contains(&attr) {
                continue;
            }
            let whole = caps.get(0).expect("match");
            let value_start = whole.end();
            let rest = &q[value_start..];
            let value_len = self.value_stop.find(rest).map_or(rest.len(), |m| m.start());
            let value = rest[..value_len].trim();
            if value.is_empty() {
                continue;
            }
            let span = whole.start()..value_start + value_len;
            if x.overlaps(&span) {
                continue;
            }
            let parsed = self.parse_attribute_value(&attr, value);
            if parsed.is_empty() {
                continue;
            }
            x.claim(span);
            x.constraints.extend(parsed);
        }
    }

    fn parse_attribute_value(&self, attr: &str, value: &str) -> Vec<Constraint> {
        let num = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite());
        if let Some(c) = self.value_bound.captures(value) {
            let op_word = normalize_ws(c.name("op").expect("op").as_str());
            let literal = c.name("num").expect("num").as_str();
            let Some(n) = num(literal) else {
                return vec![];
            };
            let op = if self.is_upper(&op_word) {
                ConstraintOp::Le
            } else {
                ConstraintOp::Ge
            };
            return vec![numeric(attr, op, n, literal)];
        }
        if let Some(c) = self.value_range.captures(value) {
            let (lo_s, hi_s) = (c["lo"].to_string(), c["hi"].to_string());
            if let (Some(lo), Some(hi)) = (num(&lo_s), num(&hi_s)) {
                return vec![
                    numeric(attr, ConstraintOp::Ge, lo, &lo_s),
                    numeric(attr, ConstraintOp::Le, hi, &hi_s),
                ];
            }
            return vec![];
        }
        vec![Constraint::new(
            attr,
            ConstraintOp::Eq,
            ConstraintValue::Text(value.to_string()),
            Hardness::Hard,
        )
        .expect("text equality")
        .with_matched(value)]
    }

    fn is_upper(&self, op_word: &str) -> bool {
        self.config
            .upper_bound_words
            .iter()
            .any(|w| normalize_ws(w).eq_ignore_ascii_case(op_word))
    }

    fn is_currency_word(&self, w: &str) -> bool {
        self.config
            .currency_words
            .iter()
            .any(|c| c.eq_ignore_ascii_case(w))
    }

    /// Picks the attribute measured in `unit`, preferring one whose name
    /// starts with `word`. Returns the attribute and whether `word` was used.
    fn measure_attribute(&self, unit: &str, word: Option<&str>) -> Option<(String, bool)> {
        let attrs = self.config.unit_attributes.get(&unit.to_lowercase())?;
        if let Some(word) = word {
            let word = word.to_lowercase();
            for a in attrs {
                let head = a.split(['-', '_', ' ']).next().unwrap_or(a);
                if *a == word || head == word {
                    return Some((a.clone(), true));
                }
            }
        }
        attrs.iter().next().map(|a| (a.clone(), false))
    }

    fn extract_comparisons(&self, q: &str, x: &mut Extraction) {
        for caps in self.comparison.captures_iter(q) {
            let op_m = caps.name("op").expect("op");
            let num_m = caps.name("num").expect("num");
            let Some(value) = num_m.as_str().parse::<f64>().ok().filter(|v| v.is_finite()) else {
                continue;
            };
            let op = if self.is_upper(&normalize_ws(op_m.as_str())) {
                ConstraintOp::Le
            } else {
                ConstraintOp::Ge
            };
            let unit = caps.name("unit");
            let word = caps.name("word");
            let has_currency = caps.name("cur").is_some();

            let mut end = num_m.end();
            let constraint = match unit {
                Some(u) if self.is_currency_word(u.as_str()) => {
                    end = u.end();
                    price(op, value, num_m.as_str())
                }
                Some(u) if !has_currency => {
                    match self.measure_attribute(u.as_str(), word.map(|w| w.as_str())) {
                        Some((attr, used_word)) => {
                            end = if used_word {
                                word.expect("word").end()
                            } else {
                                u.end()
                            };
                            numeric(&attr, op, value, num_m.as_str())
                        }
                        None => price(op, value, num_m.as_str()),
                    }
                }
                _ => price(op, value, num_m.as_str()),
            };
            let span = op_m.start()..end;
            if x.overlaps(&span) {
                continue;
            }
            x.claim(span);
            x.constraints.push(constraint);
        }
    }

    fn extract_ranges(&self, q: &str, x: &mut Extraction) {
        for caps in self.range.captures_iter(q) {
            let (lo_m, hi_m, unit) = (&caps["lo"], &caps["hi"], &caps["unit"]);
            let word = caps.name("word");
            let Some((attr, used_word)) = self.measure_attribute(unit, word.map(|w| w.as_str()))
            else {
                continue;
            };
            let (Ok(lo), Ok(hi)) = (lo_m.parse::<f64>(), hi_m.parse::<f64>()) else {
                continue;
            };
            if !lo.is_finite() || !hi.is_finite() {
                continue;
            }
            let start = caps.name("lo").expect("lo").start();
            let end = if used_word {
                word.expect("word").end()
            } else {
                caps.name("unit").expect("unit").end()
            };
            if x.overlaps(&(start..end)) {
                continue;
            }
            x.claim(start..end);
            x.constraints
                .push(numeric(&attr, ConstraintOp::Ge, lo, lo_m));
            x.constraints
                .push(numeric(&attr, ConstraintOp::Le, hi, hi_m));
        }
    }

    fn extract_bare_prices(&self, q: &str, x: &mut Extraction) {
        for caps in self.bare_currency.captures_iter(q) {
            let (num_m, start, end) = if let Some(n) = caps.name("num1") {
                (n, caps.name("cur").expect("cur").start(), n.end())
            } else {
                let n = caps.name("num2").expect("num2");
                (n, n.start(), caps.name("word").expect("word").end())
            };
            let Some(value) = num_m.as_str().parse::<f64>().ok().filter(|v| v.is_finite()) else {
                continue;
            };
            if x.overlaps(&(start..end)) {
                continue;
            }
            x.claim(start..end);
            x.constraints
                .push(price(ConstraintOp::Le, value, num_m.as_str()));
        }
    }

    fn extract_negations(&self, q: &str, x: &mut Extraction) {
        for caps in self.negation.captures_iter(q) {
            let op_m = caps.name("op").expect("op");
            let term_m = caps.name("term").expect("term");
            let term = term_m.as_str();
            let lower = term.to_lowercase();
            if is_stopword(&lower) {
                continue;
            }
            let span = op_m.start()..term_m.end();
            if x.overlaps(&span) {
                continue;
            }
            let attribute = self
                .config
                .negation_attributes
                .get(&lower)
                .cloned()
                .unwrap_or_else(|| constraint::ANY.to_string());
            x.claim(span);
            x.constraints.push(
                Constraint::new(
                    &attribute,
                    ConstraintOp::NotContains,
                    ConstraintValue::Text(term.to_string()),
                    Hardness::Hard,
                )
                .expect("text constraint")
                .with_matched(term),
            );
        }
    }

    #[allow(clippy::type_complexity)]
    fn extract_tools(
        &self,
        q: &str,
        ctx: &SessionContext,
        x: &mut Extraction,
    ) -> BTreeMap<String, (serde_json::Map<String, serde_json::Value>, Option<String>)> {
        let mut out: BTreeMap<
            String,
            (serde_json::Map<String, serde_json::Value>, Option<String>),
        > = BTreeMap::new();
        for (trigger, re) in self.config.tool_triggers.iter().zip(&self.tools) {
            for caps in re.captures_iter(q) {
                let op_m = caps.name("op").expect("op");
                let mut end = op_m.end();
                let mut args = serde_json::Map::new();
                if let (Some(name), Some(arg)) = (&trigger.capture, caps.name("arg")) {
                    args.insert(name.clone(), arg.as_str().into());
                    end = arg.end();
                }
                for key in &trigger.profile_args {
                    if let Some(v) = ctx.user_profile.get(key) {
                        args.insert(key.clone(), v.clone());
                    }
                }
                if !x.overlaps(&(op_m.start()..end)) {
                    x.claim(op_m.start()..end);
                }
                let entry = out
                    .entry(trigger.tool.clone())
                    .or_insert_with(|| (serde_json::Map::new(), trigger.consumes.clone()));
                for (k, v) in args {
                    entry.0.entry(k).or_insert(v);
                }
            }
        }
        out
    }

    fn is_consultative(&self, q: &str) -> bool {
        let tokens = tokenize(q);
        let has_phrase = self.config.consultative_triggers.iter().any(|t| {
            let phrase = tokenize(t);
            !phrase.is_empty() && tokens.windows(phrase.len()).any(|w| w == phrase.as_slice())
        });
        let activity = self.config.activity_trigger
            && tokens.windows(2).any(|w| {
                w[0] == "for" && !is_stopword(&w[1]) && w[1].chars().all(char::is_alphabetic)
            });
        has_phrase || activity
    }
}

fn numeric(attr: &str, op: ConstraintOp, value: f64, literal: &str) -> Constraint {
    Constraint::new(attr, op, ConstraintValue::Number(value), Hardness::Hard)
        .expect("numeric constraint")
        .with_matched(literal)
}

fn price(op: ConstraintOp, value: f64, literal: &str) -> Constraint {
    numeric(constraint::PRICE, op, value, literal)
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Default)]
struct Extraction {
    spans: Vec<Range<usize>>,
    constraints: Vec<Constraint>,
}

impl Extraction {
    fn overlaps(&self, r: &Range<usize>) -> bool {
        self.spans
            .iter()
            .any(|s| s.start < r.end && r.start < s.end)
    }

    fn claim(&mut self, r: Range<usize>) {
        self.spans.push(r);
    }

    /// The query with every claimed span removed, whitespace collapsed and
    /// dangling separators trimmed.
    fn strip(&self, q: &str) -> String {
        let mut spans = self.spans.clone();
        spans.sort_by_key(|s| s.start);
        let mut out = String::with_capacity(q.len());
        let mut pos = 0;
        for s in spans {
            if s.start > pos {
                out.push_str(&q[pos..s.start]);
            }
            out.push(' ');
            pos = pos.max(s.end);
        }
        if pos < q.len() {
            out.push_str(&q[pos..]);
        }
        let collapsed = normalize_ws(&out);
        let cleaned = collapsed.replace(" ,", ",").replace(" ;", ";");
        cleaned
            .trim_matches(|c: char| c == ',' || c == ';' || c.is_whitespace())
            .replace(",,", ",")
            .to_string()
    }
}
