use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::constraint::Constraint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ProductSearch,
    WebSearch,
    ToolInvocation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductSearchParams {
    pub query: String,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebSearchParams {
    pub need: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolParams {
    pub tool: String,
    #[serde(default)]
    pub args: serde_json::Map<String, serde_json::Value>,
}

/// Kind plus kind-specific parameters. Serialized as `"kind"` and `"params"`
/// keys on the node object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum TaskSpec {
    ProductSearch(ProductSearchParams),
    WebSearch(WebSearchParams),
    ToolInvocation(ToolParams),
}

impl TaskSpec {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskSpec::ProductSearch(_) => TaskKind::ProductSearch,
            TaskSpec::WebSearch(_) => TaskKind::WebSearch,
            TaskSpec::ToolInvocation(_) => TaskKind::ToolInvocation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskNode {
    pub id: String,
    #[serde(flatten)]
    pub spec: TaskSpec,
    #[serde(default)]
    pub inputs: BTreeSet<String>,
    #[serde(default)]
    pub outputs: BTreeSet<String>,
}

impl TaskNode {
    pub fn new(id: impl Into<String>, spec: TaskSpec) -> Self {
        Self {
            id: id.into(),
            spec,
            inputs: BTreeSet::new(),
            outputs: BTreeSet::new(),
        }
    }

    pub fn with_inputs<I: IntoIterator<Item = S>, S: Into<String>>(mut self, slots: I) -> Self {
        self.inputs.extend(slots.into_iter().map(Into::into));
        self
    }

    pub fn with_outputs<I: IntoIterator<Item = S>, S: Into<String>>(mut self, slots: I) -> Self {
        self.outputs.extend(slots.into_iter().map(Into::into));
        self
    }

    pub fn kind(&self) -> TaskKind {
        self.spec.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskEdge {
    pub from: String,
    pub to: String,
    pub slot: String,
}

impl TaskEdge {
    pub fn new(from: &str, to: &str, slot: &str) -> Self {
        Self {
            from: from.into(),
            to: to.into(),
            slot: slot.into(),
        }
    }
}

/// Directed acyclic graph of tasks. An edge carries one named slot from the
/// producer's outputs to the consumer's inputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub nodes: Vec<TaskNode>,
    #[serde(default)]
    pub edges: Vec<TaskEdge>,
}

impl TaskGraph {
    pub fn node(&self, id: &str) -> Option<&TaskNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn nodes_of(&self, kind: TaskKind) -> impl Iterator<Item = &TaskNode> {
        self.nodes.iter().filter(move |n| n.kind() == kind)
    }

    /// Ids of the direct dependencies of `id`, deduplicated and sorted.
    pub fn parents(&self, id: &str) -> BTreeSet<&str> {
        self.edges
            .iter()
            .filter(|e| e.to == id)
            .map(|e| e.from.as_str())
            .collect()
    }

    /// Removes the given nodes and every edge touching them.
    pub fn without_nodes(&self, drop: impl Fn(&TaskNode) -> bool) -> TaskGraph {
        let removed: BTreeSet<&str> = self
            .nodes
            .iter()
            .filter(|n| drop(n))
            .map(|n| n.id.as_str())
            .collect();
        TaskGraph {
            nodes: self
                .nodes
                .iter()
                .filter(|n| !removed.contains(n.id.as_str()))
                .cloned()
                .collect(),
            edges: self
                .edges
                .iter()
                .filter(|e| !removed.contains(e.from.as_str()) && !removed.contains(e.to.as_str()))
                .cloned()
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    DuplicateNode { id: String },
    EmptySlot { node: String },
    UnresolvedEndpoint { edge: usize, id: String },
    SlotNotProduced { slot: String, node: String },
    SlotNotConsumed { slot: String, node: String },
    UncoveredInput { slot: String, node: String },
    Cycle { nodes: Vec<String> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateNode { id } => write!(f, "duplicate node id '{id}'"),
            Violation::EmptySlot { node } => write!(f, "empty slot name on '{node}'"),
            Violation::UnresolvedEndpoint { edge, id } => {
                write!(f, "edge {edge}: endpoint '{id}' does not resolve")
            }
            Violation::SlotNotProduced { slot, node } => {
                write!(f, "slot '{slot}' ∉ outputs({node})")
            }
            Violation::SlotNotConsumed { slot, node } => {
                write!(f, "slot '{slot}' ∉ inputs({node})")
            }
            Violation::UncoveredInput { slot, node } => {
                write!(f, "input slot '{slot}' of {node} has no producing edge")
            }
            Violation::Cycle { nodes } => write!(f, "cycle: {}", nodes.join(",")),
        }
    }
}

/// Checks id uniqueness, endpoint resolution, slot coverage and acyclicity,
/// in that order, and reports every violation found.
pub fn validate_graph(g: &TaskGraph) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();

    let mut first: HashMap<&str, usize> = HashMap::new();
    for (i, node) in g.nodes.iter().enumerate() {
        if first.contains_key(node.id.as_str()) {
            violations.push(Violation::DuplicateNode {
                id: node.id.clone(),
            });
        } else {
            first.insert(node.id.as_str(), i);
        }
        if node
            .inputs
            .iter()
            .chain(&node.outputs)
            .any(|s| s.trim().is_empty())
        {
            violations.push(Violation::EmptySlot {
                node: node.id.clone(),
            });
        }
    }
    let first_index = |id: &str| first.get(id).copied();

    let mut resolved_edges = Vec::new();
    for (i, e) in g.edges.iter().enumerate() {
        let from = first_index(&e.from);
        let to = first_index(&e.to);
        for (id, found) in [(&e.from, from), (&e.to, to)] {
            if found.is_none() {
                violations.push(Violation::UnresolvedEndpoint {
                    edge: i,
                    id: id.clone(),
                });
            }
        }
        if let (Some(from), Some(to)) = (from, to) {
            resolved_edges.push((from, to, e));
        }
    }

    let mut covered: BTreeMap<usize, BTreeSet<&str>> = BTreeMap::new();
    for &(from, to, e) in &resolved_edges {
        if !g.nodes[from].outputs.contains(&e.slot) {
            violations.push(Violation::SlotNotProduced {
                slot: e.slot.clone(),
                node: e.from.clone(),
            });
        }
        if !g.nodes[to].inputs.contains(&e.slot) {
            violations.push(Violation::SlotNotConsumed {
                slot: e.slot.clone(),
                node: e.to.clone(),
            });
        }
        covered.entry(to).or_default().insert(e.slot.as_str());
    }
    for (i, node) in g.nodes.iter().enumerate() {
        if first_index(&node.id) != Some(i) {
            continue;
        }
        for slot in &node.inputs {
            if !covered.get(&i).is_some_and(|c| c.contains(slot.as_str())) {
                violations.push(Violation::UncoveredInput {
                    slot: slot.clone(),
                    node: node.id.clone(),
                });
            }
        }
    }

    let edges: Vec<(usize, usize)> = resolved_edges.iter().map(|&(f, t, _)| (f, t)).collect();
    if topological_order(g.nodes.len(), &edges).is_none() {
        for mut cycle in cyclic_components(g.nodes.len(), &edges) {
            cycle.sort_unstable();
            violations.push(Violation::Cycle {
                nodes: cycle.into_iter().map(|i| g.nodes[i].id.clone()).collect(),
            });
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Kahn's algorithm; among ready nodes the lowest index goes first. `None`
/// when the graph has a cycle.
pub(crate) fn topological_order(n: usize, edges: &[(usize, usize)]) -> Option<Vec<usize>> {
    let mut indegree = vec![0usize; n];
    let mut children = vec![Vec::new(); n];
    for &(f, t) in edges {
        indegree[t] += 1;
        children[f].push(t);
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &c in &children[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert(c);
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Strongly connected components that contain a cycle (size > 1, or a
/// self-loop), via Tarjan's algorithm.
fn cyclic_components(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    struct Tarjan<'a> {
        adj: &'a [Vec<usize>],
        index: Vec<Option<usize>>,
        low: Vec<usize>,
        on_stack: Vec<bool>,
        stack: Vec<usize>,
        next: usize,
        out: Vec<Vec<usize>>,
    }
    impl Tarjan<'_> {
        fn visit(&mut self, v: usize) {
            self.index[v] = Some(self.next);
            self.low[v] = self.next;
            self.next += 1;
            self.stack.push(v);
            self.on_stack[v] = true;
            for &w in &self.adj[v] {
                match self.index[w] {
                    None => {
                        self.visit(w);
                        self.low[v] = self.low[v].min(self.low[w]);
                    }
                    Some(iw) if self.on_stack[w] => self.low[v] = self.low[v].min(iw),
                    _ => {}
                }
            }
            if Some(self.low[v]) == self.index[v] {
                let mut comp = Vec::new();
                while let Some(w) = self.stack.pop() {
                    self.on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                let self_loop = comp.len() == 1 && self.adj[v].contains(&v);
                if comp.len() > 1 || self_loop {
                    self.out.push(comp);
                }
            }
        }
    }

    let mut adj = vec![Vec::new(); n];
    for &(f, t) in edges {
        adj[f].push(t);
    }
    let mut t = Tarjan {
        adj: &adj,
        index: vec![None; n],
        low: vec![0; n],
        on_stack: vec![false; n],
        stack: Vec::new(),
        next: 0,
        out: Vec::new(),
    };
    for v in 0..n {
        if t.index[v].is_none() {
            t.visit(v);
        }
    }
    t.out.sort();
    t.out
}
