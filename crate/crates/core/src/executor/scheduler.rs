use std::collections::{BTreeMap, BTreeSet};
use std::sync::mpsc;
use std::thread;

use crate::planner::{TaskGraph, TaskNode};

/// Final state of one node after scheduling.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeOutcome<P, E> {
    Ok(P),
    Failed(E),
    /// Not run because an ancestor failed.
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleEvent<'a, P, E> {
    Started {
        node: &'a TaskNode,
    },
    Finished {
        node: &'a TaskNode,
        outcome: &'a Result<P, E>,
    },
}

/// Runs every node of a validated graph. A node starts once all of its
/// parents have finished ok; up to `parallelism` nodes run at once. When a
/// node fails, its descendants are never started and come back as
/// [`NodeOutcome::Skipped`]; unrelated branches keep going.
///
/// `run` receives the node and the payloads of its incoming edges keyed by
/// slot name. `observe` is called on the calling thread, in the order events
/// happen. Returns outcomes keyed by node id plus the completion order.
pub fn schedule<P, E, R, O>(
    graph: &TaskGraph,
    parallelism: usize,
    run: R,
    mut observe: O,
) -> (BTreeMap<String, NodeOutcome<P, E>>, Vec<String>)
where
    P: Clone + Send,
    E: Send,
    R: Fn(&TaskNode, BTreeMap<String, P>) -> Result<P, E> + Sync,
    O: FnMut(ScheduleEvent<'_, P, E>),
{
    let n = graph.nodes.len();
    let index: BTreeMap<&str, usize> = graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, node)| (node.id.as_str(), i))
        .collect();
    let mut parents: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    let mut children: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    let mut incoming: Vec<Vec<(usize, &str)>> = vec![Vec::new(); n];
    for e in &graph.edges {
        if let (Some(&f), Some(&t)) = (index.get(e.from.as_str()), index.get(e.to.as_str())) {
            parents[t].insert(f);
            children[f].insert(t);
            incoming[t].push((f, e.slot.as_str()));
        }
    }

    let mut waiting: Vec<usize> = parents.iter().map(BTreeSet::len).collect();
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| waiting[i] == 0).collect();
    let mut payloads: Vec<Option<P>> = (0..n).map(|_| None).collect();
    let mut outcomes: Vec<Option<NodeOutcome<P, E>>> = (0..n).map(|_| None).collect();
    let mut completion = Vec::with_capacity(n);
    let parallelism = parallelism.max(1);

    thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, Result<P, E>)>();
        let run = &run;
        let mut running = 0usize;
        loop {
            while running < parallelism {
                let Some(i) = ready.pop_first() else { break };
                let node = &graph.nodes[i];
                let inputs: BTreeMap<String, P> = incoming[i]
                    .iter()
                    .filter_map(|&(f, slot)| payloads[f].clone().map(|p| (slot.to_string(), p)))
                    .collect();
                observe(ScheduleEvent::Started { node });
                let tx = tx.clone();
                scope.spawn(move || {
                    let result = run(node, inputs);
                    // receiver outlives every worker inside the scope
                    let _ = tx.send((i, result));
                });
                running += 1;
            }
            if running == 0 {
                break;
            }
            let (i, result) = rx.recv().expect("worker result");
            running -= 1;
            observe(ScheduleEvent::Finished {
                node: &graph.nodes[i],
                outcome: &result,
            });
            completion.push(graph.nodes[i].id.clone());
            match result {
                Ok(p) => {
                    payloads[i] = Some(p.clone());
                    outcomes[i] = Some(NodeOutcome::Ok(p));
                    for &c in &children[i] {
                        waiting[c] -= 1;
                        if waiting[c] == 0 {
                            ready.insert(c);
                        }
                    }
                }
                Err(e) => outcomes[i] = Some(NodeOutcome::Failed(e)),
            }
        }
    });

    let results = graph
        .nodes
        .iter()
        .zip(outcomes)
        .map(|(node, o)| (node.id.clone(), o.unwrap_or(NodeOutcome::Skipped)))
        .collect();
    (results, completion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{TaskEdge, TaskSpec, WebSearchParams};

    fn node(id: &str, inputs: &[&str]) -> TaskNode {
        TaskNode::new(id, TaskSpec::WebSearch(WebSearchParams { need: id.into() }))
            .with_inputs(inputs.iter().copied())
            .with_outputs([id])
    }

    #[test]
    fn diamond_with_failing_branch() {
        let g = TaskGraph {
            nodes: vec![
                node("A", &[]),
                node("B", &["A"]),
                node("C", &["A"]),
                node("D", &["B", "C"]),
            ],
            edges: vec![
                TaskEdge::new("A", "B", "A"),
                TaskEdge::new("A", "C", "A"),
                TaskEdge::new("B", "D", "B"),
                TaskEdge::new("C", "D", "C"),
            ],
        };
        let (out, _) = schedule(
            &g,
            4,
            |n, _| if n.id == "B" { Err("boom") } else { Ok(()) },
            |_| {},
        );
        assert_eq!(out["A"], NodeOutcome::Ok(()));
        assert_eq!(out["B"], NodeOutcome::Failed("boom"));
        assert_eq!(out["C"], NodeOutcome::Ok(()));
        assert_eq!(out["D"], NodeOutcome::Skipped);
    }

    #[test]
    fn chain_completes_in_topological_order() {
        let ids = ["n1", "n2", "n3", "n4", "n5"];
        let mut g = TaskGraph::default();
        for (i, id) in ids.iter().enumerate() {
            let inputs: Vec<&str> = if i == 0 { vec![] } else { vec![ids[i - 1]] };
            g.nodes.push(node(id, &inputs));
            if i > 0 {
                g.edges.push(TaskEdge::new(ids[i - 1], id, ids[i - 1]));
            }
        }
        let (_, order) = schedule(
            &g,
            4,
            |n, inputs| {
                // each node sees exactly its parent's payload
                let expected = if n.id == "n1" { 0 } else { 1 };
                assert_eq!(inputs.len(), expected);
                Ok::<_, ()>(n.id.clone())
            },
            |_| {},
        );
        assert_eq!(order, ids);
    }

    #[test]
    fn inputs_carry_parent_payloads() {
        let g = TaskGraph {
            nodes: vec![node("A", &[]), node("B", &["A"])],
            edges: vec![TaskEdge::new("A", "B", "A")],
        };
        let (out, _) = schedule(
            &g,
            1,
            |n, inputs| {
                Ok::<_, ()>(match n.id.as_str() {
                    "A" => 20,
                    _ => inputs["A"] + 1,
                })
            },
            |_| {},
        );
        assert_eq!(out["B"], NodeOutcome::Ok(21));
    }
}
