//! BPMN-subset process graph shared by deduction, SA-BPMN and orchestration.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeKind {
    Start,
    End,
    Task { function: String },
    Call { process: String },
    Parallel,
    Exclusive,
}

impl NodeKind {
    pub fn is_gateway(&self) -> bool {
        matches!(self, NodeKind::Parallel | NodeKind::Exclusive)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub name: String,
    #[serde(flatten)]
    pub kind: NodeKind,
    /// Partner lane, for tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lane: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub id: String,
    pub from: String,
    pub to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub default: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProcessGraph {
    pub id: String,
    pub name: String,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum GraphIssue {
    #[error("expected exactly one start event, found {0}")]
    StartCount(usize),
    #[error("no end event")]
    NoEnd,
    #[error("edge `{0}` references unknown node `{1}`")]
    DanglingEdge(String, String),
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("node `{0}` has {1} incoming and {2} outgoing edges")]
    Degree(String, usize, usize),
    #[error("graph contains a cycle through `{0}`")]
    Cycle(String),
    #[error("node `{0}` is not on a start-to-end path")]
    Unreachable(String),
    #[error("split `{0}` has no matching join of the same kind")]
    UnmatchedSplit(String),
    #[error("execution can deadlock with tokens on {0:?}")]
    Deadlock(Vec<String>),
    #[error("execution can finish with {0} tokens reaching end events")]
    ImproperCompletion(usize),
}

impl ProcessGraph {
    pub fn new(id: impl Into<String>, name: impl Into<String>) -> Self {
        Self { id: id.into(), name: name.into(), nodes: vec![], edges: vec![] }
    }

    pub fn add_node(&mut self, id: impl Into<String>, name: impl Into<String>, kind: NodeKind, lane: Option<String>) -> String {
        let id = id.into();
        self.nodes.push(Node { id: id.clone(), name: name.into(), kind, lane });
        id
    }

    pub fn add_edge(&mut self, from: &str, to: &str) -> &mut Edge {
        let id = format!("{}_e{}", self.id, self.edges.len() + 1);
        self.edges.push(Edge { id, from: from.to_string(), to: to.to_string(), condition: None, default: false });
        self.edges.last_mut().expect("just pushed")
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn start(&self) -> Option<&Node> {
        self.nodes.iter().find(|n| n.kind == NodeKind::Start)
    }

    pub fn outgoing<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| e.from == id)
    }

    pub fn incoming<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| e.to == id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = (&Node, &str)> {
        self.nodes.iter().filter_map(|n| match &n.kind {
            NodeKind::Task { function } => Some((n, function.as_str())),
            _ => None,
        })
    }

    /// Node ids in a topological order (stable: ties by position in `nodes`).
    pub fn topological_order(&self) -> Result<Vec<String>, GraphIssue> {
        let index: BTreeMap<&str, usize> = self.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
        let mut indeg = vec![0usize; self.nodes.len()];
        for e in &self.edges {
            if let Some(&t) = index.get(e.to.as_str()) {
                indeg[t] += 1;
            }
        }
        let mut ready: BTreeSet<usize> = (0..self.nodes.len()).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(i) = ready.pop_first() {
            order.push(self.nodes[i].id.clone());
            for e in self.outgoing(&self.nodes[i].id) {
                if let Some(&t) = index.get(e.to.as_str()) {
                    indeg[t] -= 1;
                    if indeg[t] == 0 {
                        ready.insert(t);
                    }
                }
            }
        }
        if order.len() != self.nodes.len() {
            let stuck = (0..self.nodes.len()).find(|&i| indeg[i] > 0).expect("some node is stuck");
            return Err(GraphIssue::Cycle(self.nodes[stuck].id.clone()));
        }
        Ok(order)
    }

    /// Structural checks: single start, ends, degrees, acyclicity,
    /// reachability, and that every split is post-dominated by a join of the
    /// same kind.
    pub fn structural_issues(&self) -> Vec<GraphIssue> {
        let mut issues = Vec::new();
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id.as_str()) {
                issues.push(GraphIssue::DuplicateNode(n.id.clone()));
            }
        }
        for e in &self.edges {
            for end in [&e.from, &e.to] {
                if !ids.contains(end.as_str()) {
                    issues.push(GraphIssue::DanglingEdge(e.id.clone(), end.clone()));
                }
            }
        }
        if !issues.is_empty() {
            return issues;
        }
        let starts = self.nodes.iter().filter(|n| n.kind == NodeKind::Start).count();
        if starts != 1 {
            issues.push(GraphIssue::StartCount(starts));
        }
        if !self.nodes.iter().any(|n| n.kind == NodeKind::End) {
            issues.push(GraphIssue::NoEnd);
        }
        for n in &self.nodes {
            let i = self.incoming(&n.id).count();
            let o = self.outgoing(&n.id).count();
            let ok = match n.kind {
                NodeKind::Start => i == 0 && o == 1,
                NodeKind::End => i == 1 && o == 0,
                NodeKind::Task { .. } | NodeKind::Call { .. } => i == 1 && o == 1,
                NodeKind::Parallel | NodeKind::Exclusive => (i == 1 && o >= 2) || (i >= 2 && o == 1),
            };
            if !ok {
                issues.push(GraphIssue::Degree(n.id.clone(), i, o));
            }
        }
        let order = match self.topological_order() {
            Ok(o) => o,
            Err(c) => {
                issues.push(c);
                return issues;
            }
        };
        if !issues.is_empty() {
            return issues;
        }

        let start = self.start().expect("checked").id.clone();
        let mut reach = BTreeSet::from([start.clone()]);
        for id in &order {
            if reach.contains(id) {
                for e in self.outgoing(id) {
                    reach.insert(e.to.clone());
                }
            }
        }
        let mut coreach: BTreeSet<String> =
            self.nodes.iter().filter(|n| n.kind == NodeKind::End).map(|n| n.id.clone()).collect();
        for id in order.iter().rev() {
            if self.outgoing(id).any(|e| coreach.contains(&e.to)) {
                coreach.insert(id.clone());
            }
        }
        for n in &self.nodes {
            if !reach.contains(&n.id) || !coreach.contains(&n.id) {
                issues.push(GraphIssue::Unreachable(n.id.clone()));
            }
        }
        if !issues.is_empty() {
            return issues;
        }

        let pdom = self.post_dominators(&order);
        for n in &self.nodes {
            if !n.kind.is_gateway() || self.outgoing(&n.id).count() < 2 {
                continue;
            }
            let matched = pdom[&n.id].iter().any(|d| {
                d != &n.id
                    && self.node(d).is_some_and(|j| j.kind == n.kind)
                    && self.incoming(d).count() >= 2
            });
            if !matched {
                issues.push(GraphIssue::UnmatchedSplit(n.id.clone()));
            }
        }
        issues
    }

    fn post_dominators(&self, order: &[String]) -> BTreeMap<String, BTreeSet<String>> {
        let mut pdom: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for id in order.iter().rev() {
            let mut set: Option<BTreeSet<String>> = None;
            for e in self.outgoing(id) {
                let s = &pdom[&e.to];
                set = Some(match set {
                    None => s.clone(),
                    Some(acc) => acc.intersection(s).cloned().collect(),
                });
            }
            let mut set = set.unwrap_or_default();
            set.insert(id.clone());
            pdom.insert(id.clone(), set);
        }
        pdom
    }

    /// All structural issues plus behavioural soundness (no deadlock, exactly
    /// one token reaches an end event). Empty means valid.
    pub fn issues(&self) -> Vec<GraphIssue> {
        let mut issues = self.structural_issues();
        if issues.is_empty() {
            if let Err(e) = self.explore() {
                issues.push(e);
            }
        }
        issues
    }

    pub fn is_valid(&self) -> bool {
        self.issues().is_empty()
    }

    /// Every task sequence a completed run can produce. Tasks are labelled by
    /// function id, call activities by `call:<process>`.
    pub fn task_sequences(&self) -> Result<BTreeSet<Vec<String>>, GraphIssue> {
        self.explore()
    }

    fn explore(&self) -> Result<BTreeSet<Vec<String>>, GraphIssue> {
        let sim = TokenGame::new(self);
        let mut memo = HashMap::new();
        sim.suffixes(sim.initial(), &mut memo)
    }
}

/// Exhaustive token-game interpreter over edge markings.
struct TokenGame<'a> {
    graph: &'a ProcessGraph,
    incoming: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
}

type Marking = Vec<u8>;

impl<'a> TokenGame<'a> {
    fn new(graph: &'a ProcessGraph) -> Self {
        let index: BTreeMap<&str, usize> = graph.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
        let mut incoming = vec![vec![]; graph.nodes.len()];
        let mut outgoing = vec![vec![]; graph.nodes.len()];
        for (k, e) in graph.edges.iter().enumerate() {
            outgoing[index[e.from.as_str()]].push(k);
            incoming[index[e.to.as_str()]].push(k);
        }
        Self { graph, incoming, outgoing }
    }

    /// Marking plus an end-token counter in the last slot.
    fn initial(&self) -> Marking {
        let mut m = vec![0u8; self.graph.edges.len() + 1];
        for (i, n) in self.graph.nodes.iter().enumerate() {
            if n.kind == NodeKind::Start {
                for &k in &self.outgoing[i] {
                    m[k] += 1;
                }
            }
        }
        m
    }

    fn suffixes(
        &self,
        m: Marking,
        memo: &mut HashMap<Marking, BTreeSet<Vec<String>>>,
    ) -> Result<BTreeSet<Vec<String>>, GraphIssue> {
        if let Some(s) = memo.get(&m) {
            return Ok(s.clone());
        }
        let edges = self.graph.edges.len();
        if m[..edges].iter().all(|&t| t == 0) {
            let ends = m[edges] as usize;
            if ends != 1 {
                return Err(GraphIssue::ImproperCompletion(ends));
            }
            let done = BTreeSet::from([vec![]]);
            memo.insert(m, done.clone());
            return Ok(done);
        }
        let mut out = BTreeSet::new();
        let mut fired = false;
        for (i, n) in self.graph.nodes.iter().enumerate() {
            let ins = &self.incoming[i];
            let outs = &self.outgoing[i];
            let mut successors: Vec<(Marking, Option<String>)> = Vec::new();
            match &n.kind {
                NodeKind::Start => {}
                NodeKind::Parallel => {
                    if !ins.is_empty() && ins.iter().all(|&k| m[k] > 0) {
                        let mut next = m.clone();
                        ins.iter().for_each(|&k| next[k] -= 1);
                        outs.iter().for_each(|&k| next[k] += 1);
                        successors.push((next, None));
                    }
                }
                NodeKind::Exclusive => {
                    for &k in ins.iter().filter(|&&k| m[k] > 0) {
                        for &o in outs {
                            let mut next = m.clone();
                            next[k] -= 1;
                            next[o] += 1;
                            successors.push((next, None));
                        }
                    }
                }
                NodeKind::End => {
                    for &k in ins.iter().filter(|&&k| m[k] > 0) {
                        let mut next = m.clone();
                        next[k] -= 1;
                        next[edges] += 1;
                        successors.push((next, None));
                    }
                }
                NodeKind::Task { function } => {
                    for &k in ins.iter().filter(|&&k| m[k] > 0) {
                        let mut next = m.clone();
                        next[k] -= 1;
                        outs.iter().for_each(|&o| next[o] += 1);
                        successors.push((next, Some(function.clone())));
                    }
                }
                NodeKind::Call { process } => {
                    for &k in ins.iter().filter(|&&k| m[k] > 0) {
                        let mut next = m.clone();
                        next[k] -= 1;
                        outs.iter().for_each(|&o| next[o] += 1);
                        successors.push((next, Some(format!("call:{process}"))));
                    }
                }
            }
            for (next, label) in successors {
                fired = true;
                for suffix in self.suffixes(next, memo)? {
                    let mut seq = Vec::with_capacity(suffix.len() + 1);
                    seq.extend(label.clone());
                    seq.extend(suffix);
                    out.insert(seq);
                }
            }
        }
        if !fired {
            let stuck = self.graph.edges.iter().zip(&m).filter(|(_, &t)| t > 0).map(|(e, _)| e.id.clone()).collect();
            return Err(GraphIssue::Deadlock(stuck));
        }
        memo.insert(m, out.clone());
        Ok(out)
    }
}
