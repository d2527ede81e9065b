//! Sequence deduction: message dependencies between selected functions become
//! a process graph per (sub-network, objective kind).
//!
//! Functions of one objective sharing a functional concept are alternatives
//! and sit in an exclusive bracket, forming one unit. Units are ordered by
//! the transitive reduction of their message dependencies; a unit with
//! several predecessors is preceded by a parallel join and one with several
//! successors is followed by a parallel split. The task sequences of the
//! resulting graph are exactly the orderings that respect the dependencies.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{DeductionError, MediationInstances, Selection};
use crate::graph::{NodeKind, ProcessGraph};
use crate::model::{CollaborationModel, ObjectiveKind};
use crate::text;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubProcess {
    pub kind: ObjectiveKind,
    pub sub_network: String,
    pub objectives: Vec<String>,
    pub graph: ProcessGraph,
}

/// An Order whose producer and consumer sit in different sub-processes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageFlow {
    pub order: String,
    pub message: String,
    pub from_process: String,
    pub from_node: String,
    pub to_process: String,
    pub to_node: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub producer: String,
    pub consumer: String,
    pub message: String,
}

/// Why an edge exists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Justification {
    /// Output of one unit consumed by the next.
    Dependency { witnesses: Vec<Witness> },
    /// Internal wiring of a gateway bracket.
    Gateway,
    /// Connection to the start or end event.
    Boundary,
    /// Main-process ordering strategy → operation → support.
    ObjectiveOrder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessCartography {
    pub main_process: ProcessGraph,
    pub sub_processes: Vec<SubProcess>,
    pub message_flows: Vec<MessageFlow>,
    /// Keyed by edge id.
    pub justifications: BTreeMap<String, Justification>,
}

impl ProcessCartography {
    pub fn sub_process(&self, id: &str) -> Option<&SubProcess> {
        self.sub_processes.iter().find(|s| s.graph.id == id)
    }

    pub fn process_of_function(&self, function: &str) -> Option<&SubProcess> {
        self.sub_processes.iter().find(|s| s.graph.tasks().any(|(_, f)| f == function))
    }

    pub fn graphs(&self) -> impl Iterator<Item = &ProcessGraph> {
        std::iter::once(&self.main_process).chain(self.sub_processes.iter().map(|s| &s.graph))
    }
}

struct Unit {
    functions: Vec<(String, String)>,
}

pub fn extract_cartography(
    inst: &MediationInstances,
    selection: &Selection,
    m: &CollaborationModel,
) -> Result<ProcessCartography, DeductionError> {
    if let Some(ob) = selection.unmatched.iter().find(|o| !selection.waived.contains(*o)) {
        return Err(DeductionError::Unmatched(ob.clone()));
    }
    // (kind, sub-network) -> objective ids, functions in first-seen order
    let mut scopes: BTreeMap<(ObjectiveKind, String), (Vec<String>, Vec<(String, String, String)>)> = BTreeMap::new();
    let mut objectives: Vec<_> = m.objectives.iter().collect();
    objectives.sort_by_key(|o| (o.kind, o.id.clone()));
    let mut placed = BTreeSet::new();
    for ob in objectives {
        let Some(chosen) = selection.by_objective.get(&ob.id) else { continue };
        let mut fs = Vec::new();
        for f in chosen {
            if placed.insert(f.function.clone()) {
                fs.push(f.clone());
            }
        }
        if fs.is_empty() {
            continue;
        }
        let entry = scopes.entry((ob.kind, ob.sub_network.clone())).or_default();
        entry.0.push(ob.id.clone());
        for f in fs {
            let concept = m
                .function(&f.function)
                .and_then(|(_, sf)| sf.annotation.first())
                .map(|r| r.concept.clone().unwrap_or_else(|| text::normalize(&r.term)))
                .unwrap_or_default();
            entry.1.push((f.function, f.partner, format!("{}\u{1f}{concept}", ob.id)));
        }
    }

    let mut carto = ProcessCartography {
        main_process: ProcessGraph::new(format!("{}_main", m.network_id), m.name.clone()),
        sub_processes: vec![],
        message_flows: vec![],
        justifications: BTreeMap::new(),
    };
    let mut home: BTreeMap<String, String> = BTreeMap::new();
    for ((kind, sn), (obs, mut fs)) in scopes {
        fs.sort_by(|a, b| (&a.1, &a.0).cmp(&(&b.1, &b.0)));
        let pid = format!("{sn}_{}", kind.as_str());
        let name = obs
            .iter()
            .filter_map(|o| m.objective(o).map(|o| o.description.clone()))
            .collect::<Vec<_>>()
            .join(" / ");
        for f in &fs {
            home.insert(f.0.clone(), pid.clone());
        }
        let graph = build_process(&pid, &name, &fs, inst, m, &mut carto.justifications)?;
        carto.sub_processes.push(SubProcess { kind, sub_network: sn, objectives: obs, graph });
    }

    let main = &mut carto.main_process;
    let start = main.add_node(format!("{}_start", main.id), "start", NodeKind::Start, None);
    let mut prev = start;
    for sp in &carto.sub_processes {
        let call = main.add_node(
            format!("call_{}", sp.graph.id),
            sp.graph.name.clone(),
            NodeKind::Call { process: sp.graph.id.clone() },
            None,
        );
        let e = main.add_edge(&prev, &call).id.clone();
        carto.justifications.insert(e, if prev.ends_with("_start") { Justification::Boundary } else { Justification::ObjectiveOrder });
        prev = call;
    }
    let end = main.add_node(format!("{}_end", main.id), "end", NodeKind::End, None);
    let e = main.add_edge(&prev, &end).id.clone();
    carto.justifications.insert(e, Justification::Boundary);

    for o in &inst.relationships {
        if let (Some(a), Some(b)) = (home.get(&o.producer), home.get(&o.consumer)) {
            if a != b {
                carto.message_flows.push(MessageFlow {
                    order: o.id.clone(),
                    message: o.message.clone(),
                    from_process: a.clone(),
                    from_node: o.producer.clone(),
                    to_process: b.clone(),
                    to_node: o.consumer.clone(),
                });
            }
        }
    }
    carto.message_flows.sort_by(|a, b| a.order.cmp(&b.order));

    for g in carto.graphs() {
        if let Some(issue) = g.structural_issues().first() {
            return Err(DeductionError::Malformed { process: g.id.clone(), issue: issue.to_string() });
        }
    }
    Ok(carto)
}

fn build_process(
    pid: &str,
    name: &str,
    fs: &[(String, String, String)],
    inst: &MediationInstances,
    m: &CollaborationModel,
    just: &mut BTreeMap<String, Justification>,
) -> Result<ProcessGraph, DeductionError> {
    let task_name = |f: &str| m.function(f).map_or_else(|| f.replace('_', " "), |(_, sf)| sf.name.clone());
    // units keyed by (objective, concept), in order of their first function
    let mut units: Vec<Unit> = Vec::new();
    let mut unit_key: Vec<&str> = Vec::new();
    let mut unit_of: BTreeMap<&str, usize> = BTreeMap::new();
    for (f, p, key) in fs {
        let u = match unit_key.iter().position(|k| *k == key) {
            Some(u) => u,
            None => {
                unit_key.push(key);
                units.push(Unit { functions: vec![] });
                units.len() - 1
            }
        };
        units[u].functions.push((f.clone(), p.clone()));
        unit_of.insert(f, u);
    }
    let n = units.len();
    let mut deps: BTreeMap<(usize, usize), Vec<Witness>> = BTreeMap::new();
    for o in &inst.relationships {
        if let (Some(&a), Some(&b)) = (unit_of.get(o.producer.as_str()), unit_of.get(o.consumer.as_str())) {
            if a != b {
                deps.entry((a, b)).or_default().push(Witness {
                    producer: o.producer.clone(),
                    consumer: o.consumer.clone(),
                    message: o.message.clone(),
                });
            }
        }
    }
    let order = topo(n, &deps).map_err(|cycle| {
        DeductionError::Cycle(cycle.into_iter().map(|u| units[u].functions[0].0.clone()).collect())
    })?;

    // reach[u] = units reachable from u
    let mut reach = vec![BTreeSet::new(); n];
    for &u in order.iter().rev() {
        let succ: Vec<usize> = deps.keys().filter(|(a, _)| *a == u).map(|(_, b)| *b).collect();
        for v in succ {
            reach[u].insert(v);
            let rv = reach[v].clone();
            reach[u].extend(rv);
        }
    }
    let reduced: Vec<(usize, usize)> = deps
        .keys()
        .copied()
        .filter(|&(a, b)| !deps.keys().any(|&(x, y)| x == a && y != b && reach[y].contains(&b)))
        .collect();
    let preds = |u: usize| reduced.iter().filter(|(_, b)| *b == u).count();
    let succs = |u: usize| reduced.iter().filter(|(a, _)| *a == u).count();

    let mut g = ProcessGraph::new(pid, name);
    let mut gw = 0;
    let mut next_gw = |g: &mut ProcessGraph, kind: NodeKind| {
        gw += 1;
        g.add_node(format!("{pid}_g{gw}"), "", kind, None)
    };
    let mut link = |g: &mut ProcessGraph, from: &str, to: &str, why: Justification| {
        let e = g.add_edge(from, to).id.clone();
        just.insert(e, why);
    };
    let start = g.add_node(format!("{pid}_start"), "start", NodeKind::Start, None);

    let mut in_node = Vec::with_capacity(n);
    let mut out_node = Vec::with_capacity(n);
    for (u, unit) in units.iter().enumerate() {
        let (entry, exit) = if unit.functions.len() == 1 {
            let (f, p) = &unit.functions[0];
            let t = g.add_node(f.clone(), task_name(f), NodeKind::Task { function: f.clone() }, Some(p.clone()));
            (t.clone(), t)
        } else {
            let split = next_gw(&mut g, NodeKind::Exclusive);
            let join = next_gw(&mut g, NodeKind::Exclusive);
            for (i, (f, p)) in unit.functions.iter().enumerate() {
                let t = g.add_node(f.clone(), task_name(f), NodeKind::Task { function: f.clone() }, Some(p.clone()));
                link(&mut g, &split, &t, Justification::Gateway);
                g.edges.last_mut().expect("just linked").default = i == 0;
                link(&mut g, &t, &join, Justification::Gateway);
            }
            (split, join)
        };
        let inn = if preds(u) > 1 {
            let j = next_gw(&mut g, NodeKind::Parallel);
            link(&mut g, &j, &entry, Justification::Gateway);
            j
        } else {
            entry
        };
        let out = if succs(u) > 1 {
            let s = next_gw(&mut g, NodeKind::Parallel);
            link(&mut g, &exit, &s, Justification::Gateway);
            s
        } else {
            exit
        };
        in_node.push(inn);
        out_node.push(out);
    }
    for &(a, b) in &reduced {
        link(&mut g, &out_node[a], &in_node[b], Justification::Dependency { witnesses: deps[&(a, b)].clone() });
    }

    let sources: Vec<usize> = (0..n).filter(|&u| preds(u) == 0).collect();
    let sinks: Vec<usize> = (0..n).filter(|&u| succs(u) == 0).collect();
    let end_id = format!("{pid}_end");
    if n == 0 {
        let end = g.add_node(end_id, "end", NodeKind::End, None);
        link(&mut g, &start, &end, Justification::Boundary);
        return Ok(g);
    }
    if sources.len() > 1 {
        let s = next_gw(&mut g, NodeKind::Parallel);
        link(&mut g, &start, &s, Justification::Boundary);
        for &u in &sources {
            link(&mut g, &s, &in_node[u], Justification::Gateway);
        }
    } else {
        link(&mut g, &start, &in_node[sources[0]], Justification::Boundary);
    }
    let close = if sinks.len() > 1 {
        let j = next_gw(&mut g, NodeKind::Parallel);
        for &u in &sinks {
            link(&mut g, &out_node[u], &j, Justification::Gateway);
        }
        j
    } else {
        out_node[sinks[0]].clone()
    };
    let end = g.add_node(end_id, "end", NodeKind::End, None);
    link(&mut g, &close, &end, Justification::Boundary);
    Ok(g)
}

/// Kahn order; on failure, the units of one cycle.
fn topo(n: usize, deps: &BTreeMap<(usize, usize), Vec<Witness>>) -> Result<Vec<usize>, Vec<usize>> {
    let mut indeg = vec![0; n];
    for &(_, b) in deps.keys() {
        indeg[b] += 1;
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&u| indeg[u] == 0).collect();
    let mut order = Vec::new();
    while let Some(u) = ready.pop_first() {
        order.push(u);
        for &(a, b) in deps.keys() {
            if a == u {
                indeg[b] -= 1;
                if indeg[b] == 0 {
                    ready.insert(b);
                }
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    // walk predecessors inside the stuck set until a unit repeats
    let stuck: BTreeSet<usize> = (0..n).filter(|&u| indeg[u] > 0).collect();
    let mut path = vec![*stuck.first().expect("cycle exists")];
    loop {
        let cur = *path.last().expect("non-empty");
        let pred = deps.keys().find(|(a, b)| *b == cur && stuck.contains(a)).map(|(a, _)| *a).expect("stuck unit has a stuck predecessor");
        if let Some(pos) = path.iter().position(|&u| u == pred) {
            let mut cycle: Vec<usize> = path[pos..].to_vec();
            cycle.reverse();
            cycle.push(cycle[0]);
            return Err(cycle);
        }
        path.push(pred);
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::{function, select_all};
    use super::super::{deduce_instances, RuleSet};
    use super::*;
    use crate::model::{parse_model, Partner};

    fn model_with(functions: Vec<crate::model::SharedFunction>) -> CollaborationModel {
        let mut m = parse_model(crate::model::tests::MINIMAL).unwrap();
        m.partners[0].functions = functions;
        m.partners[1].functions.clear();
        let mut msgs: BTreeSet<String> = BTreeSet::new();
        for f in &m.partners[0].functions {
            msgs.extend(f.inputs.iter().chain(&f.outputs).cloned());
        }
        m.messages = msgs
            .into_iter()
            .map(|id| crate::model::MessageDef {
                id: id.clone(),
                name: id,
                concept: crate::model::ConceptRef::term("Document"),
                fields: vec![],
            })
            .collect();
        m
    }

    fn carto(m: &CollaborationModel) -> Result<ProcessCartography, DeductionError> {
        let sel = select_all(m);
        let (_, inst) = deduce_instances(m, &sel, &RuleSet::mediation()).unwrap();
        extract_cartography(&inst, &sel, m)
    }

    fn seqs(v: &[&[&str]]) -> BTreeSet<Vec<String>> {
        v.iter().map(|s| s.iter().map(|x| x.to_string()).collect()).collect()
    }

    #[test]
    fn chain_is_straight_line() {
        let m = model_with(vec![
            function("a", "Pick", &[], &["x"]),
            function("b", "Pack", &["x"], &["y"]),
            function("c", "Ship", &["y"], &[]),
        ]);
        let c = carto(&m).unwrap();
        let g = &c.sub_processes[0].graph;
        assert!(g.nodes.iter().all(|n| !n.kind.is_gateway()));
        assert_eq!(g.task_sequences().unwrap(), seqs(&[&["a", "b", "c"]]));
    }

    #[test]
    fn independent_functions_get_parallel_bracket() {
        let m = model_with(vec![function("a", "Pick", &[], &["x"]), function("b", "Pack", &[], &["y"])]);
        let c = carto(&m).unwrap();
        let g = &c.sub_processes[0].graph;
        assert_eq!(g.nodes.iter().filter(|n| n.kind == NodeKind::Parallel).count(), 2);
        assert!(g.is_valid());
        assert_eq!(g.task_sequences().unwrap(), seqs(&[&["a", "b"], &["b", "a"]]));
    }

    #[test]
    fn alternatives_get_exclusive_bracket() {
        let m = model_with(vec![
            function("prep", "Pack", &[], &["req"]),
            function("truck", "Transport", &["req"], &["note"]),
            function("rail", "Transport", &["req"], &["note"]),
            function("recv", "ReceiveGoods", &["note"], &[]),
        ]);
        let c = carto(&m).unwrap();
        let g = &c.sub_processes[0].graph;
        assert_eq!(g.nodes.iter().filter(|n| n.kind == NodeKind::Exclusive).count(), 2);
        assert_eq!(
            g.task_sequences().unwrap(),
            seqs(&[&["prep", "rail", "recv"], &["prep", "truck", "recv"]])
        );
        let defaults = g.edges.iter().filter(|e| e.default).count();
        assert_eq!(defaults, 1);
    }

    #[test]
    fn n_shaped_dependencies_keep_exact_language() {
        // a -> c, b -> c, b -> d
        let m = model_with(vec![
            function("a", "Pick", &[], &["x"]),
            function("b", "Pack", &[], &["y"]),
            function("c", "Ship", &["x", "y"], &[]),
            function("d", "Store", &["y"], &[]),
        ]);
        let g = carto(&m).unwrap().sub_processes[0].graph.clone();
        assert!(g.is_valid(), "{:?}", g.issues());
        let expected = seqs(&[
            &["a", "b", "c", "d"],
            &["a", "b", "d", "c"],
            &["b", "a", "c", "d"],
            &["b", "a", "d", "c"],
            &["b", "d", "a", "c"],
        ]);
        assert_eq!(g.task_sequences().unwrap(), expected);
    }

    #[test]
    fn transitive_edges_are_dropped() {
        let m = model_with(vec![
            function("a", "Pick", &[], &["x", "z"]),
            function("b", "Pack", &["x"], &["y"]),
            function("c", "Ship", &["y", "z"], &[]),
        ]);
        let c = carto(&m).unwrap();
        let g = &c.sub_processes[0].graph;
        assert!(g.nodes.iter().all(|n| !n.kind.is_gateway()));
        assert_eq!(g.edges.len(), 4);
    }

    #[test]
    fn cycles_are_reported() {
        let m = model_with(vec![function("a", "Pick", &["y"], &["x"]), function("b", "Pack", &["x"], &["y"])]);
        match carto(&m) {
            Err(DeductionError::Cycle(c)) => {
                assert_eq!(c.first(), c.last());
                assert!(c.contains(&"a".to_string()) && c.contains(&"b".to_string()));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn every_edge_is_justified() {
        let m = model_with(vec![
            function("a", "Pick", &[], &["x"]),
            function("b", "Pack", &[], &["y"]),
            function("c", "Ship", &["x", "y"], &[]),
        ]);
        let c = carto(&m).unwrap();
        for g in c.graphs() {
            for e in &g.edges {
                match &c.justifications[&e.id] {
                    Justification::Dependency { witnesses } => {
                        for w in witnesses {
                            let (_, p) = m.function(&w.producer).unwrap();
                            let (_, q) = m.function(&w.consumer).unwrap();
                            assert!(p.outputs.contains(&w.message) && q.inputs.contains(&w.message));
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    #[test]
    fn main_process_calls_kinds_in_order_with_message_flows() {
        let mut m = model_with(vec![function("a", "Pick", &[], &["x"])]);
        m.partners.push(Partner { id: "p3".into(), name: "p3".into(), functions: vec![function("b", "Pay", &["x"], &[])] });
        m.sub_networks.push(crate::model::SubNetwork { id: "sn2".into(), name: "f".into(), partners: vec!["p1".into(), "p3".into()] });
        m.objectives.push(crate::model::Objective {
            id: "o0".into(),
            kind: ObjectiveKind::Strategy,
            description: "plan".into(),
            annotation: vec![crate::model::ConceptRef::term("PlanProduction")],
            sub_network: "sn2".into(),
        });
        let sel = select_all(&m);
        let (_, inst) = deduce_instances(&m, &sel, &RuleSet::mediation()).unwrap();
        let c = extract_cartography(&inst, &sel, &m).unwrap();
        let calls: Vec<String> = c
            .main_process
            .task_sequences()
            .unwrap()
            .into_iter()
            .next()
            .unwrap();
        assert_eq!(calls, vec!["call:sn2_strategy".to_string(), "call:sn1_operation".to_string()]);
        assert_eq!(c.message_flows.len(), 1);
        assert_eq!(c.message_flows[0].from_process, "sn1_operation");
        assert_eq!(c.message_flows[0].to_process, "sn2_strategy");
    }
}
