//! Compilation of the validated cartography into executable workflows, and
//! their execution over the service bus.
//!
//! Each sub-process becomes one workflow whose tasks carry their bound
//! services and input maps. Cross-process Orders become subscriptions: a
//! workflow starts once every workflow it depends on has published its
//! completion event.

mod bpel;
mod bus;
mod choreography;
mod condition;
mod engine;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::deduction::ProcessCartography;
use crate::graph::{NodeKind, ProcessGraph};
use crate::matching::{Endpoint, MatchResult, MatchStatus, Registry, ServiceDescriptor};
use crate::model::{CollaborationModel, FieldSpec};
use crate::ontology::Ontology;
use crate::reconcile::{build_data_map, DataMap, ReconcileConfig, RuleBase, UpstreamField};

pub use bpel::export_bpel;
pub use bus::{payload_hash, Invocation, Outcome, ServiceBus};
pub use choreography::{Coordinator, CoordinatorEvent, ProjectRun, RunStatus};
pub use condition::Condition;
pub use engine::{visited, Engine, InstanceEvent, InstanceStatus, Reuse, WorkflowInstance};

pub const WORKFLOW_SCHEMA_VERSION: u32 = 1;

/// Distance given to outputs of other workflows.
const CROSS_PROCESS_DISTANCE: usize = 100;
/// Distance given to process input fields.
const START_DISTANCE: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompileError {
    #[error("task `{0}` has no match result")]
    Unresolved(String),
    #[error("task `{0}` awaits validation of its service match")]
    AwaitingValidation(String),
    #[error("task `{0}` has no covering service")]
    Uncovered(String),
    #[error("task `{0}` was deferred by the designer")]
    Deferred(String),
    #[error("task `{node}` is bound to `{service}`, which is not in the registry")]
    UnknownService { node: String, service: String },
    #[error("task `{node}` is bound to `{service}`, which still needs a concrete endpoint")]
    ExternalEndpoint { node: String, service: String },
    #[error("task `{node}`: inputs {fields:?} of `{service}` cannot be produced from earlier outputs")]
    Infeasible { node: String, service: String, fields: Vec<String> },
    #[error("process `{process}` is malformed: {issue}")]
    Malformed { process: String, issue: String },
    #[error("workflows wait on each other: {0:?}")]
    ChoreographyCycle(Vec<String>),
    #[error("condition on `{edge}`: {message}")]
    Condition { edge: String, message: String },
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("instance `{id}` is {status:?}")]
    BadState { id: String, status: InstanceStatus },
    #[error("node `{node}` is not waiting for a person")]
    NotPaused { node: String },
    #[error("payload for `{node}` lacks fields {missing:?}")]
    Schema { node: String, missing: Vec<String> },
    #[error("event log: {0}")]
    Log(String),
    #[error("workflow `{0}` is not part of the project")]
    UnknownWorkflow(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundService {
    pub service: String,
    pub map: DataMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTask {
    pub node: String,
    pub services: Vec<BoundService>,
    /// Digest of the binding and maps; equal fingerprints let a regenerated
    /// workflow reuse a completed task's output.
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutableWorkflow {
    pub id: String,
    pub name: String,
    pub graph: ProcessGraph,
    pub tasks: BTreeMap<String, BoundTask>,
    /// Events that must be published before this workflow starts.
    pub subscribes: Vec<String>,
    pub publishes: String,
}

impl ExecutableWorkflow {
    pub fn completion_event(id: &str) -> String {
        format!("{id}.completed")
    }

    pub fn services(&self) -> BTreeSet<&str> {
        self.tasks.values().flat_map(|t| t.services.iter().map(|s| s.service.as_str())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompiledProject {
    pub schema_version: u32,
    pub network_id: String,
    /// Fields expected in the start payload.
    pub inputs: Vec<FieldSpec>,
    /// Main-process order of the workflows.
    pub order: Vec<String>,
    pub workflows: Vec<ExecutableWorkflow>,
    /// Descriptors of every bound service.
    pub services: Vec<ServiceDescriptor>,
}

impl CompiledProject {
    pub fn workflow(&self, id: &str) -> Option<&ExecutableWorkflow> {
        self.workflows.iter().find(|w| w.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("project serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self, String> {
        serde_json::from_str(s).map_err(|e| e.to_string())
    }

    /// Subscription table: workflow → events it waits for.
    pub fn subscriptions(&self) -> BTreeMap<&str, &[String]> {
        self.workflows.iter().map(|w| (w.id.as_str(), w.subscribes.as_slice())).collect()
    }
}

pub struct CompileInput<'a> {
    pub cartography: &'a ProcessCartography,
    pub matches: &'a [MatchResult],
    pub registry: &'a Registry,
    pub model: &'a CollaborationModel,
    pub ontology: &'a Ontology,
    pub rules: &'a RuleBase,
    pub reconcile: &'a ReconcileConfig,
    /// Optional conditions keyed by edge id, for exclusive gateways.
    pub conditions: &'a BTreeMap<String, String>,
}

/// Messages consumed by some task but produced by none: their fields make up
/// the start payload.
fn start_fields(c: &ProcessCartography, m: &CollaborationModel) -> Vec<FieldSpec> {
    let functions: Vec<&str> = c.sub_processes.iter().flat_map(|s| s.graph.tasks().map(|(_, f)| f)).collect();
    let mut produced = BTreeSet::new();
    let mut consumed = Vec::new();
    for f in &functions {
        if let Some((_, sf)) = m.function(f) {
            produced.extend(sf.outputs.iter().cloned());
            consumed.extend(sf.inputs.iter().cloned());
        }
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for msg in consumed {
        if produced.contains(&msg) || !seen.insert(msg.clone()) {
            continue;
        }
        if let Some(def) = m.message(&msg) {
            for f in &def.fields {
                if !out.iter().any(|o: &FieldSpec| o.name == f.name) {
                    out.push(f.clone());
                }
            }
        }
    }
    out
}

/// Hop counts from each ancestor of `node`.
fn ancestors(g: &ProcessGraph, node: &str) -> BTreeMap<String, usize> {
    let mut dist = BTreeMap::new();
    let mut queue = VecDeque::from([(node.to_string(), 0usize)]);
    while let Some((n, d)) = queue.pop_front() {
        for e in g.incoming(&n) {
            if !dist.contains_key(&e.from) {
                dist.insert(e.from.clone(), d + 1);
                queue.push_back((e.from.clone(), d + 1));
            }
        }
    }
    dist
}

fn fingerprint(node: &str, services: &[BoundService]) -> String {
    let bytes = serde_json::to_vec(&(node, services)).expect("binding serializes");
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn chosen_services<'a>(node: &str, matches: &'a [MatchResult]) -> Result<&'a [String], CompileError> {
    let r = matches.iter().find(|r| r.activity_id == node).ok_or_else(|| CompileError::Unresolved(node.to_string()))?;
    if r.deferred {
        return Err(CompileError::Deferred(node.to_string()));
    }
    match (&r.chosen, r.status) {
        (Some(b), MatchStatus::Auto) => Ok(&b.services),
        (_, MatchStatus::Uncovered) => Err(CompileError::Uncovered(node.to_string())),
        _ => Err(CompileError::AwaitingValidation(node.to_string())),
    }
}

/// Builds one workflow per sub-process. Fails on the first unbound task,
/// infeasible input map or choreography cycle, naming it.
pub fn compile(input: &CompileInput) -> Result<CompiledProject, CompileError> {
    let c = input.cartography;
    let svc = |node: &str, id: &str| -> Result<&ServiceDescriptor, CompileError> {
        let s = input
            .registry
            .get(id)
            .ok_or_else(|| CompileError::UnknownService { node: node.to_string(), service: id.to_string() })?;
        if matches!(s.endpoint, Endpoint::External) {
            return Err(CompileError::ExternalEndpoint { node: node.to_string(), service: id.to_string() });
        }
        Ok(s)
    };

    // bindings first, so outputs of every task are known
    let mut bound: BTreeMap<&str, Vec<&ServiceDescriptor>> = BTreeMap::new();
    for sp in &c.sub_processes {
        if let Some(issue) = sp.graph.issues().into_iter().next() {
            return Err(CompileError::Malformed { process: sp.graph.id.clone(), issue: issue.to_string() });
        }
        for (n, _) in sp.graph.tasks() {
            let ids = chosen_services(&n.id, input.matches)?;
            bound.insert(&n.id, ids.iter().map(|id| svc(&n.id, id)).collect::<Result<_, _>>()?);
        }
    }
    let outputs_of = |node: &str| -> Vec<&FieldSpec> { bound.get(node).into_iter().flatten().flat_map(|s| &s.outputs).collect() };

    // subscriptions from cross-process message flows
    let mut subs: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for mf in &c.message_flows {
        if mf.from_process != mf.to_process {
            subs.entry(&mf.to_process).or_default().insert(&mf.from_process);
        }
    }
    let order: Vec<String> = c
        .main_process
        .topological_order()
        .map_err(|i| CompileError::Malformed { process: c.main_process.id.clone(), issue: i.to_string() })?
        .into_iter()
        .filter_map(|n| match &c.main_process.node(&n).map(|n| &n.kind) {
            Some(NodeKind::Call { process }) => Some(process.clone()),
            _ => None,
        })
        .collect();
    check_choreography(&order, &subs)?;
    let closure = |p: &str| -> BTreeSet<&str> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![p];
        while let Some(x) = stack.pop() {
            for &y in subs.get(x).into_iter().flatten() {
                if seen.insert(y) {
                    stack.push(y);
                }
            }
        }
        seen
    };

    let start = start_fields(c, input.model);
    let mut workflows = Vec::new();
    for sp in &c.sub_processes {
        let mut graph = sp.graph.clone();
        for e in &mut graph.edges {
            if let Some(cond) = input.conditions.get(&e.id) {
                Condition::parse(cond).map_err(|message| CompileError::Condition { edge: e.id.clone(), message })?;
                e.condition = Some(cond.clone());
            }
        }
        let upstream_procs = closure(&sp.graph.id);
        let mut tasks = BTreeMap::new();
        for (n, _) in sp.graph.tasks() {
            let mut upstream = Vec::new();
            for (a, d) in ancestors(&sp.graph, &n.id) {
                for f in outputs_of(&a) {
                    upstream.push(UpstreamField::new(format!("{a}.{}", f.name), &f.concept, d));
                }
            }
            for other in c.sub_processes.iter().filter(|o| upstream_procs.contains(o.graph.id.as_str())) {
                for (t, _) in other.graph.tasks() {
                    for f in outputs_of(&t.id) {
                        upstream.push(UpstreamField::new(format!("{}.{}", t.id, f.name), &f.concept, CROSS_PROCESS_DISTANCE));
                    }
                }
            }
            for f in &start {
                upstream.push(UpstreamField::new(format!("start.{}", f.name), &f.concept, START_DISTANCE));
            }
            let mut services = Vec::new();
            for s in &bound[n.id.as_str()] {
                let map = build_data_map(&s.id, &s.inputs, &upstream, input.ontology, input.rules, input.reconcile);
                if !map.is_feasible() {
                    return Err(CompileError::Infeasible { node: n.id.clone(), service: s.id.clone(), fields: map.unmapped });
                }
                services.push(BoundService { service: s.id.clone(), map });
            }
            let fingerprint = fingerprint(&n.id, &services);
            tasks.insert(n.id.clone(), BoundTask { node: n.id.clone(), services, fingerprint });
        }
        let mut subscribes: Vec<String> =
            subs.get(sp.graph.id.as_str()).into_iter().flatten().map(|p| ExecutableWorkflow::completion_event(p)).collect();
        subscribes.sort();
        workflows.push(ExecutableWorkflow {
            id: sp.graph.id.clone(),
            name: sp.graph.name.clone(),
            publishes: ExecutableWorkflow::completion_event(&sp.graph.id),
            graph,
            tasks,
            subscribes,
        });
    }
    let used: BTreeSet<&str> = bound.values().flatten().map(|s| s.id.as_str()).collect();
    let services = input.registry.services.iter().filter(|s| used.contains(s.id.as_str())).cloned().collect();
    Ok(CompiledProject {
        schema_version: WORKFLOW_SCHEMA_VERSION,
        network_id: input.model.network_id.clone(),
        inputs: start,
        order,
        workflows,
        services,
    })
}

/// Every workflow must become startable when processed in main order.
fn check_choreography(order: &[String], subs: &BTreeMap<&str, BTreeSet<&str>>) -> Result<(), CompileError> {
    let mut done: BTreeSet<&str> = BTreeSet::new();
    let mut pending: Vec<&str> = order.iter().map(String::as_str).collect();
    while !pending.is_empty() {
        let ready = pending.iter().position(|p| subs.get(p).is_none_or(|s| s.iter().all(|d| done.contains(d))));
        match ready {
            Some(i) => {
                done.insert(pending.remove(i));
            }
            None => return Err(CompileError::ChoreographyCycle(pending.iter().map(|s| s.to_string()).collect())),
        }
    }
    Ok(())
}
