//! Token-game execution of compiled workflows.
//!
//! Instance state is derived from an append-only event history, so an
//! instance can be persisted as its log and rebuilt by replay. Tasks enabled
//! at the same time form a batch and run concurrently; their results are
//! recorded in node order.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::bus::{Outcome, ServiceBus};
use super::condition::Condition;
use super::{ExecutableWorkflow, RunError};
use crate::events::{Event, EventSink, EventSource, NullSink};
use crate::graph::NodeKind;
use crate::matching::Endpoint;
use crate::reconcile::{execute_map, store_outputs, RuleBase, VariableStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceStatus {
    Running,
    PausedOnHumanTask,
    Completed,
    Faulted,
    Interrupted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reuse {
    pub fingerprint: String,
    pub output: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum InstanceEvent {
    Started {
        instance: String,
        workflow: String,
        store: VariableStore,
        /// Outputs of an earlier instance that may stand in for tasks with
        /// the same fingerprint.
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        reuse: BTreeMap<String, Reuse>,
    },
    /// Start, end or gateway.
    Fired { node: String, consumed: Vec<String>, produced: Vec<String> },
    TaskStarted { node: String, consumed: Vec<String> },
    TaskCompleted {
        node: String,
        output: Map<String, Value>,
        produced: Vec<String>,
        fingerprint: String,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        reused: bool,
    },
    HumanTaskPending { node: String, service: String, input: Map<String, Value> },
    TaskFaulted { node: String, service: Option<String>, cause: String },
    Paused,
    Interrupted,
    Resumed,
    Completed,
    /// No node can fire although the instance has not finished.
    Stuck { marking: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowInstance {
    pub id: String,
    pub workflow: String,
    pub status: InstanceStatus,
    /// Tokens per edge id.
    pub marking: BTreeMap<String, u32>,
    pub store: VariableStore,
    /// Human tasks waiting: node → (service, input shown to the person).
    pub pending: BTreeMap<String, (String, Map<String, Value>)>,
    /// Completed task → fingerprint of its binding.
    pub completed: BTreeMap<String, String>,
    pub ends: u32,
    pub fault: Option<(String, String)>,
    pub history: Vec<InstanceEvent>,
    start_pending: bool,
    reuse: BTreeMap<String, Reuse>,
}

impl WorkflowInstance {
    fn empty() -> Self {
        Self {
            id: String::new(),
            workflow: String::new(),
            status: InstanceStatus::Running,
            marking: BTreeMap::new(),
            store: VariableStore::new(),
            pending: BTreeMap::new(),
            completed: BTreeMap::new(),
            ends: 0,
            fault: None,
            history: Vec::new(),
            start_pending: false,
            reuse: BTreeMap::new(),
        }
    }

    /// Rebuilds an instance from its history.
    pub fn replay(events: impl IntoIterator<Item = InstanceEvent>) -> Result<Self, RunError> {
        let mut inst = Self::empty();
        for e in events {
            inst.apply(e)?;
        }
        if inst.id.is_empty() {
            return Err(RunError::Log("history does not begin with a start event".into()));
        }
        Ok(inst)
    }

    pub fn from_jsonl(text: &str) -> Result<Self, RunError> {
        let events = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| RunError::Log(e.to_string())))
            .collect::<Result<Vec<InstanceEvent>, _>>()?;
        Self::replay(events)
    }

    pub fn to_jsonl(&self) -> String {
        self.history.iter().map(|e| serde_json::to_string(e).expect("event serializes") + "\n").collect()
    }

    fn take(&mut self, edges: &[String]) -> Result<(), RunError> {
        for e in edges {
            match self.marking.get_mut(e) {
                Some(n) if *n > 1 => *n -= 1,
                Some(_) => {
                    self.marking.remove(e);
                }
                None => return Err(RunError::Log(format!("no token on `{e}`"))),
            }
        }
        Ok(())
    }

    fn put(&mut self, edges: &[String]) {
        for e in edges {
            *self.marking.entry(e.clone()).or_default() += 1;
        }
    }

    /// Applies one event to the state and appends it to the history.
    pub fn apply(&mut self, e: InstanceEvent) -> Result<(), RunError> {
        if !matches!(e, InstanceEvent::Started { .. }) && self.id.is_empty() {
            return Err(RunError::Log("event before start".into()));
        }
        match &e {
            InstanceEvent::Started { instance, workflow, store, reuse } => {
                if !self.id.is_empty() {
                    return Err(RunError::Log("second start event".into()));
                }
                self.id = instance.clone();
                self.workflow = workflow.clone();
                self.store = store.clone();
                self.reuse = reuse.clone();
                self.start_pending = true;
                self.status = InstanceStatus::Running;
            }
            InstanceEvent::Fired { consumed, produced, .. } => {
                self.take(consumed)?;
                self.put(produced);
                if consumed.is_empty() {
                    self.start_pending = false;
                }
                if produced.is_empty() {
                    self.ends += 1;
                }
            }
            InstanceEvent::TaskStarted { consumed, .. } => self.take(consumed)?,
            InstanceEvent::TaskCompleted { node, output, produced, fingerprint, .. } => {
                self.pending.remove(node);
                store_outputs(&mut self.store, node, output);
                self.completed.insert(node.clone(), fingerprint.clone());
                self.put(produced);
            }
            InstanceEvent::HumanTaskPending { node, service, input } => {
                self.pending.insert(node.clone(), (service.clone(), input.clone()));
            }
            InstanceEvent::TaskFaulted { node, cause, .. } => {
                self.fault = Some((node.clone(), cause.clone()));
                self.status = InstanceStatus::Faulted;
            }
            InstanceEvent::Stuck { .. } => {
                self.fault = Some((String::new(), "no node can fire".into()));
                self.status = InstanceStatus::Faulted;
            }
            InstanceEvent::Paused => self.status = InstanceStatus::PausedOnHumanTask,
            InstanceEvent::Interrupted => self.status = InstanceStatus::Interrupted,
            InstanceEvent::Resumed => self.status = InstanceStatus::Running,
            InstanceEvent::Completed => self.status = InstanceStatus::Completed,
        }
        self.history.push(e);
        Ok(())
    }

    /// Tasks in the order they were invoked or completed.
    pub fn completed_tasks(&self) -> Vec<&str> {
        self.history
            .iter()
            .filter_map(|e| match e {
                InstanceEvent::TaskCompleted { node, .. } => Some(node.as_str()),
                _ => None,
            })
            .collect()
    }
}

enum TaskResult {
    Done(Map<String, Value>, bool),
    Human(String, Map<String, Value>),
    Fault(Option<String>, String),
}

pub struct Engine {
    bus: Arc<ServiceBus>,
    rules: Arc<RuleBase>,
    sink: Arc<dyn EventSink>,
    clock: AtomicU64,
    parallel: bool,
    instances: Mutex<BTreeMap<String, Arc<Mutex<WorkflowInstance>>>>,
    flags: Mutex<BTreeMap<String, Arc<AtomicBool>>>,
}

impl Engine {
    pub fn new(bus: Arc<ServiceBus>, rules: Arc<RuleBase>) -> Self {
        Self {
            bus,
            rules,
            sink: Arc::new(NullSink),
            clock: AtomicU64::new(0),
            parallel: true,
            instances: Mutex::new(BTreeMap::new()),
            flags: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn with_sink(mut self, sink: Arc<dyn EventSink>) -> Self {
        self.sink = sink;
        self
    }

    /// Runs batches one task at a time instead of concurrently.
    pub fn sequential(mut self) -> Self {
        self.parallel = false;
        self
    }

    /// Monitoring timestamps continue from `t`.
    pub fn with_clock(self, t: u64) -> Self {
        self.clock.store(t, Ordering::SeqCst);
        self
    }

    pub fn bus(&self) -> &ServiceBus {
        &self.bus
    }

    pub fn rules(&self) -> &RuleBase {
        &self.rules
    }

    pub fn instance(&self, id: &str) -> Option<WorkflowInstance> {
        let h = self.instances.lock().expect("instances poisoned").get(id).cloned()?;
        let inst = h.lock().expect("instance poisoned").clone();
        Some(inst)
    }

    pub fn instance_ids(&self) -> Vec<String> {
        self.instances.lock().expect("instances poisoned").keys().cloned().collect()
    }

    /// Adopts an instance rebuilt from a log.
    pub fn insert(&self, inst: WorkflowInstance) {
        self.flags.lock().expect("flags poisoned").insert(inst.id.clone(), Arc::new(AtomicBool::new(false)));
        self.instances.lock().expect("instances poisoned").insert(inst.id.clone(), Arc::new(Mutex::new(inst)));
    }

    fn handle(&self, id: &str) -> Result<(Arc<Mutex<WorkflowInstance>>, Arc<AtomicBool>), RunError> {
        let h = self.instances.lock().expect("instances poisoned").get(id).cloned();
        let f = self.flags.lock().expect("flags poisoned").get(id).cloned();
        h.zip(f).ok_or_else(|| RunError::UnknownInstance(id.to_string()))
    }

    fn emit(&self, wf: &ExecutableWorkflow, inst: &WorkflowInstance, e: &InstanceEvent) {
        let lane = |node: &str| wf.graph.node(node).and_then(|n| n.lane.clone());
        let services = |node: &str| {
            wf.tasks.get(node).map(|t| t.services.iter().map(|s| s.service.clone()).collect::<Vec<_>>().join(",")).unwrap_or_default()
        };
        let (kind, subject) = match e {
            InstanceEvent::Started { .. } => ("instance.started", inst.id.clone()),
            InstanceEvent::TaskStarted { node, .. } => ("task.started", node.clone()),
            InstanceEvent::TaskCompleted { node, .. } => ("task.completed", node.clone()),
            InstanceEvent::HumanTaskPending { node, .. } => ("task.waiting", node.clone()),
            InstanceEvent::TaskFaulted { node, .. } => ("task.faulted", node.clone()),
            InstanceEvent::Paused => ("instance.paused", inst.id.clone()),
            InstanceEvent::Interrupted => ("instance.interrupted", inst.id.clone()),
            InstanceEvent::Resumed => ("instance.resumed", inst.id.clone()),
            InstanceEvent::Completed => ("instance.completed", inst.id.clone()),
            InstanceEvent::Stuck { .. } => ("instance.faulted", inst.id.clone()),
            InstanceEvent::Fired { .. } => return,
        };
        let t = self.clock.fetch_add(1, Ordering::SeqCst);
        let mut ev = Event::new(format!("{}#{}", inst.id, inst.history.len()), EventSource::Monitoring, kind, subject.clone(), t)
            .with("instance", inst.id.clone())
            .with("workflow", wf.id.clone());
        if kind.starts_with("task.") {
            ev = ev.with("services", services(&subject));
            if let Some(p) = lane(&subject) {
                ev = ev.with("partner", p);
            }
        }
        if let InstanceEvent::TaskFaulted { service, cause, .. } = e {
            ev = ev.with("cause", cause.clone());
            if let Some(s) = service {
                ev = ev.with("service", s.clone());
            }
        }
        self.sink.emit(ev);
    }

    fn record(&self, wf: &ExecutableWorkflow, inst: &mut WorkflowInstance, e: InstanceEvent) {
        inst.apply(e.clone()).expect("engine produces consistent events");
        self.emit(wf, inst, &e);
    }

    /// Creates an instance and runs it until it finishes, pauses or faults.
    pub fn start(&self, wf: &ExecutableWorkflow, id: &str, store: VariableStore) -> WorkflowInstance {
        self.start_with_reuse(wf, id, store, BTreeMap::new())
    }

    fn start_with_reuse(&self, wf: &ExecutableWorkflow, id: &str, store: VariableStore, reuse: BTreeMap<String, Reuse>) -> WorkflowInstance {
        let mut inst = WorkflowInstance::empty();
        self.record(wf, &mut inst, InstanceEvent::Started { instance: id.into(), workflow: wf.id.clone(), store, reuse });
        self.insert(inst);
        self.run(wf, id).expect("just inserted")
    }

    /// Continues a running instance.
    pub fn run(&self, wf: &ExecutableWorkflow, id: &str) -> Result<WorkflowInstance, RunError> {
        let (h, flag) = self.handle(id)?;
        let mut inst = h.lock().expect("instance poisoned");
        if inst.status == InstanceStatus::Running {
            self.drive(wf, &mut inst, &flag);
        }
        Ok(inst.clone())
    }

    /// Stops an instance before its next batch. A running instance stops
    /// at its next step; a paused one is marked directly.
    pub fn interrupt(&self, id: &str) -> Result<(), RunError> {
        let (h, flag) = self.handle(id)?;
        let result = match h.try_lock() {
            Ok(mut inst) => match inst.status {
                InstanceStatus::Running | InstanceStatus::PausedOnHumanTask => inst.apply(InstanceEvent::Interrupted),
                status => Err(RunError::BadState { id: id.to_string(), status }),
            },
            Err(_) => {
                flag.store(true, Ordering::SeqCst);
                Ok(())
            }
        };
        result
    }

    pub fn resume(&self, wf: &ExecutableWorkflow, id: &str) -> Result<WorkflowInstance, RunError> {
        let (h, flag) = self.handle(id)?;
        let mut inst = h.lock().expect("instance poisoned");
        if inst.status != InstanceStatus::Interrupted {
            return Err(RunError::BadState { id: id.to_string(), status: inst.status });
        }
        flag.store(false, Ordering::SeqCst);
        self.record(wf, &mut inst, InstanceEvent::Resumed);
        self.drive(wf, &mut inst, &flag);
        Ok(inst.clone())
    }

    /// Starts `new_wf` from the state of a stopped (interrupted or faulted)
    /// instance of an older workflow: tasks whose binding fingerprint is unchanged keep their
    /// outputs without being invoked again; the rest run anew.
    pub fn migrate(
        &self,
        old_id: &str,
        new_wf: &ExecutableWorkflow,
        new_id: &str,
        store: VariableStore,
    ) -> Result<WorkflowInstance, RunError> {
        let old = self.instance(old_id).ok_or_else(|| RunError::UnknownInstance(old_id.to_string()))?;
        if !matches!(old.status, InstanceStatus::Interrupted | InstanceStatus::Faulted) {
            return Err(RunError::BadState { id: old_id.to_string(), status: old.status });
        }
        let mut reuse = BTreeMap::new();
        for e in &old.history {
            if let InstanceEvent::TaskCompleted { node, output, fingerprint, .. } = e {
                if new_wf.tasks.get(node).is_some_and(|t| &t.fingerprint == fingerprint) {
                    reuse.insert(node.clone(), Reuse { fingerprint: fingerprint.clone(), output: output.clone() });
                }
            }
        }
        Ok(self.start_with_reuse(new_wf, new_id, store, reuse))
    }

    /// Supplies the result of a human task and continues.
    pub fn complete_human_task(
        &self,
        wf: &ExecutableWorkflow,
        id: &str,
        node: &str,
        payload: Map<String, Value>,
    ) -> Result<WorkflowInstance, RunError> {
        let (h, flag) = self.handle(id)?;
        let mut inst = h.lock().expect("instance poisoned");
        if inst.status != InstanceStatus::PausedOnHumanTask {
            return Err(RunError::BadState { id: id.to_string(), status: inst.status });
        }
        let Some((service, _)) = inst.pending.get(node).cloned() else {
            return Err(RunError::NotPaused { node: node.to_string() });
        };
        let missing: Vec<String> = self
            .bus
            .service(&service)
            .map(|s| s.outputs.iter().filter(|f| !payload.contains_key(&f.name)).map(|f| f.name.clone()).collect())
            .unwrap_or_default();
        if !missing.is_empty() {
            return Err(RunError::Schema { node: node.to_string(), missing });
        }
        let produced = wf.graph.outgoing(node).map(|e| e.id.clone()).collect();
        let fingerprint = wf.tasks.get(node).map(|t| t.fingerprint.clone()).unwrap_or_default();
        self.record(wf, &mut inst, InstanceEvent::Resumed);
        self.record(wf, &mut inst, InstanceEvent::TaskCompleted { node: node.into(), output: payload, produced, fingerprint, reused: false });
        self.drive(wf, &mut inst, &flag);
        Ok(inst.clone())
    }

    fn has_token(inst: &WorkflowInstance, edge: &str) -> bool {
        inst.marking.get(edge).is_some_and(|n| *n > 0)
    }

    /// Next start, end or gateway that can fire, in node order.
    fn next_instant(wf: &ExecutableWorkflow, inst: &WorkflowInstance) -> Option<InstanceEvent> {
        let g = &wf.graph;
        for n in &g.nodes {
            let incoming: Vec<&str> = g.incoming(&n.id).map(|e| e.id.as_str()).collect();
            let outgoing: Vec<&crate::graph::Edge> = g.outgoing(&n.id).collect();
            let marked: Vec<&str> = incoming.iter().copied().filter(|e| Self::has_token(inst, e)).collect();
            let all_out = || outgoing.iter().map(|e| e.id.clone()).collect::<Vec<_>>();
            let fired = |consumed: Vec<&str>, produced: Vec<String>| InstanceEvent::Fired {
                node: n.id.clone(),
                consumed: consumed.into_iter().map(String::from).collect(),
                produced,
            };
            match &n.kind {
                NodeKind::Start if inst.start_pending => return Some(fired(vec![], all_out())),
                NodeKind::End if !marked.is_empty() => return Some(fired(vec![marked[0]], vec![])),
                NodeKind::Parallel if !incoming.is_empty() && marked.len() == incoming.len() => {
                    return Some(fired(incoming, all_out()));
                }
                NodeKind::Exclusive | NodeKind::Call { .. } if !marked.is_empty() => {
                    let chosen = if outgoing.len() <= 1 {
                        all_out()
                    } else {
                        let by_condition = outgoing.iter().find(|e| {
                            e.condition.as_deref().is_some_and(|c| Condition::parse(c).is_ok_and(|c| c.eval(&inst.store)))
                        });
                        let e = by_condition.or_else(|| outgoing.iter().find(|e| e.default)).unwrap_or(&outgoing[0]);
                        vec![e.id.clone()]
                    };
                    return Some(fired(vec![marked[0]], chosen));
                }
                _ => {}
            }
        }
        None
    }

    fn execute_task(&self, wf: &ExecutableWorkflow, inst: &WorkflowInstance, node: &str, store: &VariableStore) -> TaskResult {
        let Some(task) = wf.tasks.get(node) else {
            return TaskResult::Fault(None, format!("task `{node}` is not bound"));
        };
        if let Some(r) = inst.reuse.get(node).filter(|r| r.fingerprint == task.fingerprint) {
            return TaskResult::Done(r.output.clone(), true);
        }
        let mut out = Map::new();
        for b in &task.services {
            let input = match execute_map(&b.map, store, &self.rules) {
                Ok(i) => i,
                Err(e) => return TaskResult::Fault(Some(b.service.clone()), format!("input mapping: {e}")),
            };
            if self.bus.service(&b.service).is_some_and(|s| matches!(s.endpoint, Endpoint::Human)) {
                return TaskResult::Human(b.service.clone(), input);
            }
            match self.bus.invoke(&inst.id, node, &b.service, &input) {
                Ok(Outcome::Output(o)) => out.extend(o),
                Ok(Outcome::Human(i)) => return TaskResult::Human(b.service.clone(), i),
                Err(e) => return TaskResult::Fault(Some(b.service.clone()), e),
            }
        }
        TaskResult::Done(out, false)
    }

    fn drive(&self, wf: &ExecutableWorkflow, inst: &mut WorkflowInstance, flag: &AtomicBool) {
        loop {
            if flag.swap(false, Ordering::SeqCst) {
                self.record(wf, inst, InstanceEvent::Interrupted);
                return;
            }
            while let Some(e) = Self::next_instant(wf, inst) {
                self.record(wf, inst, e);
            }
            let enabled: Vec<(String, String)> = wf
                .graph
                .nodes
                .iter()
                .filter(|n| matches!(n.kind, NodeKind::Task { .. }))
                .filter_map(|n| wf.graph.incoming(&n.id).find(|e| Self::has_token(inst, &e.id)).map(|e| (n.id.clone(), e.id.clone())))
                .collect();
            if enabled.is_empty() {
                let event = if !inst.pending.is_empty() {
                    InstanceEvent::Paused
                } else if inst.ends > 0 && inst.marking.is_empty() {
                    InstanceEvent::Completed
                } else {
                    InstanceEvent::Stuck { marking: inst.marking.keys().cloned().collect() }
                };
                self.record(wf, inst, event);
                return;
            }
            for (node, edge) in &enabled {
                self.record(wf, inst, InstanceEvent::TaskStarted { node: node.clone(), consumed: vec![edge.clone()] });
            }
            let snapshot = inst.store.clone();
            let results: Vec<TaskResult> = if self.parallel && enabled.len() > 1 {
                let view: &WorkflowInstance = inst;
                std::thread::scope(|s| {
                    let handles: Vec<_> =
                        enabled.iter().map(|(node, _)| s.spawn(|| self.execute_task(wf, view, node, &snapshot))).collect();
                    handles.into_iter().map(|h| h.join().expect("task thread panicked")).collect()
                })
            } else {
                enabled.iter().map(|(node, _)| self.execute_task(wf, inst, node, &snapshot)).collect()
            };
            let mut fault = None;
            for ((node, _), r) in enabled.iter().zip(results) {
                match r {
                    TaskResult::Done(output, reused) => {
                        let produced = wf.graph.outgoing(node).map(|e| e.id.clone()).collect();
                        let fingerprint = wf.tasks[node].fingerprint.clone();
                        self.record(wf, inst, InstanceEvent::TaskCompleted { node: node.clone(), output, produced, fingerprint, reused });
                    }
                    TaskResult::Human(service, input) => {
                        self.record(wf, inst, InstanceEvent::HumanTaskPending { node: node.clone(), service, input });
                    }
                    TaskResult::Fault(service, cause) => {
                        fault.get_or_insert((node.clone(), service, cause));
                    }
                }
            }
            if let Some((node, service, cause)) = fault {
                self.record(wf, inst, InstanceEvent::TaskFaulted { node, service, cause });
                return;
            }
        }
    }
}

/// Nodes visited by an instance, for soundness checks.
pub fn visited(inst: &WorkflowInstance) -> BTreeSet<&str> {
    inst.history
        .iter()
        .filter_map(|e| match e {
            InstanceEvent::Fired { node, .. } | InstanceEvent::TaskCompleted { node, .. } => Some(node.as_str()),
            _ => None,
        })
        .collect()
}
