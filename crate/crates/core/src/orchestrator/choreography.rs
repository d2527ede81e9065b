//! Event-driven coordination of the workflows of one project.
//!
//! Workflows run one at a time in main-process order, each waiting until the
//! completion events it subscribes to have been published. Outputs of
//! finished workflows are handed on through a shared variable store.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::engine::{Engine, InstanceStatus};
use super::{CompiledProject, RunError};
use crate::reconcile::VariableStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Paused,
    Completed,
    Faulted,
    Interrupted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoordinatorEvent {
    Started { workflow: String, instance: String },
    Published { event: String },
    /// Taken over from an earlier run without re-execution.
    Carried { workflow: String },
    Finished { status: RunStatus },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectRun {
    pub id: String,
    pub status: RunStatus,
    pub store: VariableStore,
    pub published: Vec<String>,
    /// Workflow → instance id.
    pub instances: BTreeMap<String, String>,
    pub current: Option<String>,
    pub log: Vec<CoordinatorEvent>,
}

impl ProjectRun {
    /// Workflow whose instance is the one currently active.
    pub fn current_instance(&self) -> Option<&str> {
        self.current.as_ref().and_then(|w| self.instances.get(w)).map(String::as_str)
    }
}

pub struct Coordinator<'a> {
    project: &'a CompiledProject,
    engine: &'a Engine,
}

impl<'a> Coordinator<'a> {
    pub fn new(project: &'a CompiledProject, engine: &'a Engine) -> Self {
        Self { project, engine }
    }

    pub fn start(&self, id: &str, input: &Map<String, Value>) -> ProjectRun {
        let store = input.iter().map(|(k, v)| (format!("start.{k}"), v.clone())).collect();
        let mut run = ProjectRun {
            id: id.to_string(),
            status: RunStatus::Running,
            store,
            published: vec![],
            instances: BTreeMap::new(),
            current: None,
            log: vec![],
        };
        self.advance(&mut run);
        run
    }

    fn finish(run: &mut ProjectRun, status: RunStatus) {
        run.status = status;
        run.log.push(CoordinatorEvent::Finished { status });
    }

    /// Drives the run until it completes, pauses or fails.
    pub fn advance(&self, run: &mut ProjectRun) {
        run.status = RunStatus::Running;
        loop {
            if let Some(wf_id) = run.current.clone() {
                let inst_id = &run.instances[&wf_id];
                let Some(inst) = self.engine.instance(inst_id) else {
                    return Self::finish(run, RunStatus::Faulted);
                };
                match inst.status {
                    InstanceStatus::Completed => {
                        run.store.extend(inst.store);
                        let event = self.project.workflow(&wf_id).map(|w| w.publishes.clone()).unwrap_or_default();
                        run.published.push(event.clone());
                        run.log.push(CoordinatorEvent::Published { event });
                        run.current = None;
                    }
                    InstanceStatus::PausedOnHumanTask => return run.status = RunStatus::Paused,
                    InstanceStatus::Interrupted => return run.status = RunStatus::Interrupted,
                    InstanceStatus::Faulted => return Self::finish(run, RunStatus::Faulted),
                    InstanceStatus::Running => {
                        if let Some(wf) = self.project.workflow(&wf_id) {
                            let _ = self.engine.run(wf, inst_id);
                        }
                        continue;
                    }
                }
            }
            let next = self.project.order.iter().filter_map(|id| self.project.workflow(id)).find(|w| {
                !run.instances.contains_key(&w.id) && w.subscribes.iter().all(|e| run.published.contains(e))
            });
            let Some(wf) = next else {
                let all = self.project.order.iter().all(|w| run.instances.contains_key(w));
                return Self::finish(run, if all { RunStatus::Completed } else { RunStatus::Faulted });
            };
            let inst_id = format!("{}-{}", run.id, wf.id);
            run.instances.insert(wf.id.clone(), inst_id.clone());
            run.current = Some(wf.id.clone());
            run.log.push(CoordinatorEvent::Started { workflow: wf.id.clone(), instance: inst_id.clone() });
            self.engine.start(wf, &inst_id, run.store.clone());
        }
    }

    pub fn complete_human_task(&self, run: &mut ProjectRun, node: &str, payload: Map<String, Value>) -> Result<(), RunError> {
        let wf_id = run.current.clone().ok_or_else(|| RunError::NotPaused { node: node.to_string() })?;
        let wf = self.project.workflow(&wf_id).ok_or_else(|| RunError::UnknownWorkflow(wf_id.clone()))?;
        self.engine.complete_human_task(wf, &run.instances[&wf_id], node, payload)?;
        self.advance(run);
        Ok(())
    }

    pub fn interrupt(&self, run: &mut ProjectRun) -> Result<(), RunError> {
        let inst = run.current_instance().ok_or_else(|| RunError::UnknownInstance(format!("{} has no active workflow", run.id)))?;
        self.engine.interrupt(inst)?;
        run.status = RunStatus::Interrupted;
        Ok(())
    }

    pub fn resume(&self, run: &mut ProjectRun) -> Result<(), RunError> {
        let wf_id = run.current.clone().ok_or_else(|| RunError::UnknownInstance(run.id.clone()))?;
        let wf = self.project.workflow(&wf_id).ok_or_else(|| RunError::UnknownWorkflow(wf_id.clone()))?;
        self.engine.resume(wf, &run.instances[&wf_id])?;
        self.advance(run);
        Ok(())
    }

    /// Continues an interrupted or faulted run of an older project version under this
    /// project. Finished workflows whose bindings are unchanged are carried
    /// over; the interrupted one is migrated; the rest run anew.
    pub fn migrate(&self, old_project: &CompiledProject, old: &ProjectRun, id: &str) -> Result<ProjectRun, RunError> {
        if !matches!(old.status, RunStatus::Interrupted | RunStatus::Faulted) {
            return Err(RunError::Log(format!("run {} is neither interrupted nor faulted", old.id)));
        }
        let same = |w: &str| match (old_project.workflow(w), self.project.workflow(w)) {
            (Some(a), Some(b)) => a.tasks == b.tasks && a.graph == b.graph,
            _ => false,
        };
        let mut run = ProjectRun {
            id: id.to_string(),
            status: RunStatus::Running,
            store: old.store.iter().filter(|(k, _)| k.starts_with("start.")).map(|(k, v)| (k.clone(), v.clone())).collect(),
            published: vec![],
            instances: BTreeMap::new(),
            current: None,
            log: vec![],
        };
        for ev in &old.log {
            if let CoordinatorEvent::Published { event } = ev {
                let wf = event.trim_end_matches(".completed");
                if !same(wf) {
                    continue;
                }
                if let Some(inst) = old.instances.get(wf).and_then(|i| self.engine.instance(i)) {
                    run.store.extend(inst.store.into_iter().filter(|(k, _)| !k.starts_with("start.")));
                }
                run.instances.insert(wf.to_string(), old.instances[wf].clone());
                run.published.push(event.clone());
                run.log.push(CoordinatorEvent::Carried { workflow: wf.to_string() });
                run.log.push(CoordinatorEvent::Published { event: event.clone() });
            }
        }
        if let Some(wf_id) = &old.current {
            if let (Some(wf), Some(old_inst)) = (self.project.workflow(wf_id), old.current_instance()) {
                let ready = wf.subscribes.iter().all(|e| run.published.contains(e));
                if ready && !run.instances.contains_key(wf_id) {
                    let inst_id = format!("{id}-{wf_id}");
                    run.instances.insert(wf_id.clone(), inst_id.clone());
                    run.current = Some(wf_id.clone());
                    run.log.push(CoordinatorEvent::Started { workflow: wf_id.clone(), instance: inst_id.clone() });
                    self.engine.migrate(old_inst, wf, &inst_id, run.store.clone())?;
                }
            }
        }
        self.advance(&mut run);
        Ok(run)
    }
}
