//! Detection and adaptation.
//!
//! Two instance models of the running collaboration are kept side by side:
//! the expected model, fed by monitoring events from the engine, and the
//! field model, fed by observations of the real world. Their divergence is
//! measured per category (situation, network, execution) and the dominant
//! category decides where the design pipeline is re-entered.

pub mod cep;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use cep::{Action, Applied, Buffers, CepRule, CepRules, Delta, Op};

use crate::events::{Event, EventSource};
use crate::model::CollaborationModel;
use crate::orchestrator::CompiledProject;

#[derive(Debug, Error, PartialEq)]
pub enum AgilityError {
    #[error("invalid CEP rules: {0}")]
    Rules(String),
    #[error("{0}")]
    Io(String),
    #[error("invalid agility configuration: {0}")]
    Config(String),
    #[error("nothing to dispatch: the report calls for no adaptation")]
    NoAdaptation,
    #[error("{reentry:?} failed: {message} (interrupted instances stay interrupted)")]
    Stage { reentry: ReEntry, message: String, interrupted: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    /// Context and objectives.
    Situation,
    /// Partners and the availability of their functions.
    Network,
    /// Task and service status.
    Execution,
}

impl Category {
    /// In pipeline order: the earlier the category, the earlier its re-entry.
    pub const ALL: [Category; 3] = [Category::Situation, Category::Network, Category::Execution];

    pub fn reentry(self) -> ReEntry {
        match self {
            Category::Situation => ReEntry::GatherKnowledge,
            Category::Network => ReEntry::RededuceProcesses,
            Category::Execution => ReEntry::RediscoverServices,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Expected,
    Field,
}

impl Side {
    pub fn of(source: EventSource) -> Self {
        match source {
            EventSource::Monitoring => Side::Expected,
            EventSource::Field => Side::Field,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInstance {
    pub category: Category,
    #[serde(default)]
    pub attributes: BTreeMap<String, Value>,
}

/// Instances of the collaborative metamodel, keyed `kind:id`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TwinModel {
    pub instances: BTreeMap<String, ModelInstance>,
}

impl TwinModel {
    /// The collaboration as designed: context, objectives, partners and
    /// functions, plus tasks and services of the compiled workflows.
    pub fn from_model(m: &CollaborationModel, project: Option<&CompiledProject>) -> Self {
        let mut t = TwinModel::default();
        for (k, v) in &m.context {
            t.insert(&format!("context:{k}"), Category::Situation);
            t.set(&format!("context:{k}"), "value", json!(v));
        }
        for o in &m.objectives {
            let id = format!("objective:{}", o.id);
            t.insert(&id, Category::Situation);
            t.set(&id, "kind", json!(o.kind.as_str()));
            t.set(&id, "description", json!(o.description));
        }
        for p in &m.partners {
            let id = format!("partner:{}", p.id);
            t.insert(&id, Category::Network);
            t.set(&id, "available", json!(true));
            for f in &p.functions {
                let id = format!("function:{}", f.id);
                t.insert(&id, Category::Network);
                t.set(&id, "partner", json!(p.id));
                t.set(&id, "available", json!(true));
            }
        }
        if let Some(p) = project {
            for wf in &p.workflows {
                for (node, task) in &wf.tasks {
                    let id = format!("task:{node}");
                    t.insert(&id, Category::Execution);
                    t.set(&id, "status", json!("pending"));
                    t.set(&id, "workflow", json!(wf.id));
                    let services: Vec<&str> = task.services.iter().map(|s| s.service.as_str()).collect();
                    t.set(&id, "services", json!(services));
                }
            }
            for s in &p.services {
                let id = format!("service:{}", s.id);
                t.insert(&id, Category::Execution);
                t.set(&id, "status", json!("available"));
            }
        }
        t
    }

    pub(crate) fn insert(&mut self, id: &str, category: Category) {
        self.instances.entry(id.to_string()).or_insert(ModelInstance { category, attributes: BTreeMap::new() });
    }

    /// Sets an attribute of an existing instance; `None` when nothing changed.
    pub(crate) fn set(&mut self, id: &str, attribute: &str, v: Value) -> Option<Delta> {
        let inst = self.instances.get_mut(id)?;
        let old = inst.attributes.insert(attribute.to_string(), v.clone());
        (old.as_ref() != Some(&v)).then(|| Delta::Set { instance: id.to_string(), attribute: attribute.to_string(), old, new: v })
    }

    pub fn attribute(&self, id: &str, attribute: &str) -> Option<&Value> {
        self.instances.get(id).and_then(|i| i.attributes.get(attribute))
    }

    /// Instances and attribute values of one category, as comparable items.
    pub fn items(&self, c: Category) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for (id, inst) in self.instances.iter().filter(|(_, i)| i.category == c) {
            out.insert(id.clone());
            for (k, v) in &inst.attributes {
                out.insert(format!("{id}.{k}={v}"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Watermark {
    pub timestamp: u64,
    pub event: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SituationTwin {
    pub expected: TwinModel,
    pub field: TwinModel,
    pub last_applied: BTreeMap<Side, Watermark>,
    pub buffers: Buffers,
    pub trace: Vec<Applied>,
    /// Well-formed events no rule matched.
    pub unmatched: u64,
    /// Dropped events: empty identifiers or time running backwards.
    pub malformed: u64,
}

impl SituationTwin {
    /// Both models start as copies of the designed collaboration.
    pub fn new(initial: TwinModel) -> Self {
        Self {
            expected: initial.clone(),
            field: initial,
            last_applied: BTreeMap::new(),
            buffers: Buffers::new(),
            trace: vec![],
            unmatched: 0,
            malformed: 0,
        }
    }

    pub fn model(&self, side: Side) -> &TwinModel {
        match side {
            Side::Expected => &self.expected,
            Side::Field => &self.field,
        }
    }

    /// Applies one event to the model of its source; returns the rules fired.
    pub fn ingest(&mut self, e: &Event, rules: &CepRules) -> Vec<Applied> {
        let side = Side::of(e.source);
        let stale = self.last_applied.get(&side).is_some_and(|w| e.timestamp < w.timestamp);
        if e.id.is_empty() || e.kind.is_empty() || e.subject.is_empty() || stale {
            self.malformed += 1;
            return vec![];
        }
        let model = match side {
            Side::Expected => &mut self.expected,
            Side::Field => &mut self.field,
        };
        let (fired, matched) = cep::run_rules(rules, e, &mut self.buffers, model);
        if !matched {
            self.unmatched += 1;
        }
        self.last_applied.insert(side, Watermark { timestamp: e.timestamp, event: e.id.clone() });
        self.trace.extend(fired.iter().cloned());
        fired
    }

    pub fn replay<'a>(initial: TwinModel, events: impl IntoIterator<Item = &'a Event>, rules: &CepRules) -> Self {
        let mut t = Self::new(initial);
        for e in events {
            t.ingest(e, rules);
        }
        t
    }

    /// Partners present as designed but gone or unavailable in the field.
    pub fn withdrawn_partners(&self) -> BTreeSet<String> {
        self.expected
            .instances
            .keys()
            .filter_map(|id| id.strip_prefix("partner:"))
            .filter(|p| {
                let id = format!("partner:{p}");
                !self.field.instances.contains_key(&id) || self.field.attribute(&id, "available") == Some(&json!(false))
            })
            .map(String::from)
            .collect()
    }

    /// Services not reported available by either model, or blamed for a
    /// task fault.
    pub fn failed_services(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for m in [&self.expected, &self.field] {
            for (id, inst) in &m.instances {
                if let Some(s) = id.strip_prefix("service:") {
                    if inst.attributes.get("status").is_some_and(|v| v != "available") {
                        out.insert(s.to_string());
                    }
                }
                if id.starts_with("task:") {
                    if let Some(Value::String(s)) = inst.attributes.get("failed_service") {
                        out.insert(s.clone());
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub situation: f64,
    pub network: f64,
    pub execution: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self { situation: 0.4, network: 0.3, execution: 0.3 }
    }
}

impl Weights {
    pub fn of(&self, c: Category) -> f64 {
        match c {
            Category::Situation => self.situation,
            Category::Network => self.network,
            Category::Execution => self.execution,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasureConfig {
    pub weights: Weights,
    pub threshold: f64,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self { weights: Weights::default(), threshold: 0.2 }
    }
}

impl MeasureConfig {
    pub fn validate(&self) -> Result<(), AgilityError> {
        let w = [self.weights.situation, self.weights.network, self.weights.execution];
        if w.iter().any(|x| !(0.0..=1.0).contains(x)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(AgilityError::Config(format!("weights must lie in [0,1] and sum to 1, got {w:?}")));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(AgilityError::Config(format!("threshold {} is outside [0,1]", self.threshold)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryDistance {
    pub distance: f64,
    pub only_expected: Vec<String>,
    pub only_field: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub situation: CategoryDistance,
    pub network: CategoryDistance,
    pub execution: CategoryDistance,
    pub total: f64,
    /// Category with the largest weighted contribution; none at distance 0.
    pub dominant: Option<Category>,
    pub threshold: f64,
    pub verdict: bool,
    pub watermark: BTreeMap<Side, Watermark>,
}

impl DistanceReport {
    pub fn category(&self, c: Category) -> &CategoryDistance {
        match c {
            Category::Situation => &self.situation,
            Category::Network => &self.network,
            Category::Execution => &self.execution,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// `|A Δ B| / |A ∪ B|`, 0 when both are empty.
pub fn jaccard_distance(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.symmetric_difference(b).count() as f64 / union as f64
}

pub fn category_distance(expected: &TwinModel, field: &TwinModel, c: Category) -> CategoryDistance {
    let (a, b) = (expected.items(c), field.items(c));
    CategoryDistance {
        distance: jaccard_distance(&a, &b),
        only_expected: a.difference(&b).cloned().collect(),
        only_field: b.difference(&a).cloned().collect(),
    }
}

pub fn measure(twin: &SituationTwin, cfg: &MeasureConfig) -> DistanceReport {
    let d = Category::ALL.map(|c| category_distance(&twin.expected, &twin.field, c));
    let contrib = Category::ALL.map(|c| cfg.weights.of(c) * d[c as usize].distance);
    let total: f64 = contrib.iter().sum();
    let dominant = (total > 0.0).then(|| {
        // strict comparison keeps the earliest category on ties
        let mut best = 0;
        for i in 1..3 {
            if contrib[i] > contrib[best] {
                best = i;
            }
        }
        Category::ALL[best]
    });
    let [situation, network, execution] = d;
    DistanceReport {
        situation,
        network,
        execution,
        total,
        dominant,
        threshold: cfg.threshold,
        verdict: total > cfg.threshold,
        watermark: twin.last_applied.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReEntry {
    None,
    GatherKnowledge,
    RededuceProcesses,
    RediscoverServices,
}

pub fn select_adaptation(report: &DistanceReport) -> ReEntry {
    match (report.verdict, report.dominant) {
        (true, Some(c)) => c.reentry(),
        _ => ReEntry::None,
    }
}

/// The design-time side of adaptation, provided by the pipeline.
pub trait Adapter {
    /// Interrupts every running instance; returns their ids.
    fn interrupt_all(&mut self) -> Result<Vec<String>, String>;
    /// Identifies the workflows currently deployed.
    fn version(&self) -> String;
    /// Deduces the processes again without the given partners.
    fn rededuce(&mut self, withdrawn_partners: &BTreeSet<String>) -> Result<String, String>;
    /// Matches services again without the given ones.
    fn rediscover(&mut self, excluded_services: &BTreeSet<String>) -> Result<String, String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptationState {
    /// Knowledge must be gathered again by a person.
    AwaitingModelEdit,
    Applied,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptationRecord {
    pub reentry: ReEntry,
    pub interrupted: Vec<String>,
    pub old_version: String,
    pub new_version: Option<String>,
    pub state: AdaptationState,
    pub withdrawn_partners: Vec<String>,
    pub excluded_services: Vec<String>,
}

/// Interrupts the running instances and re-enters the design pipeline.
pub fn dispatch(reentry: ReEntry, twin: &SituationTwin, adapter: &mut dyn Adapter) -> Result<AdaptationRecord, AgilityError> {
    if reentry == ReEntry::None {
        return Err(AgilityError::NoAdaptation);
    }
    let old_version = adapter.version();
    let interrupted =
        adapter.interrupt_all().map_err(|message| AgilityError::Stage { reentry, message, interrupted: vec![] })?;
    let withdrawn = twin.withdrawn_partners();
    let failed = twin.failed_services();
    let stage = |r: Result<String, String>| {
        r.map_err(|message| AgilityError::Stage { reentry, message, interrupted: interrupted.clone() })
    };
    let (new_version, state) = match reentry {
        ReEntry::GatherKnowledge => (None, AdaptationState::AwaitingModelEdit),
        ReEntry::RededuceProcesses => (Some(stage(adapter.rededuce(&withdrawn))?), AdaptationState::Applied),
        ReEntry::RediscoverServices => (Some(stage(adapter.rediscover(&failed))?), AdaptationState::Applied),
        ReEntry::None => unreachable!("rejected above"),
    };
    Ok(AdaptationRecord {
        reentry,
        interrupted,
        old_version,
        new_version,
        state,
        withdrawn_partners: withdrawn.into_iter().collect(),
        excluded_services: failed.into_iter().collect(),
    })
}
