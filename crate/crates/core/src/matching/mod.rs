//! Activity-to-service matchmaking.
//!
//! Activities and services share one profile shape (capability, input and
//! output concepts). A candidate's score mixes semantic closeness of the
//! profiles with token overlap of the names; when no single service yields
//! every output the activity promises, small compositions are searched.

mod compose;
mod patterns;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::NodeKind;
use crate::model::{CollaborationModel, FieldSpec};
use crate::ontology::Ontology;
use crate::sa_bpmn::{Direction, SaBpmnDocument};
use crate::text;

use compose::best_bindings;
pub use patterns::{PatternRecord, PatternStore};

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("activity `{activity}` has unresolved concept references: {}", refs.join(", "))]
    Unresolved { activity: String, refs: Vec<String> },
    #[error("registry: {0}")]
    Registry(String),
    #[error("pattern store: {0}")]
    Patterns(String),
    #[error("match for `{0}` has no chosen binding")]
    NotChosen(String),
    #[error("candidate index {index} out of range for `{activity}`")]
    NoSuchCandidate { activity: String, index: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SemanticProfile {
    #[serde(default)]
    pub capability: Vec<String>,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub outputs: Vec<String>,
}

/// An output value produced by a mock: a constant, or a copy of an input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockValue {
    From { from: String },
    Const(serde_json::Value),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockBehavior {
    #[serde(default)]
    pub outputs: BTreeMap<String, MockValue>,
    #[serde(default)]
    pub fault: bool,
    #[serde(default)]
    pub delay_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Endpoint {
    Mock(MockBehavior),
    Http { url: String },
    /// Completed by a person through the CLI or API.
    Human,
    /// Placeholder; needs a concrete endpoint before compilation.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceDescriptor {
    pub id: String,
    pub name: String,
    /// Partner operating the service; it is only offered in that lane.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider: Option<String>,
    pub endpoint: Endpoint,
    pub profile: SemanticProfile,
    #[serde(default)]
    pub inputs: Vec<FieldSpec>,
    #[serde(default)]
    pub outputs: Vec<FieldSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    #[serde(default, rename = "service")]
    pub services: Vec<ServiceDescriptor>,
}

impl Registry {
    pub fn from_toml_str(s: &str) -> Result<Self, MatchError> {
        let r: Registry = toml::from_str(s).map_err(|e| MatchError::Registry(e.to_string()))?;
        let mut seen = BTreeSet::new();
        for svc in &r.services {
            if !seen.insert(&svc.id) {
                return Err(MatchError::Registry(format!("duplicate service id `{}`", svc.id)));
            }
            if svc.profile.capability.is_empty() {
                return Err(MatchError::Registry(format!("service `{}` has an empty capability", svc.id)));
            }
        }
        Ok(r)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MatchError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| MatchError::Registry(e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("registry serializes")
    }

    pub fn get(&self, id: &str) -> Option<&ServiceDescriptor> {
        self.services.iter().find(|s| s.id == id)
    }

    pub fn without(&self, ids: &BTreeSet<String>) -> Registry {
        Registry { services: self.services.iter().filter(|s| !ids.contains(&s.id)).cloned().collect() }
    }

    /// Adds or replaces a service.
    pub fn upsert(&mut self, svc: ServiceDescriptor) {
        match self.services.iter_mut().find(|s| s.id == svc.id) {
            Some(slot) => *slot = svc,
            None => self.services.push(svc),
        }
    }
}

/// A task to be bound, with its semantic profile and the fields of its
/// messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Activity {
    pub id: String,
    pub name: String,
    pub lane: Option<String>,
    pub profile: SemanticProfile,
    pub inputs: Vec<FieldSpec>,
    pub outputs: Vec<FieldSpec>,
}

/// Annotated tasks of a document, with message fields from the model.
pub fn activities(doc: &SaBpmnDocument, m: &CollaborationModel) -> Vec<Activity> {
    let mut out = Vec::new();
    for g in &doc.processes {
        for n in &g.nodes {
            if !matches!(n.kind, NodeKind::Task { .. }) {
                continue;
            }
            let Some(a) = doc.annotations.get(&n.id) else { continue };
            let fields = |dir: Direction| -> Vec<FieldSpec> {
                a.concepts(dir)
                    .filter_map(|e| m.message(&e.message))
                    .flat_map(|msg| msg.fields.iter().cloned())
                    .collect()
            };
            out.push(Activity {
                id: n.id.clone(),
                name: n.name.clone(),
                lane: n.lane.clone(),
                profile: SemanticProfile {
                    capability: a.details.clone(),
                    inputs: a.concepts(Direction::Input).map(|e| e.concept.clone()).collect(),
                    outputs: a.concepts(Direction::Output).map(|e| e.concept.clone()).collect(),
                },
                inputs: fields(Direction::Input),
                outputs: fields(Direction::Output),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// Weight of the semantic part of the hybrid score.
    pub alpha: f64,
    pub auto_threshold: f64,
    /// Below this the activity is uncovered.
    pub floor: f64,
    /// Largest composition.
    pub k: usize,
    pub beam_width: usize,
    /// Pools with at most this many subsets of size ≤ k are searched exhaustively.
    pub exhaustive_limit: usize,
    /// Minimum similarity for a service output to supply an activity output.
    pub coverage_threshold: f64,
    pub max_candidates: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            auto_threshold: 0.9,
            floor: 0.4,
            k: 3,
            beam_width: 8,
            exhaustive_limit: 20_000,
            coverage_threshold: 0.8,
            max_candidates: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    /// Service ids, sorted.
    pub services: Vec<String>,
    pub score: f64,
    /// Activity output concept → service supplying it.
    pub coverage: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStatus {
    Auto,
    AwaitingValidation,
    Uncovered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub activity_id: String,
    pub fingerprint: String,
    pub candidates: Vec<Binding>,
    pub chosen: Option<Binding>,
    pub status: MatchStatus,
    #[serde(default)]
    pub from_pattern: bool,
    #[serde(default)]
    pub deferred: bool,
}

impl MatchResult {
    /// Validates a candidate (the designer's choice).
    pub fn accept(&mut self, index: usize) -> Result<(), MatchError> {
        let b = self
            .candidates
            .get(index)
            .cloned()
            .ok_or_else(|| MatchError::NoSuchCandidate { activity: self.activity_id.clone(), index })?;
        self.chosen = Some(b);
        self.status = MatchStatus::Auto;
        self.deferred = false;
        Ok(())
    }

    pub fn reject(&mut self) {
        self.chosen = None;
        self.status = MatchStatus::Uncovered;
    }

    /// Binds directly to one service, e.g. a generated human task.
    pub fn bind_to(&mut self, svc: &ServiceDescriptor, activity: &Activity) {
        let coverage = activity.profile.outputs.iter().map(|c| (c.clone(), svc.id.clone())).collect();
        let b = Binding { services: vec![svc.id.clone()], score: 1.0, coverage };
        self.candidates.insert(0, b.clone());
        self.chosen = Some(b);
        self.status = MatchStatus::Auto;
        self.deferred = false;
    }

    pub fn is_ready(&self) -> bool {
        self.status == MatchStatus::Auto && self.chosen.is_some()
    }
}

/// A profile with every reference resolved to a concept id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Resolved {
    pub capability: Vec<String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

fn resolve_one(o: &Ontology, r: &str) -> Option<String> {
    if o.concept(r).is_some() {
        return Some(r.to_string());
    }
    o.lookup_label(r).map(|(id, _)| id.to_string())
}

/// Resolves references through concept ids, then labels. Unresolvable
/// references are returned as errors.
pub(crate) fn resolve_profile(o: &Ontology, p: &SemanticProfile) -> Result<Resolved, Vec<String>> {
    let mut missing = Vec::new();
    let mut res = |v: &[String]| -> Vec<String> {
        v.iter()
            .filter_map(|r| {
                let c = resolve_one(o, r);
                if c.is_none() {
                    missing.push(r.clone());
                }
                c
            })
            .collect()
    };
    let r = Resolved { capability: res(&p.capability), inputs: res(&p.inputs), outputs: res(&p.outputs) };
    if missing.is_empty() {
        Ok(r)
    } else {
        Err(missing)
    }
}

/// Lenient variant for services: unknown references simply match nothing.
pub(crate) fn resolve_lenient(o: &Ontology, p: &SemanticProfile) -> Resolved {
    let res = |v: &[String]| v.iter().map(|r| resolve_one(o, r).unwrap_or_else(|| r.clone())).collect();
    Resolved { capability: res(&p.capability), inputs: res(&p.inputs), outputs: res(&p.outputs) }
}

/// Symmetric mean of best pairings: each element of one set is paired with
/// its most similar element of the other, in both directions. 1 when both
/// sets are empty, 0 when exactly one is.
pub fn set_score(o: &Ontology, a: &[String], b: &[String]) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let best = |x: &String, ys: &[String]| ys.iter().map(|y| o.similarity(x, y)).fold(0.0, f64::max);
    let ab = a.iter().map(|x| best(x, b)).sum::<f64>() / a.len() as f64;
    let ba = b.iter().map(|y| best(y, a)).sum::<f64>() / b.len() as f64;
    (ab + ba) / 2.0
}

pub(crate) fn semantic_part(o: &Ontology, a: &Resolved, s: &Resolved) -> f64 {
    (set_score(o, &a.capability, &s.capability) + set_score(o, &a.inputs, &s.inputs) + set_score(o, &a.outputs, &s.outputs))
        / 3.0
}

/// `α·semantic + (1−α)·syntactic`. Semantic is the mean of the capability,
/// input and output set scores; syntactic is the Jaccard index of the name
/// tokens. The activity is the requirement side.
pub fn hybrid_score(
    activity_name: &str,
    activity: &SemanticProfile,
    service_name: &str,
    service: &SemanticProfile,
    o: &Ontology,
    alpha: f64,
) -> f64 {
    let a = resolve_lenient(o, activity);
    let s = resolve_lenient(o, service);
    alpha * semantic_part(o, &a, &s) + (1.0 - alpha) * text::name_similarity(activity_name, service_name)
}

/// Canonical, order-independent key of a resolved profile.
pub fn fingerprint(o: &Ontology, p: &SemanticProfile) -> String {
    let r = resolve_lenient(o, p);
    let sorted = |v: &[String]| {
        let mut v = v.to_vec();
        v.sort();
        v.join(",")
    };
    format!("cap={};in={};out={}", sorted(&r.capability), sorted(&r.inputs), sorted(&r.outputs))
}

fn eligible<'a>(a: &Activity, registry: &'a Registry) -> Vec<&'a ServiceDescriptor> {
    registry
        .services
        .iter()
        .filter(|s| match (&s.provider, &a.lane) {
            (Some(p), Some(l)) => p == l,
            (Some(_), None) => false,
            (None, _) => true,
        })
        .collect()
}

/// Pattern hits first, then fresh candidates by hybrid score (with
/// compositions when needed).
pub fn match_activity(
    a: &Activity,
    registry: &Registry,
    patterns: &PatternStore,
    o: &Ontology,
    cfg: &MatchConfig,
) -> Result<MatchResult, MatchError> {
    let resolved = resolve_profile(o, &a.profile)
        .map_err(|refs| MatchError::Unresolved { activity: a.id.clone(), refs })?;
    let fp = fingerprint(o, &a.profile);
    let pool = eligible(a, registry);
    let mut candidates = best_bindings(a, &resolved, &pool, o, cfg);

    let hit = patterns.lookup(&fp).filter(|rec| {
        rec.services.iter().all(|id| pool.iter().any(|s| &s.id == id))
    });
    if let Some(rec) = hit {
        candidates.retain(|b| b.services != rec.services);
        let coverage = compose::coverage(&resolved, &rec.services, &pool, o, cfg).unwrap_or_default();
        let b = Binding { services: rec.services.clone(), score: 1.0, coverage };
        candidates.insert(0, b.clone());
        candidates.truncate(cfg.max_candidates);
        return Ok(MatchResult {
            activity_id: a.id.clone(),
            fingerprint: fp,
            candidates,
            chosen: Some(b),
            status: MatchStatus::Auto,
            from_pattern: true,
            deferred: false,
        });
    }
    let top = candidates.first().map_or(0.0, |b| b.score);
    let status = if top >= cfg.auto_threshold {
        MatchStatus::Auto
    } else if top >= cfg.floor {
        MatchStatus::AwaitingValidation
    } else {
        MatchStatus::Uncovered
    };
    let chosen = (status == MatchStatus::Auto).then(|| candidates[0].clone());
    Ok(MatchResult { activity_id: a.id.clone(), fingerprint: fp, candidates, chosen, status, from_pattern: false, deferred: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncoveredChoice {
    GenerateGuiService,
    MarkExternal,
    Defer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "resolution", rename_all = "snake_case")]
pub enum Resolution {
    Service(ServiceDescriptor),
    Deferred { activity: String },
}

/// Human-in-the-loop answers for an uncovered activity. Generated GUI
/// services mirror the activity's message fields; the runtime pauses on them.
pub fn resolve_uncovered(a: &Activity, choice: UncoveredChoice) -> Resolution {
    let descriptor = |id: String, endpoint: Endpoint| ServiceDescriptor {
        id,
        name: a.name.clone(),
        provider: a.lane.clone(),
        endpoint,
        profile: a.profile.clone(),
        inputs: a.inputs.clone(),
        outputs: a.outputs.clone(),
    };
    match choice {
        UncoveredChoice::GenerateGuiService => Resolution::Service(descriptor(format!("gui-{}", a.id), Endpoint::Human)),
        UncoveredChoice::MarkExternal => Resolution::Service(descriptor(format!("external-{}", a.id), Endpoint::External)),
        UncoveredChoice::Defer => Resolution::Deferred { activity: a.id.clone() },
    }
}
