//! Data reconciliation between bound services.
//!
//! Each input field of a service is paired with an earlier output by concept
//! similarity, then bridged with a copy or a short chain of transformation
//! rules. Composite concepts are split into their parts on either side.

mod rules;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::FieldSpec;
use crate::ontology::Ontology;

pub use rules::{check_chain, ChainStep, RuleBase, RuleSpec, TransformationRule, SEED_TRANSFORMS};

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
pub enum ReconcileError {
    #[error("rule base: {0}")]
    Rules(String),
    #[error("rule `{rule}` failed on {value}: {message}")]
    RuleFailed { rule: String, value: String, message: String },
    #[error("ill-typed chain: {0}")]
    IllTyped(String),
    #[error("no value available for `{0}`")]
    MissingField(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconcileConfig {
    /// Minimum concept similarity for a pairing.
    pub threshold: f64,
    /// Longest rule chain.
    pub chain_bound: usize,
    /// Alternative sources kept per assignment.
    pub max_fallbacks: usize,
}

impl Default for ReconcileConfig {
    fn default() -> Self {
        Self { threshold: 0.7, chain_bound: 3, max_fallbacks: 4 }
    }
}

/// A value available before a task runs. `path` addresses the variable
/// store (`node.field`, then part names); smaller `distance` is nearer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpstreamField {
    pub path: String,
    pub concept: String,
    pub distance: usize,
}

impl UpstreamField {
    pub fn new(path: impl Into<String>, concept: impl Into<String>, distance: usize) -> Self {
        Self { path: path.into(), concept: concept.into(), distance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub path: String,
    pub concept: String,
    #[serde(default)]
    pub chain: Vec<ChainStep>,
}

/// `target ← source`, tried in order with the fallbacks (used when the
/// primary lies on a branch that did not run).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub target: String,
    pub concept: String,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fallbacks: Vec<Source>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataMap {
    pub target: String,
    pub assignments: Vec<Assignment>,
    #[serde(default)]
    pub unmapped: Vec<String>,
}

impl DataMap {
    pub fn is_feasible(&self) -> bool {
        self.unmapped.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pairing {
    pub field: String,
    pub source: Option<UpstreamField>,
    pub similarity: f64,
}

/// Upstream fields with composite concepts expanded into their parts,
/// recursively (`path.Part.SubPart`).
pub fn expand_upstream(upstream: &[UpstreamField], o: &Ontology) -> Vec<UpstreamField> {
    fn walk(o: &Ontology, u: &UpstreamField, out: &mut Vec<UpstreamField>) {
        out.push(u.clone());
        for p in o.parts(&u.concept) {
            walk(o, &UpstreamField::new(format!("{}.{p}", u.path), p, u.distance), out);
        }
    }
    let mut out = Vec::new();
    for u in upstream {
        walk(o, u, &mut out);
    }
    out
}

/// Each input paired with its most similar upstream field at or above the
/// threshold; ties go to the nearer field, then the lower path.
pub fn pair_inputs(inputs: &[FieldSpec], upstream: &[UpstreamField], o: &Ontology, cfg: &ReconcileConfig) -> Vec<Pairing> {
    inputs
        .iter()
        .map(|f| {
            let best = upstream
                .iter()
                .map(|u| (o.similarity(&u.concept, &f.concept), u))
                .filter(|(s, _)| *s >= cfg.threshold)
                .min_by(|(sa, a), (sb, b)| sb.total_cmp(sa).then(a.distance.cmp(&b.distance)).then_with(|| a.path.cmp(&b.path)));
            Pairing {
                field: f.name.clone(),
                similarity: best.map_or(0.0, |(s, _)| s),
                source: best.map(|(_, u)| u.clone()),
            }
        })
        .collect()
}

fn conversion(u: &UpstreamField, target: &str, o: &Ontology, rb: &RuleBase, cfg: &ReconcileConfig) -> Option<Vec<ChainStep>> {
    if u.concept == target || o.are_equivalent(&u.concept, target) || o.is_a(&u.concept, target) {
        return Some(vec![]);
    }
    rb.find_chain(&u.concept, target, cfg.chain_bound)
}

/// Convertible sources for a concept, best first: similarity, chain length,
/// distance, path.
fn sources_for(
    concept: &str,
    upstream: &[UpstreamField],
    o: &Ontology,
    rb: &RuleBase,
    cfg: &ReconcileConfig,
) -> Vec<Source> {
    let mut found: Vec<(f64, usize, usize, Source)> = upstream
        .iter()
        .filter_map(|u| {
            let sim = o.similarity(&u.concept, concept);
            if sim < cfg.threshold {
                return None;
            }
            let chain = conversion(u, concept, o, rb, cfg)?;
            Some((sim, chain.len(), u.distance, Source { path: u.path.clone(), concept: u.concept.clone(), chain }))
        })
        .collect();
    found.sort_by(|a, b| {
        b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)).then_with(|| a.3.path.cmp(&b.3.path))
    });
    found.into_iter().map(|(_, _, _, s)| s).collect()
}

fn assign(
    target: String,
    concept: &str,
    upstream: &[UpstreamField],
    o: &Ontology,
    rb: &RuleBase,
    cfg: &ReconcileConfig,
) -> Option<Vec<Assignment>> {
    let mut srcs = sources_for(concept, upstream, o, rb, cfg).into_iter();
    if let Some(source) = srcs.next() {
        return Some(vec![Assignment { target, concept: concept.to_string(), source, fallbacks: srcs.take(cfg.max_fallbacks).collect() }]);
    }
    let parts = o.parts(concept);
    if parts.is_empty() {
        return None;
    }
    let mut out = Vec::new();
    for p in parts {
        out.extend(assign(format!("{target}.{p}"), p, upstream, o, rb, cfg)?);
    }
    Some(out)
}

/// Builds the input map of one service. Inputs with neither a convertible
/// source nor fully assembled parts are left in `unmapped`, which makes the
/// binding infeasible.
pub fn build_data_map(
    target: &str,
    inputs: &[FieldSpec],
    upstream: &[UpstreamField],
    o: &Ontology,
    rb: &RuleBase,
    cfg: &ReconcileConfig,
) -> DataMap {
    let expanded = expand_upstream(upstream, o);
    let mut map = DataMap { target: target.to_string(), ..Default::default() };
    for f in inputs {
        match assign(f.name.clone(), &f.concept, &expanded, o, rb, cfg) {
            Some(a) => map.assignments.extend(a),
            None => map.unmapped.push(f.name.clone()),
        }
    }
    map
}

/// Values produced so far, keyed `node.field` (`start.field` for process
/// input). Composite values are JSON objects keyed by part concept.
pub type VariableStore = BTreeMap<String, Value>;

/// Reads a path: the first two segments name the store entry, the rest
/// descend into object members.
pub fn lookup<'a>(store: &'a VariableStore, path: &str) -> Option<&'a Value> {
    let mut segs = path.split('.');
    let key = match (segs.next(), segs.next()) {
        (Some(a), Some(b)) => format!("{a}.{b}"),
        _ => return None,
    };
    let mut cur = store.get(&key)?;
    for s in segs {
        cur = cur.as_object()?.get(s)?;
    }
    Some(cur)
}

fn insert_at(obj: &mut Map<String, Value>, path: &str, v: Value) {
    match path.split_once('.') {
        None => {
            obj.insert(path.to_string(), v);
        }
        Some((head, rest)) => {
            let slot = obj.entry(head.to_string()).or_insert_with(|| Value::Object(Map::new()));
            if !slot.is_object() {
                *slot = Value::Object(Map::new());
            }
            insert_at(slot.as_object_mut().expect("object"), rest, v);
        }
    }
}

/// Produces the service input payload. Pure: the store is only read.
pub fn execute_map(map: &DataMap, store: &VariableStore, rb: &RuleBase) -> Result<Map<String, Value>, ReconcileError> {
    if let Some(f) = map.unmapped.first() {
        return Err(ReconcileError::MissingField(f.clone()));
    }
    let mut out = Map::new();
    for a in &map.assignments {
        let (src, v) = std::iter::once(&a.source)
            .chain(&a.fallbacks)
            .find_map(|s| lookup(store, &s.path).map(|v| (s, v)))
            .ok_or_else(|| ReconcileError::MissingField(a.target.clone()))?;
        if let (Some(first), Some(last)) = (src.chain.first(), src.chain.last()) {
            if first.from != src.concept || last.to != a.concept {
                return Err(ReconcileError::IllTyped(format!("{} does not lead from {} to {}", a.target, src.concept, a.concept)));
            }
        }
        insert_at(&mut out, &a.target, rb.apply_chain(&src.chain, v)?);
    }
    Ok(out)
}

/// Stores a node's output payload field by field.
pub fn store_outputs(store: &mut VariableStore, node: &str, payload: &Map<String, Value>) {
    for (k, v) in payload {
        store.insert(format!("{node}.{k}"), v.clone());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn setup() -> (Ontology, RuleBase, ReconcileConfig) {
        (Ontology::seed(), RuleBase::seed(), ReconcileConfig::default())
    }

    #[test]
    fn exact_pair_and_nearer_tie_break() {
        let (o, _, cfg) = setup();
        let up = [UpstreamField::new("far.d", "UsDate", 5), UpstreamField::new("near.d", "UsDate", 1)];
        let p = pair_inputs(&[FieldSpec::new("when", "UsDate")], &up, &o, &cfg);
        assert_eq!(p[0].source.as_ref().unwrap().path, "near.d");
        assert_eq!(p[0].similarity, 1.0);
        let none = pair_inputs(&[FieldSpec::new("t", "CelsiusTemperature")], &up, &o, &cfg);
        assert!(none[0].source.is_none());
    }

    #[test]
    fn temperature_and_date_conversions() {
        let (o, rb, cfg) = setup();
        let up = [UpstreamField::new("start.temp_c", "CelsiusTemperature", 10), UpstreamField::new("start.due", "UsDate", 10)];
        let inputs = [FieldSpec::new("temp_f", "FahrenheitTemperature"), FieldSpec::new("date", "UkDate")];
        let map = build_data_map("svc", &inputs, &up, &o, &rb, &cfg);
        assert!(map.is_feasible());
        let store = VariableStore::from([("start.temp_c".to_string(), json!(100)), ("start.due".to_string(), json!("12/31/2013"))]);
        let out = execute_map(&map, &store, &rb).unwrap();
        assert_eq!(out["temp_f"], json!(212.0));
        assert_eq!(out["date"], json!("31/12/2013"));
    }

    #[test]
    fn unreachable_target_is_unmapped() {
        let (o, rb, cfg) = setup();
        let up = [UpstreamField::new("start.temp_c", "CelsiusTemperature", 10)];
        let map = build_data_map("svc", &[FieldSpec::new("w", "MassPounds")], &up, &o, &rb, &cfg);
        assert_eq!(map.unmapped, vec!["w"]);
        assert!(!map.is_feasible());
        assert!(matches!(execute_map(&map, &VariableStore::new(), &rb), Err(ReconcileError::MissingField(_))));
    }

    #[test]
    fn composite_source_is_split_and_target_assembled() {
        let (o, rb, cfg) = setup();
        let up = [UpstreamField::new("start.customer", "FullName", 10)];
        let inputs = [FieldSpec::new("given", "GivenName"), FieldSpec::new("label", "NameString")];
        let map = build_data_map("svc", &inputs, &up, &o, &rb, &cfg);
        assert!(map.is_feasible(), "{map:?}");
        let store = VariableStore::from([("start.customer".to_string(), json!({"GivenName": "Ada", "FamilyName": "Lovelace"}))]);
        let out = execute_map(&map, &store, &rb).unwrap();
        assert_eq!(out["given"], json!("Ada"));
        assert_eq!(out["label"], json!("Ada Lovelace"));

        let parts = [UpstreamField::new("a.g", "GivenName", 1), UpstreamField::new("b.f", "FamilyName", 2)];
        let map = build_data_map("svc", &[FieldSpec::new("who", "FullName")], &parts, &o, &rb, &cfg);
        let targets: Vec<&str> = map.assignments.iter().map(|a| a.target.as_str()).collect();
        assert_eq!(targets, vec!["who.FamilyName", "who.GivenName"]);
        let store = VariableStore::from([("a.g".to_string(), json!("Ada")), ("b.f".to_string(), json!("Lovelace"))]);
        let out = execute_map(&map, &store, &rb).unwrap();
        assert_eq!(out["who"], json!({"GivenName": "Ada", "FamilyName": "Lovelace"}));
    }

    #[test]
    fn fallback_used_when_primary_branch_did_not_run() {
        let (o, rb, cfg) = setup();
        let up = [UpstreamField::new("a.track", "TrackingNumber", 1), UpstreamField::new("b.track", "TrackingNumber", 1)];
        let map = build_data_map("svc", &[FieldSpec::new("t", "TrackingNumber")], &up, &o, &rb, &cfg);
        assert_eq!(map.assignments[0].source.path, "a.track");
        let store = VariableStore::from([("b.track".to_string(), json!("TN-9"))]);
        assert_eq!(execute_map(&map, &store, &rb).unwrap()["t"], json!("TN-9"));
    }

    #[test]
    fn identity_map_leaves_payload_unchanged() {
        let (o, rb, cfg) = setup();
        let up = [UpstreamField::new("n.q", "Quantity", 1), UpstreamField::new("n.s", "Status", 1)];
        let map = build_data_map("svc", &[FieldSpec::new("q", "Quantity"), FieldSpec::new("s", "Status")], &up, &o, &rb, &cfg);
        let store = VariableStore::from([("n.q".to_string(), json!(7)), ("n.s".to_string(), json!("ok"))]);
        let out = execute_map(&map, &store, &rb).unwrap();
        assert_eq!(Value::Object(out), json!({"q": 7, "s": "ok"}));
    }

    #[test]
    fn three_level_decomposition_leaves() {
        let o = Ontology::seed();
        let leaves = o.decompose("PostalAddress").unwrap();
        // oracle: brute-force traversal of hasPart keeping nodes without parts
        fn walk(o: &Ontology, c: &str, out: &mut Vec<String>) {
            let parts = o.parts(c);
            if parts.is_empty() {
                out.push(c.to_string());
            }
            for p in parts {
                walk(o, p, out);
            }
        }
        let mut expect = Vec::new();
        walk(&o, "PostalAddress", &mut expect);
        let mut got = leaves.clone();
        got.sort();
        expect.sort();
        assert_eq!(got, expect);
        assert!(!leaves.contains(&"StreetLine".to_string()));
    }
}
