//! Collaborative ontology: a concept subsumption DAG with labels, declared
//! equivalences (`sameAs`), part-of decomposition (`hasPart`), generic
//! relations, and ontology instances.
//!
//! The on-disk form is a flat, line-oriented triple file; see [`parse`].

mod linking;
mod parse;
mod store;

pub use linking::{apply_completion, link_references, Candidate, CompletionReport, LinkOutcome, LinkStatus};
pub use parse::{load_ontology, parse_ontology};
pub use store::{InstanceStore, Provenance, SharedStore, StoreError};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

pub const SEED_ONTOLOGY: &str = include_str!("../../data/seed.onto");

#[derive(Debug, Error, PartialEq)]
pub enum OntologyError {
    #[error("cannot read ontology file {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("subsumption cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("dangling reference: {0}")]
    Dangling(String),
    #[error("unknown concept `{0}`")]
    UnknownConcept(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: String,
    pub label: String,
    #[serde(default)]
    pub alt_labels: Vec<String>,
    #[serde(default)]
    pub parents: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl Relation {
    pub fn new(s: impl Into<String>, p: impl Into<String>, o: impl Into<String>) -> Self {
        Self { subject: s.into(), predicate: p.into(), object: o.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub concept: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, serde_json::Value>,
    pub provenance: Provenance,
}

pub const SAME_AS: &str = "sameAs";
pub const HAS_PART: &str = "hasPart";

/// Immutable once built; derived indexes are computed up front.
#[derive(Debug, Clone, Default)]
pub struct Ontology {
    concepts: BTreeMap<String, Concept>,
    relations: BTreeSet<Relation>,
    instances: BTreeMap<String, Instance>,
    depth: BTreeMap<String, usize>,
    ancestors: BTreeMap<String, BTreeSet<String>>,
    labels: BTreeMap<String, (String, bool)>,
    lexicon: BTreeMap<String, BTreeSet<String>>,
}

impl Ontology {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn seed() -> Self {
        parse_ontology(SEED_ONTOLOGY).expect("shipped seed ontology is valid")
    }

    pub fn new(
        concepts: Vec<Concept>,
        relations: Vec<Relation>,
        instances: Vec<Instance>,
    ) -> Result<Self, OntologyError> {
        let concepts: BTreeMap<String, Concept> = concepts.into_iter().map(|c| (c.id.clone(), c)).collect();
        for c in concepts.values() {
            for p in &c.parents {
                if !concepts.contains_key(p) {
                    return Err(OntologyError::Dangling(format!("parent `{p}` of concept `{}`", c.id)));
                }
            }
        }
        let instances: BTreeMap<String, Instance> = instances.into_iter().map(|i| (i.id.clone(), i)).collect();
        for i in instances.values() {
            if !concepts.contains_key(&i.concept) {
                return Err(OntologyError::Dangling(format!("concept `{}` of instance `{}`", i.concept, i.id)));
            }
        }
        for r in &relations {
            for end in [&r.subject, &r.object] {
                if !concepts.contains_key(end) && !instances.contains_key(end) {
                    return Err(OntologyError::Dangling(format!(
                        "`{end}` in relation {} {} {}",
                        r.subject, r.predicate, r.object
                    )));
                }
            }
        }
        let order = topo_order(&concepts)?;

        let mut depth = BTreeMap::new();
        let mut ancestors: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for id in &order {
            let c = &concepts[id];
            let d = c.parents.iter().map(|p| depth[p]).max().map_or(1, |m: usize| m + 1);
            depth.insert(id.clone(), d);
            let mut anc = BTreeSet::from([id.clone()]);
            for p in &c.parents {
                anc.extend(ancestors[p].iter().cloned());
            }
            ancestors.insert(id.clone(), anc);
        }

        let mut labels = BTreeMap::new();
        let mut lexicon: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for c in concepts.values() {
            // primary labels win over alternative labels
            labels.entry(text::normalize(&c.id)).or_insert((c.id.clone(), true));
            labels.insert(text::normalize(&c.label), (c.id.clone(), true));
            let toks = text::tokens(&c.label);
            if toks.len() == 1 {
                lexicon.entry(toks[0].clone()).or_default().insert(c.id.clone());
            }
        }
        for c in concepts.values() {
            for alt in &c.alt_labels {
                labels.entry(text::normalize(alt)).or_insert((c.id.clone(), false));
                let toks = text::tokens(alt);
                if toks.len() == 1 {
                    lexicon.entry(toks[0].clone()).or_default().insert(c.id.clone());
                }
            }
        }

        Ok(Self {
            concepts,
            relations: relations.into_iter().collect(),
            instances,
            depth,
            ancestors,
            labels,
            lexicon,
        })
    }

    pub fn concept(&self, id: &str) -> Option<&Concept> {
        self.concepts.get(id)
    }

    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn relations(&self) -> impl Iterator<Item = &Relation> {
        self.relations.iter()
    }

    pub fn instances(&self) -> impl Iterator<Item = &Instance> {
        self.instances.values()
    }

    pub fn depth(&self, id: &str) -> Option<usize> {
        self.depth.get(id).copied()
    }

    /// Ancestors including the concept itself.
    pub fn ancestors(&self, id: &str) -> Option<&BTreeSet<String>> {
        self.ancestors.get(id)
    }

    pub fn is_a(&self, id: &str, ancestor: &str) -> bool {
        self.ancestors.get(id).is_some_and(|a| a.contains(ancestor))
    }

    /// Concept whose label (`true`) or alternative label (`false`) equals `term`
    /// after normalization. Concept ids count as labels.
    pub fn lookup_label(&self, term: &str) -> Option<(&str, bool)> {
        self.labels.get(&text::normalize(term)).map(|(id, primary)| (id.as_str(), *primary))
    }

    /// Concepts named by a single token (through label or alternative label).
    pub fn lexicon(&self, token: &str) -> Option<&BTreeSet<String>> {
        self.lexicon.get(token)
    }

    /// Wu–Palmer style similarity `2·depth(lca) / (depth(a) + depth(b))`, where
    /// depth is the longest path to a root plus one and lca is the deepest
    /// common ancestor. 0 when the concepts share no ancestor.
    pub fn concept_distance(&self, a: &str, b: &str) -> Result<f64, OntologyError> {
        let anc_a = self.ancestors.get(a).ok_or_else(|| OntologyError::UnknownConcept(a.to_string()))?;
        let anc_b = self.ancestors.get(b).ok_or_else(|| OntologyError::UnknownConcept(b.to_string()))?;
        if a == b {
            return Ok(1.0);
        }
        let lca_depth = anc_a.intersection(anc_b).map(|c| self.depth[c]).max().unwrap_or(0);
        Ok(2.0 * lca_depth as f64 / (self.depth[a] + self.depth[b]) as f64)
    }

    pub fn are_equivalent(&self, a: &str, b: &str) -> bool {
        a == b
            || self.relations.contains(&Relation::new(a, SAME_AS, b))
            || self.relations.contains(&Relation::new(b, SAME_AS, a))
    }

    /// Similarity used by matching: declared equivalents score 1.0, otherwise
    /// [`concept_distance`](Self::concept_distance). Unknown concepts score 0.
    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        if self.are_equivalent(a, b) {
            return 1.0;
        }
        self.concept_distance(a, b).unwrap_or(0.0)
    }

    /// Direct parts of a concept, sorted.
    pub fn parts(&self, id: &str) -> Vec<&str> {
        self.relations
            .iter()
            .filter(|r| r.predicate == HAS_PART && r.subject == id)
            .map(|r| r.object.as_str())
            .collect()
    }

    /// Leaf frontier of the part-of decomposition, in depth-first order.
    pub fn decompose(&self, id: &str) -> Result<Vec<String>, OntologyError> {
        if !self.concepts.contains_key(id) {
            return Err(OntologyError::UnknownConcept(id.to_string()));
        }
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        self.decompose_into(id, &mut out, &mut seen);
        Ok(out)
    }

    fn decompose_into(&self, id: &str, out: &mut Vec<String>, seen: &mut BTreeSet<String>) {
        if !seen.insert(id.to_string()) {
            return;
        }
        let parts = self.parts(id);
        if parts.is_empty() {
            out.push(id.to_string());
        } else {
            for p in parts {
                self.decompose_into(p, out, seen);
            }
        }
    }
}

fn topo_order(concepts: &BTreeMap<String, Concept>) -> Result<Vec<String>, OntologyError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Active,
        Done,
    }
    fn visit(
        id: &str,
        concepts: &BTreeMap<String, Concept>,
        marks: &mut BTreeMap<String, Mark>,
        stack: &mut Vec<String>,
        order: &mut Vec<String>,
    ) -> Result<(), OntologyError> {
        match marks.get(id) {
            Some(Mark::Done) => return Ok(()),
            Some(Mark::Active) => {
                let start = stack.iter().position(|s| s == id).unwrap_or(0);
                let mut cycle = stack[start..].to_vec();
                cycle.push(id.to_string());
                return Err(OntologyError::Cycle(cycle));
            }
            None => {}
        }
        marks.insert(id.to_string(), Mark::Active);
        stack.push(id.to_string());
        for p in &concepts[id].parents {
            visit(p, concepts, marks, stack, order)?;
        }
        stack.pop();
        marks.insert(id.to_string(), Mark::Done);
        order.push(id.to_string());
        Ok(())
    }
    let mut marks = BTreeMap::new();
    let mut order = Vec::new();
    for id in concepts.keys() {
        visit(id, concepts, &mut marks, &mut Vec::new(), &mut order)?;
    }
    Ok(order)
}
