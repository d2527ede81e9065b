use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Instance, Relation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    User,
    Deduced,
    Event,
}

#[derive(Debug, Error, PartialEq)]
pub enum StoreError {
    #[error("instance `{id}` was entered by the user; {attempt:?} update refused")]
    ProvenanceConflict { id: String, attempt: Provenance },
}

/// Mediation instances and the relations between them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "StoreRepr")]
pub struct InstanceStore {
    instances: BTreeMap<String, Instance>,
    relations: BTreeSet<Relation>,
    /// Relations grouped by predicate.
    #[serde(skip)]
    by_predicate: BTreeMap<String, BTreeSet<Relation>>,
}

#[derive(Deserialize)]
struct StoreRepr {
    instances: BTreeMap<String, Instance>,
    relations: BTreeSet<Relation>,
}

impl From<StoreRepr> for InstanceStore {
    fn from(r: StoreRepr) -> Self {
        let mut s = InstanceStore { instances: r.instances, ..Default::default() };
        for rel in r.relations {
            s.insert_relation(rel);
        }
        s
    }
}

impl InstanceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: &str) -> Option<&Instance> {
        self.instances.get(id)
    }

    pub fn instances(&self) -> impl Iterator<Item = &Instance> {
        self.instances.values()
    }

    pub fn instances_of<'a>(&'a self, concept: &'a str) -> impl Iterator<Item = &'a Instance> + 'a {
        self.instances.values().filter(move |i| i.concept == concept)
    }

    pub fn relations(&self) -> impl Iterator<Item = &Relation> {
        self.relations.iter()
    }

    pub fn has_relation(&self, s: &str, p: &str, o: &str) -> bool {
        self.relations.contains(&Relation::new(s, p, o))
    }

    /// Relations with predicate `p`, narrowed by a known subject or object.
    pub fn triples<'a>(&'a self, s: Option<&'a str>, p: &'a str, o: Option<&'a str>) -> Box<dyn Iterator<Item = &'a Relation> + 'a> {
        let keep = move |r: &&Relation| o.is_none_or(|o| r.object == o);
        match s {
            Some(s) => {
                let from = Relation::new(s, p, "");
                Box::new(self.relations.range(from..).take_while(move |r| r.subject == s && r.predicate == p).filter(keep))
            }
            None => match self.by_predicate.get(p) {
                Some(set) => Box::new(set.iter().filter(keep)),
                None => Box::new(std::iter::empty()),
            },
        }
    }

    pub fn objects<'a>(&'a self, s: &'a str, p: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.triples(Some(s), p, None).map(|r| r.object.as_str())
    }

    pub fn subjects<'a>(&'a self, p: &'a str, o: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.triples(None, p, Some(o)).map(|r| r.subject.as_str())
    }

    pub fn len(&self) -> usize {
        self.instances.len() + self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty() && self.relations.is_empty()
    }

    /// Inserts an instance; returns whether the store changed. Existing
    /// user-provenance instances are never overwritten by deduced or event
    /// data.
    pub fn insert_instance(&mut self, inst: Instance) -> Result<bool, StoreError> {
        match self.instances.get(&inst.id) {
            Some(existing) if existing.concept == inst.concept && existing.attributes == inst.attributes => Ok(false),
            Some(existing) if existing.provenance == Provenance::User && inst.provenance != Provenance::User => {
                Err(StoreError::ProvenanceConflict { id: inst.id, attempt: inst.provenance })
            }
            _ => {
                self.instances.insert(inst.id.clone(), inst);
                Ok(true)
            }
        }
    }

    /// Declares `id` as an instance of `concept` unless it already exists
    /// with that concept.
    pub fn ensure_instance(&mut self, id: &str, concept: &str, provenance: Provenance) -> Result<bool, StoreError> {
        if let Some(existing) = self.instances.get(id) {
            if existing.concept == concept {
                return Ok(false);
            }
        }
        self.insert_instance(Instance {
            id: id.to_string(),
            concept: concept.to_string(),
            attributes: BTreeMap::new(),
            provenance,
        })
    }

    pub fn set_attribute(
        &mut self,
        id: &str,
        name: &str,
        value: serde_json::Value,
        provenance: Provenance,
    ) -> Result<bool, StoreError> {
        let Some(inst) = self.instances.get_mut(id) else {
            return Ok(false);
        };
        if inst.attributes.get(name) == Some(&value) {
            return Ok(false);
        }
        if inst.provenance == Provenance::User && provenance != Provenance::User {
            return Err(StoreError::ProvenanceConflict { id: id.to_string(), attempt: provenance });
        }
        inst.attributes.insert(name.to_string(), value);
        Ok(true)
    }

    pub fn insert_relation(&mut self, r: Relation) -> bool {
        if self.relations.contains(&r) {
            return false;
        }
        self.by_predicate.entry(r.predicate.clone()).or_default().insert(r.clone());
        self.relations.insert(r)
    }
}

/// Single-writer store with snapshot reads. Writers clone on write when a
/// snapshot is still held, so readers never observe a half-applied update.
#[derive(Debug, Clone, Default)]
pub struct SharedStore {
    inner: Arc<RwLock<Arc<InstanceStore>>>,
}

impl SharedStore {
    pub fn new(store: InstanceStore) -> Self {
        Self { inner: Arc::new(RwLock::new(Arc::new(store))) }
    }

    pub fn snapshot(&self) -> Arc<InstanceStore> {
        self.inner.read().expect("store lock poisoned").clone()
    }

    pub fn write<R>(&self, f: impl FnOnce(&mut InstanceStore) -> R) -> R {
        let mut guard = self.inner.write().expect("store lock poisoned");
        f(Arc::make_mut(&mut guard))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user(id: &str) -> Instance {
        Instance { id: id.into(), concept: "Order".into(), attributes: BTreeMap::new(), provenance: Provenance::User }
    }

    #[test]
    fn deduced_never_overwrites_user() {
        let mut s = InstanceStore::new();
        assert!(s.insert_instance(user("o1")).unwrap());
        let mut deduced = user("o1");
        deduced.concept = "Mediator".into();
        deduced.provenance = Provenance::Deduced;
        assert!(s.insert_instance(deduced).is_err());
        assert!(s.set_attribute("o1", "qty", serde_json::json!(3), Provenance::Event).is_err());
        assert_eq!(s.get("o1").unwrap().concept, "Order");
    }

    #[test]
    fn identical_reinsert_is_noop() {
        let mut s = InstanceStore::new();
        s.insert_instance(user("o1")).unwrap();
        assert!(!s.insert_instance(user("o1")).unwrap());
        assert!(!s.ensure_instance("o1", "Order", Provenance::Deduced).unwrap());
    }

    #[test]
    fn snapshots_are_stable_across_writes() {
        let shared = SharedStore::new(InstanceStore::new());
        let before = shared.snapshot();
        shared.write(|s| s.insert_relation(Relation::new("a", "p", "b")));
        assert!(before.is_empty());
        assert_eq!(shared.snapshot().len(), 1);
    }
}
