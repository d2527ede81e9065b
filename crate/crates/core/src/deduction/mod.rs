//! Process deduction: transfer the model into mediation instances, run the
//! five rule groups, select functions per objective and extract the process
//! cartography.

mod cartography;
pub mod rules;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CollaborationModel, ConceptRef, LinkKind, ObjectiveKind};
use crate::ontology::{InstanceStore, Ontology, Provenance, Relation, StoreError};

pub use cartography::{extract_cartography, Justification, MessageFlow, ProcessCartography, SubProcess};
pub use rules::{apply_group, RuleSet, TraceRecord};

/// Minimum objective/function similarity for a function to be selected.
pub const DEFAULT_SELECTION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DeductionError {
    #[error("rule definition: {0}")]
    Rule(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cyclic message dependency: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("objective `{0}` has no selected function and is not waived")]
    Unmatched(String),
    #[error("deduced process `{process}` is malformed: {issue}")]
    Malformed { process: String, issue: String },
}

pub fn subnetwork_id(id: &str) -> String {
    format!("subnetwork:{id}")
}
pub fn partner_id(id: &str) -> String {
    format!("partner:{id}")
}
pub fn function_id(id: &str) -> String {
    format!("function:{id}")
}
pub fn message_id(id: &str) -> String {
    format!("message:{id}")
}
pub fn objective_id(id: &str) -> String {
    format!("objective:{id}")
}

fn local(v: &str) -> &str {
    v.split_once(':').map_or(v, |(_, l)| l)
}

pub fn objective_concept(kind: ObjectiveKind) -> &'static str {
    match kind {
        ObjectiveKind::Strategy => "StrategyObjective",
        ObjectiveKind::Operation => "OperationObjective",
        ObjectiveKind::Support => "SupportObjective",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedFunction {
    pub function: String,
    pub partner: String,
    pub link: LinkKind,
    pub score: f64,
}

/// Functions chosen to achieve each objective.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub by_objective: BTreeMap<String, Vec<SelectedFunction>>,
    pub unmatched: BTreeSet<String>,
    #[serde(default)]
    pub waived: BTreeSet<String>,
}

impl Selection {
    /// Accepts an unmatched objective so extraction can proceed without it.
    pub fn waive(&mut self, objective: &str) {
        if self.unmatched.remove(objective) {
            self.waived.insert(objective.to_string());
        }
    }

    pub fn functions(&self) -> impl Iterator<Item = (&str, &SelectedFunction)> {
        self.by_objective.iter().flat_map(|(o, fs)| fs.iter().map(move |f| (o.as_str(), f)))
    }

    pub fn objective_of(&self, function: &str) -> Option<&str> {
        self.functions().find(|(_, f)| f.function == function).map(|(o, _)| o)
    }
}

/// The concept a reference stands for, with how strongly it is tied.
/// Unlinked references fall back to an exact or alternative label match.
pub fn resolve_ref(r: &ConceptRef, o: &Ontology) -> Option<(String, LinkKind)> {
    match (&r.concept, r.link) {
        (Some(c), Some(link)) if o.concept(c).is_some() => Some((c.clone(), link)),
        _ => o.lookup_label(&r.term).map(|(id, primary)| {
            (id.to_string(), if primary { LinkKind::Exact } else { LinkKind::SameAs })
        }),
    }
}

/// Assigns each function to the objective it serves best. Only partners of
/// the objective's sub-network contribute; the first annotation of a function
/// or objective is its functional concept. A pair's link kind is the weakest
/// of both references' links and the concept relation (identical → exact,
/// declared equivalent → same_as, otherwise near_by). Candidates are compared
/// by link kind, then similarity, then objective kind and id.
pub fn select_functions(m: &CollaborationModel, o: &Ontology, threshold: f64) -> Selection {
    let mut objectives: Vec<_> = m.objectives.iter().collect();
    objectives.sort_by_key(|ob| (ob.kind, ob.id.clone()));
    let mut sel = Selection::default();
    for ob in &objectives {
        sel.by_objective.insert(ob.id.clone(), vec![]);
    }
    for (p, f) in m.functions() {
        let Some((fc, flink)) = f.annotation.first().and_then(|r| resolve_ref(r, o)) else {
            continue;
        };
        let mut best: Option<(&str, LinkKind, f64)> = None;
        for ob in &objectives {
            let in_scope = m.sub_network(&ob.sub_network).is_some_and(|sn| sn.partners.contains(&p.id));
            let Some((oc, olink)) = ob.annotation.first().and_then(|r| resolve_ref(r, o)) else {
                continue;
            };
            if !in_scope {
                continue;
            }
            let score = o.similarity(&fc, &oc);
            if score < threshold {
                continue;
            }
            let relation = if fc == oc {
                LinkKind::Exact
            } else if o.are_equivalent(&fc, &oc) {
                LinkKind::SameAs
            } else {
                LinkKind::NearBy
            };
            let link = flink.max(olink).max(relation);
            let better = match best {
                None => true,
                Some((_, bl, bs)) => link < bl || (link == bl && score > bs),
            };
            if better {
                best = Some((&ob.id, link, score));
            }
        }
        if let Some((ob, link, score)) = best {
            sel.by_objective.get_mut(ob).expect("seeded").push(SelectedFunction {
                function: f.id.clone(),
                partner: p.id.clone(),
                link,
                score,
            });
        }
    }
    for (ob, fs) in sel.by_objective.iter_mut() {
        fs.sort_by(|a, b| {
            a.link
                .cmp(&b.link)
                .then(b.score.total_cmp(&a.score))
                .then_with(|| (&a.partner, &a.function).cmp(&(&b.partner, &b.function)))
        });
        if fs.is_empty() {
            sel.unmatched.insert(ob.clone());
        }
    }
    sel
}

/// Knowledge transfer: the model and the selection as user-provenance facts.
pub fn transfer(m: &CollaborationModel, selection: &Selection) -> Result<InstanceStore, DeductionError> {
    let mut s = InstanceStore::new();
    for sn in &m.sub_networks {
        let id = subnetwork_id(&sn.id);
        s.ensure_instance(&id, "SubNetwork", Provenance::User)?;
        for p in &sn.partners {
            s.insert_relation(Relation::new(&id, "hasPartner", partner_id(p)));
        }
    }
    for p in &m.partners {
        s.ensure_instance(&partner_id(&p.id), "Partner", Provenance::User)?;
        for f in &p.functions {
            let fid = function_id(&f.id);
            s.ensure_instance(&fid, "MainFunction", Provenance::User)?;
            s.insert_relation(Relation::new(partner_id(&p.id), "hasFunction", &fid));
            for msg in &f.inputs {
                s.insert_relation(Relation::new(&fid, "in", message_id(msg)));
            }
            for msg in &f.outputs {
                s.insert_relation(Relation::new(&fid, "out", message_id(msg)));
            }
        }
    }
    for msg in &m.messages {
        s.ensure_instance(&message_id(&msg.id), "BusinessMessage", Provenance::User)?;
    }
    for ob in &m.objectives {
        let id = objective_id(&ob.id);
        s.ensure_instance(&id, objective_concept(ob.kind), Provenance::User)?;
        s.insert_relation(Relation::new(&id, "objectiveOf", subnetwork_id(&ob.sub_network)));
    }
    for (ob, f) in selection.functions() {
        s.insert_relation(Relation::new(objective_id(ob), "generates", function_id(&f.function)));
    }
    Ok(s)
}

pub fn apply_rule_group_1(rules: &RuleSet, store: &mut InstanceStore) -> Result<Vec<TraceRecord>, DeductionError> {
    apply_group(rules, 1, store)
}

pub fn apply_rule_group_2(rules: &RuleSet, store: &mut InstanceStore) -> Result<Vec<TraceRecord>, DeductionError> {
    apply_group(rules, 2, store)
}

pub fn apply_rule_groups_3_to_5(
    rules: &RuleSet,
    store: &mut InstanceStore,
) -> Result<Vec<TraceRecord>, DeductionError> {
    let mut trace = Vec::new();
    for g in 3..=5 {
        trace.extend(apply_group(rules, g, store)?);
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mediator {
    pub id: String,
    pub sub_network: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OrderRel {
    pub id: String,
    pub producer: String,
    pub consumer: String,
    pub message: String,
    pub mediators: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediatorFunction {
    pub id: String,
    pub function: String,
    pub mediators: Vec<String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterMediatorFunction {
    pub id: String,
    pub order: String,
    pub from: Vec<String>,
    pub to: Vec<String>,
}

/// Deduced mediation instances, read back from the store. Model ids are
/// plain (no `kind:` prefix).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MediationInstances {
    pub mediators: Vec<Mediator>,
    pub relationships: Vec<OrderRel>,
    pub generated_functions: Vec<MediatorFunction>,
    pub inter_mediator_functions: Vec<InterMediatorFunction>,
    pub trace: Vec<TraceRecord>,
}

impl MediationInstances {
    pub fn from_store(s: &InstanceStore, trace: Vec<TraceRecord>) -> Self {
        let locals = |it: &mut dyn Iterator<Item = &str>| -> Vec<String> {
            let mut v: Vec<String> = it.map(|x| local(x).to_string()).collect();
            v.sort();
            v
        };
        let mediators = s
            .relations()
            .filter(|r| r.predicate == "hasMediator")
            .map(|r| Mediator { id: r.object.clone(), sub_network: local(&r.subject).to_string() })
            .collect();
        let relationships = s
            .instances_of("Order")
            .map(|i| {
                let one = |p: &str| s.objects(&i.id, p).next().map(|x| local(x).to_string()).unwrap_or_default();
                let mut mediators: Vec<String> = s.subjects("hasMediatorRelationship", &i.id).map(String::from).collect();
                mediators.sort();
                OrderRel {
                    id: i.id.clone(),
                    producer: one("producer"),
                    consumer: one("consumer"),
                    message: one("message"),
                    mediators,
                }
            })
            .collect();
        let generated_functions = s
            .instances_of("GeneratedMediatorFunction")
            .map(|i| {
                let mut mediators: Vec<String> = s.subjects("hasGeneratedFunction", &i.id).map(String::from).collect();
                mediators.sort();
                MediatorFunction {
                    id: i.id.clone(),
                    function: s.objects(&i.id, "wraps").next().map(|x| local(x).to_string()).unwrap_or_default(),
                    mediators,
                    inputs: locals(&mut s.objects(&i.id, "in")),
                    outputs: locals(&mut s.objects(&i.id, "out")),
                }
            })
            .collect();
        let inter_mediator_functions = s
            .instances_of("InterMediatorFunction")
            .map(|i| {
                let mut from: Vec<String> = s.objects(&i.id, "from").map(String::from).collect();
                let mut to: Vec<String> = s.objects(&i.id, "to").map(String::from).collect();
                from.sort();
                to.sort();
                InterMediatorFunction {
                    id: i.id.clone(),
                    order: s.objects(&i.id, "realizes").next().unwrap_or_default().to_string(),
                    from,
                    to,
                }
            })
            .collect();
        Self { mediators, relationships, generated_functions, inter_mediator_functions, trace }
    }
}

/// Transfer plus all five rule groups.
pub fn deduce_instances(
    m: &CollaborationModel,
    selection: &Selection,
    rules: &RuleSet,
) -> Result<(InstanceStore, MediationInstances), DeductionError> {
    let mut store = transfer(m, selection)?;
    let mut trace = apply_rule_group_1(rules, &mut store)?;
    trace.extend(apply_rule_group_2(rules, &mut store)?);
    trace.extend(apply_rule_groups_3_to_5(rules, &mut store)?);
    let inst = MediationInstances::from_store(&store, trace);
    Ok((store, inst))
}
