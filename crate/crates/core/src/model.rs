//! Collaborative network model: sub-networks, partners and their shared
//! functions, objectives, and business messages.
//!
//! The project file is a single TOML document carrying a `schema_version`.
//! Concept references are written either as a bare term (`"Deliver"`) or as a
//! table once they have been linked against the ontology
//! (`{ term = "ship goods", concept = "DeliverProduct", link = "near_by" }`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read model file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model file: {0}")]
    Parse(String),
    #[error("invalid model:\n{0}")]
    Invalid(ValidationReport),
}

/// How a model-side concept reference is tied to an ontology concept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Exact,
    SameAs,
    NearBy,
}

impl LinkKind {
    /// Lower is stronger: exact, then same_as, then near_by.
    pub fn priority(self) -> u8 {
        match self {
            LinkKind::Exact => 0,
            LinkKind::SameAs => 1,
            LinkKind::NearBy => 2,
        }
    }
}

impl fmt::Display for LinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkKind::Exact => "exact",
            LinkKind::SameAs => "same_as",
            LinkKind::NearBy => "near_by",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "ConceptRefRepr", into = "ConceptRefRepr")]
pub struct ConceptRef {
    /// The designer's wording.
    pub term: String,
    /// Resolved ontology concept, once linked.
    pub concept: Option<String>,
    pub link: Option<LinkKind>,
}

impl ConceptRef {
    pub fn term(term: impl Into<String>) -> Self {
        Self { term: term.into(), concept: None, link: None }
    }

    pub fn linked(term: impl Into<String>, concept: impl Into<String>, link: LinkKind) -> Self {
        Self { term: term.into(), concept: Some(concept.into()), link: Some(link) }
    }

    pub fn is_resolved(&self) -> bool {
        self.concept.is_some() && self.link.is_some()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ConceptRefRepr {
    Bare(String),
    Full {
        term: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        concept: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        link: Option<LinkKind>,
    },
}

impl From<ConceptRefRepr> for ConceptRef {
    fn from(r: ConceptRefRepr) -> Self {
        match r {
            ConceptRefRepr::Bare(term) => ConceptRef::term(term),
            ConceptRefRepr::Full { term, concept, link } => ConceptRef { term, concept, link },
        }
    }
}

impl From<ConceptRef> for ConceptRefRepr {
    fn from(r: ConceptRef) -> Self {
        if r.concept.is_none() && r.link.is_none() {
            ConceptRefRepr::Bare(r.term)
        } else {
            ConceptRefRepr::Full { term: r.term, concept: r.concept, link: r.link }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    #[serde(alias = "decisional", alias = "strategic")]
    Strategy,
    #[serde(alias = "operational")]
    Operation,
    Support,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 3] = [ObjectiveKind::Strategy, ObjectiveKind::Operation, ObjectiveKind::Support];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveKind::Strategy => "strategy",
            ObjectiveKind::Operation => "operation",
            ObjectiveKind::Support => "support",
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One field of a message or service schema.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    /// Semantic type: an ontology concept id.
    pub concept: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, concept: impl Into<String>) -> Self {
        Self { name: name.into(), concept: concept.into(), unit: None }
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        self.unit = Some(unit.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageDef {
    pub id: String,
    pub name: String,
    pub concept: ConceptRef,
    #[serde(default)]
    pub fields: Vec<FieldSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedFunction {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub outputs: Vec<String>,
    /// Functional concept first, then any further capability concepts.
    #[serde(default)]
    pub annotation: Vec<ConceptRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partner {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub functions: Vec<SharedFunction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubNetwork {
    pub id: String,
    pub name: String,
    pub partners: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub id: String,
    pub kind: ObjectiveKind,
    pub description: String,
    #[serde(default)]
    pub annotation: Vec<ConceptRef>,
    pub sub_network: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollaborationModel {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub network_id: String,
    pub name: String,
    /// Free-form collaborative context (location, season, ...).
    #[serde(default)]
    pub context: BTreeMap<String, String>,
    #[serde(default)]
    pub sub_networks: Vec<SubNetwork>,
    #[serde(default)]
    pub partners: Vec<Partner>,
    #[serde(default)]
    pub objectives: Vec<Objective>,
    #[serde(default)]
    pub messages: Vec<MessageDef>,
}

fn default_schema_version() -> u32 {
    MODEL_SCHEMA_VERSION
}

impl CollaborationModel {
    pub fn from_toml_str(s: &str) -> Result<Self, ModelError> {
        toml::from_str(s).map_err(|e| ModelError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("collaboration model always serializes")
    }

    pub fn partner(&self, id: &str) -> Option<&Partner> {
        self.partners.iter().find(|p| p.id == id)
    }

    pub fn message(&self, id: &str) -> Option<&MessageDef> {
        self.messages.iter().find(|m| m.id == id)
    }

    pub fn sub_network(&self, id: &str) -> Option<&SubNetwork> {
        self.sub_networks.iter().find(|s| s.id == id)
    }

    pub fn objective(&self, id: &str) -> Option<&Objective> {
        self.objectives.iter().find(|o| o.id == id)
    }

    /// Every shared function paired with the partner offering it.
    pub fn functions(&self) -> impl Iterator<Item = (&Partner, &SharedFunction)> {
        self.partners.iter().flat_map(|p| p.functions.iter().map(move |f| (p, f)))
    }

    pub fn function(&self, id: &str) -> Option<(&Partner, &SharedFunction)> {
        self.functions().find(|(_, f)| f.id == id)
    }

    /// Mutable access to every concept reference in the model, with its path.
    pub fn concept_refs_mut(&mut self) -> Vec<(String, &mut ConceptRef)> {
        let mut out = Vec::new();
        for (pi, p) in self.partners.iter_mut().enumerate() {
            for (fi, f) in p.functions.iter_mut().enumerate() {
                for (ai, a) in f.annotation.iter_mut().enumerate() {
                    out.push((format!("partners[{pi}].functions[{fi}].annotation[{ai}]"), a));
                }
            }
        }
        for (oi, o) in self.objectives.iter_mut().enumerate() {
            for (ai, a) in o.annotation.iter_mut().enumerate() {
                out.push((format!("objectives[{oi}].annotation[{ai}]"), a));
            }
        }
        for (mi, m) in self.messages.iter_mut().enumerate() {
            out.push((format!("messages[{mi}].concept"), &mut m.concept));
        }
        out
    }

    pub fn concept_refs(&self) -> Vec<(String, &ConceptRef)> {
        let mut out = Vec::new();
        for (pi, p) in self.partners.iter().enumerate() {
            for (fi, f) in p.functions.iter().enumerate() {
                for (ai, a) in f.annotation.iter().enumerate() {
                    out.push((format!("partners[{pi}].functions[{fi}].annotation[{ai}]"), a));
                }
            }
        }
        for (oi, o) in self.objectives.iter().enumerate() {
            for (ai, a) in o.annotation.iter().enumerate() {
                out.push((format!("objectives[{oi}].annotation[{ai}]"), a));
            }
        }
        for (mi, m) in self.messages.iter().enumerate() {
            out.push((format!("messages[{mi}].concept"), &m.concept));
        }
        out
    }

    /// Drops a partner, its functions, and its memberships.
    pub fn without_partner(&self, partner_id: &str) -> CollaborationModel {
        let mut m = self.clone();
        m.partners.retain(|p| p.id != partner_id);
        for sn in &mut m.sub_networks {
            sn.partners.retain(|p| p != partner_id);
        }
        m
    }

    /// Drops individual functions (e.g. reported unavailable).
    pub fn without_functions(&self, function_ids: &BTreeSet<String>) -> CollaborationModel {
        let mut m = self.clone();
        for p in &mut m.partners {
            p.functions.retain(|f| !function_ids.contains(&f.id));
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub path: String,
    pub rule: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    fn push(&mut self, path: impl Into<String>, rule: &str, message: impl Into<String>) {
        self.findings.push(Finding { path: path.into(), rule: rule.to_string(), message: message.into() });
    }

    pub fn rules(&self) -> BTreeSet<&str> {
        self.findings.iter().map(|f| f.rule.as_str()).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for finding in &self.findings {
            writeln!(f, "  [{}] {}: {}", finding.rule, finding.path, finding.message)?;
        }
        Ok(())
    }
}

pub mod rules {
    pub const SCHEMA_VERSION: &str = "schema-version";
    pub const UNIQUE_IDS: &str = "unique-ids";
    pub const SUB_NETWORKS_NONEMPTY: &str = "sub-networks-nonempty";
    pub const SUB_NETWORK_PARTNERS: &str = "sub-network-partners";
    pub const OBJECTIVE_SUB_NETWORK: &str = "objective-sub-network";
    pub const MESSAGE_REF: &str = "message-ref";
    pub const FUNCTION_ANNOTATION: &str = "function-annotation";
    pub const UNIQUE_FUNCTION_IDS: &str = "unique-function-ids";
    pub const MESSAGE_CONCEPT: &str = "message-concept";
}

/// Checks every structural invariant of the model. Pure.
pub fn validate_model(m: &CollaborationModel) -> ValidationReport {
    let mut report = ValidationReport::default();

    if m.schema_version != MODEL_SCHEMA_VERSION {
        report.push(
            "schema_version",
            rules::SCHEMA_VERSION,
            format!("unsupported schema version {} (expected {MODEL_SCHEMA_VERSION})", m.schema_version),
        );
    }

    let mut seen: BTreeMap<String, String> = BTreeMap::new();
    let mut check_id = |report: &mut ValidationReport, id: &str, path: String| {
        if let Some(first) = seen.get(id) {
            report.push(path, rules::UNIQUE_IDS, format!("identifier `{id}` already used at {first}"));
        } else {
            seen.insert(id.to_string(), path);
        }
    };
    check_id(&mut report, &m.network_id, "network_id".into());
    for (i, sn) in m.sub_networks.iter().enumerate() {
        check_id(&mut report, &sn.id, format!("sub_networks[{i}]"));
    }
    for (i, p) in m.partners.iter().enumerate() {
        check_id(&mut report, &p.id, format!("partners[{i}]"));
    }
    for (i, p) in m.partners.iter().enumerate() {
        let mut per_partner = BTreeSet::new();
        for (j, f) in p.functions.iter().enumerate() {
            if !per_partner.insert(f.id.as_str()) {
                report.push(
                    format!("partners[{i}].functions[{j}]"),
                    rules::UNIQUE_FUNCTION_IDS,
                    format!("function id `{}` repeated within partner `{}`", f.id, p.id),
                );
                continue;
            }
            check_id(&mut report, &f.id, format!("partners[{i}].functions[{j}]"));
        }
    }
    for (i, o) in m.objectives.iter().enumerate() {
        check_id(&mut report, &o.id, format!("objectives[{i}]"));
    }
    for (i, msg) in m.messages.iter().enumerate() {
        check_id(&mut report, &msg.id, format!("messages[{i}]"));
    }

    if m.sub_networks.is_empty() {
        report.push("sub_networks", rules::SUB_NETWORKS_NONEMPTY, "at least one sub-network is required");
    }

    let partner_ids: BTreeSet<&str> = m.partners.iter().map(|p| p.id.as_str()).collect();
    for (i, sn) in m.sub_networks.iter().enumerate() {
        let distinct: BTreeSet<&str> = sn.partners.iter().map(String::as_str).collect();
        for p in &distinct {
            if !partner_ids.contains(p) {
                report.push(
                    format!("sub_networks[{i}].partners"),
                    rules::SUB_NETWORK_PARTNERS,
                    format!("sub-network `{}` references unknown partner `{p}`", sn.id),
                );
            }
        }
        if distinct.len() < 2 {
            report.push(
                format!("sub_networks[{i}].partners"),
                rules::SUB_NETWORK_PARTNERS,
                format!("sub-network `{}` needs at least 2 distinct partners", sn.id),
            );
        }
    }

    let sn_ids: BTreeSet<&str> = m.sub_networks.iter().map(|s| s.id.as_str()).collect();
    for (i, o) in m.objectives.iter().enumerate() {
        if !sn_ids.contains(o.sub_network.as_str()) {
            report.push(
                format!("objectives[{i}].sub_network"),
                rules::OBJECTIVE_SUB_NETWORK,
                format!("objective `{}` references unknown sub-network `{}`", o.id, o.sub_network),
            );
        }
    }

    let msg_ids: BTreeSet<&str> = m.messages.iter().map(|x| x.id.as_str()).collect();
    for (pi, p) in m.partners.iter().enumerate() {
        for (fi, f) in p.functions.iter().enumerate() {
            for (dir, refs) in [("inputs", &f.inputs), ("outputs", &f.outputs)] {
                for r in refs {
                    if !msg_ids.contains(r.as_str()) {
                        report.push(
                            format!("partners[{pi}].functions[{fi}].{dir}"),
                            rules::MESSAGE_REF,
                            format!("function `{}` references unknown message `{r}`", f.id),
                        );
                    }
                }
            }
            if f.annotation.is_empty() {
                report.push(
                    format!("partners[{pi}].functions[{fi}].annotation"),
                    rules::FUNCTION_ANNOTATION,
                    format!("function `{}` carries no semantic annotation", f.id),
                );
            }
        }
    }

    report
}

/// Validation that additionally needs the ontology: message concepts must resolve.
pub fn validate_against(m: &CollaborationModel, o: &crate::ontology::Ontology) -> ValidationReport {
    let mut report = validate_model(m);
    for (i, msg) in m.messages.iter().enumerate() {
        let resolved = msg.concept.concept.as_deref().unwrap_or(&msg.concept.term);
        if o.concept(resolved).is_none() && o.lookup_label(&msg.concept.term).is_none() {
            report.push(
                format!("messages[{i}].concept"),
                rules::MESSAGE_CONCEPT,
                format!("message `{}` concept `{}` does not resolve in the ontology", msg.id, msg.concept.term),
            );
        }
    }
    report
}

pub fn parse_model(text: &str) -> Result<CollaborationModel, ModelError> {
    let m = CollaborationModel::from_toml_str(text)?;
    let report = validate_model(&m);
    if report.is_clean() {
        Ok(m)
    } else {
        Err(ModelError::Invalid(report))
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CollaborationModel, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
    parse_model(&text)
}

pub fn save_model(m: &CollaborationModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    std::fs::write(path, m.to_toml_string())
        .map_err(|source| ModelError::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
network_id = "net"
name = "Minimal"

[[sub_networks]]
id = "sn1"
name = "Main"
partners = ["p1", "p2"]

[[partners]]
id = "p1"
name = "Maker"

[[partners.functions]]
id = "f1"
name = "make goods"
outputs = ["m1"]
annotation = ["Manufacture"]

[[partners]]
id = "p2"
name = "Carrier"

[[partners.functions]]
id = "f2"
name = "ship goods"
inputs = ["m1"]
annotation = ["Transport"]

[[objectives]]
id = "o1"
kind = "operation"
description = "deliver product"
annotation = ["Deliver"]
sub_network = "sn1"

[[messages]]
id = "m1"
name = "goods"
concept = "Goods"
"#;

    #[test]
    fn minimal_model_loads() {
        let m = parse_model(MINIMAL).unwrap();
        assert_eq!(m.partners.len(), 2);
        assert_eq!(m.schema_version, MODEL_SCHEMA_VERSION);
        assert!(validate_model(&m).is_clean());
    }

    #[test]
    fn dangling_sub_network_is_named() {
        let text = MINIMAL.replace("sub_network = \"sn1\"", "sub_network = \"ghost\"");
        match parse_model(&text) {
            Err(ModelError::Invalid(report)) => {
                assert_eq!(report.findings.len(), 1);
                assert_eq!(report.findings[0].rule, rules::OBJECTIVE_SUB_NETWORK);
                assert!(report.findings[0].message.contains("ghost"));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_partner_id_is_one_finding() {
        let mut m = parse_model(MINIMAL).unwrap();
        let mut dup = m.partners[1].clone();
        dup.functions.clear();
        m.partners.push(dup);
        let report = validate_model(&m);
        assert_eq!(report.findings.len(), 1, "{report}");
        assert_eq!(report.findings[0].rule, rules::UNIQUE_IDS);
    }

    #[test]
    fn missing_annotation_is_reported() {
        let mut m = parse_model(MINIMAL).unwrap();
        m.partners[0].functions[0].annotation.clear();
        let report = validate_model(&m);
        assert!(report.rules().contains(rules::FUNCTION_ANNOTATION));
        assert!(report.findings.iter().any(|f| f.path == "partners[0].functions[0].annotation"));
    }

    #[test]
    fn decisional_is_normalized_to_strategy() {
        let text = MINIMAL.replace("kind = \"operation\"", "kind = \"decisional\"");
        let m = parse_model(&text).unwrap();
        assert_eq!(m.objectives[0].kind, ObjectiveKind::Strategy);
        assert!(m.to_toml_string().contains("kind = \"strategy\""));
    }

    #[test]
    fn empty_sub_networks_rejected() {
        let mut m = parse_model(MINIMAL).unwrap();
        m.sub_networks.clear();
        m.objectives.clear();
        assert!(validate_model(&m).rules().contains(rules::SUB_NETWORKS_NONEMPTY));
    }

    #[test]
    fn single_partner_sub_network_rejected() {
        let mut m = parse_model(MINIMAL).unwrap();
        m.sub_networks[0].partners = vec!["p1".into(), "p1".into()];
        assert!(validate_model(&m).rules().contains(rules::SUB_NETWORK_PARTNERS));
    }

    #[test]
    fn dangling_message_ref() {
        let mut m = parse_model(MINIMAL).unwrap();
        m.partners[1].functions[0].inputs.push("nope".into());
        let report = validate_model(&m);
        assert_eq!(report.rules(), BTreeSet::from([rules::MESSAGE_REF]));
    }

    #[test]
    fn linked_refs_round_trip() {
        let mut m = parse_model(MINIMAL).unwrap();
        m.objectives[0].annotation[0] = ConceptRef::linked("Deliver", "Deliver", LinkKind::Exact);
        let back = parse_model(&m.to_toml_string()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn validate_is_pure() {
        let m = parse_model(MINIMAL).unwrap();
        assert_eq!(validate_model(&m), validate_model(&m));
    }
}
