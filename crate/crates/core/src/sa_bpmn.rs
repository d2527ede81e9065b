//! SA-BPMN: a BPMN 2.0 subset with semantic annotations on activities.
//!
//! Each annotated node carries, inside `bpmn:extensionElements`:
//!
//! ```xml
//! <sa:SemanticDetails>
//!   <sa:concept ref="Transport"/>
//! </sa:SemanticDetails>
//! <sa:SemanticElements>
//!   <sa:element direction="input" message="shipping_request" concept="ShippingRequest"/>
//! </sa:SemanticElements>
//! ```
//!
//! with `sa` bound to [`SA_NS`]. Concept references are kept as written and
//! resolved against an ontology only when matching. Supported elements:
//! process, lane set, start/end event, task, call activity, exclusive and
//! parallel gateway, sequence flow (with condition), collaboration message
//! flow. Diagram interchange elements are skipped; anything else in the BPMN
//! namespace is rejected.

use std::collections::BTreeMap;

use quick_xml::events::attributes::Attribute;
use quick_xml::events::{BytesDecl, BytesEnd, BytesStart, BytesText, Event};
use quick_xml::name::ResolveResult;
use quick_xml::reader::NsReader;
use quick_xml::Writer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deduction::ProcessCartography;
use crate::graph::{Edge, Node, NodeKind, ProcessGraph};
use crate::model::{CollaborationModel, ConceptRef};

pub const BPMN_NS: &str = "http://www.omg.org/spec/BPMN/20100524/MODEL";
pub const SA_NS: &str = "urn:mediate:sa-bpmn:1.0";

#[derive(Debug, Error, PartialEq)]
pub enum SaBpmnError {
    #[error("malformed XML: {0}")]
    Xml(String),
    #[error("unsupported BPMN element `{0}`")]
    Unsupported(String),
    #[error("malformed annotation on `{node}`: {message}")]
    Annotation { node: String, message: String },
    #[error("`{element}` is missing attribute `{attribute}`")]
    MissingAttribute { element: String, attribute: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Input,
    Output,
}

impl Direction {
    fn as_str(self) -> &'static str {
        match self {
            Direction::Input => "input",
            Direction::Output => "output",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SemanticElement {
    pub message: String,
    pub direction: Direction,
    pub concept: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SemanticAnnotation {
    /// Functional requirement concepts.
    pub details: Vec<String>,
    /// Concepts of the messages the activity consumes and produces.
    pub elements: Vec<SemanticElement>,
}

impl SemanticAnnotation {
    pub fn concepts(&self, direction: Direction) -> impl Iterator<Item = &SemanticElement> {
        self.elements.iter().filter(move |e| e.direction == direction)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MessageFlowRef {
    pub id: String,
    pub source: String,
    pub target: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaBpmnDocument {
    pub id: String,
    pub processes: Vec<ProcessGraph>,
    pub annotations: BTreeMap<String, SemanticAnnotation>,
    pub message_flows: Vec<MessageFlowRef>,
}

impl SaBpmnDocument {
    pub fn node(&self, id: &str) -> Option<(&ProcessGraph, &Node)> {
        self.processes.iter().find_map(|p| p.node(id).map(|n| (p, n)))
    }

    /// Annotation keys that do not name a task.
    pub fn misplaced_annotations(&self) -> Vec<&str> {
        self.annotations
            .keys()
            .filter(|k| !matches!(self.node(k), Some((_, n)) if matches!(n.kind, NodeKind::Task { .. })))
            .map(String::as_str)
            .collect()
    }

    pub fn without_annotations(&self) -> Self {
        Self { annotations: BTreeMap::new(), ..self.clone() }
    }
}

fn ref_string(r: &ConceptRef) -> String {
    r.concept.clone().unwrap_or_else(|| r.term.clone())
}

/// Wraps a cartography as a document; every task is annotated from its
/// function's annotation and message concepts.
pub fn document_from_cartography(c: &ProcessCartography, m: &CollaborationModel) -> SaBpmnDocument {
    let processes: Vec<ProcessGraph> = c.graphs().cloned().collect();
    let mut annotations = BTreeMap::new();
    for g in &processes {
        for (node, function) in g.tasks() {
            let Some((_, f)) = m.function(function) else { continue };
            let details = f.annotation.first().map(ref_string).into_iter().collect();
            let mut elements = Vec::new();
            for (dir, msgs) in [(Direction::Input, &f.inputs), (Direction::Output, &f.outputs)] {
                for msg in msgs {
                    let concept = m.message(msg).map(|d| ref_string(&d.concept)).unwrap_or_default();
                    elements.push(SemanticElement { message: msg.clone(), direction: dir, concept });
                }
            }
            annotations.insert(node.id.clone(), SemanticAnnotation { details, elements });
        }
    }
    let message_flows = c
        .message_flows
        .iter()
        .enumerate()
        .map(|(i, f)| MessageFlowRef {
            id: format!("mf{}", i + 1),
            source: f.from_node.clone(),
            target: f.to_node.clone(),
            message: f.message.clone(),
        })
        .collect();
    SaBpmnDocument { id: format!("{}_definitions", m.network_id), processes, annotations, message_flows }
}

fn escape(s: &str, attribute: bool) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' if attribute => out.push_str("&quot;"),
            '\'' if attribute => out.push_str("&apos;"),
            '\t' if attribute => out.push_str("&#9;"),
            '\n' if attribute => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            c => out.push(c),
        }
    }
    out
}

fn element<'a>(name: &'a str, attrs: &[(&str, &str)]) -> BytesStart<'a> {
    let mut e = BytesStart::new(name);
    for (k, v) in attrs {
        let v = escape(v, true);
        e.push_attribute(Attribute::from((k.as_bytes(), v.as_bytes())));
    }
    e
}

type W = Writer<Vec<u8>>;

fn put(w: &mut W, ev: Event<'_>) {
    w.write_event(ev).expect("writing to a Vec cannot fail");
}

fn kind_tag(kind: &NodeKind) -> &'static str {
    match kind {
        NodeKind::Start => "bpmn:startEvent",
        NodeKind::End => "bpmn:endEvent",
        NodeKind::Task { .. } => "bpmn:task",
        NodeKind::Call { .. } => "bpmn:callActivity",
        NodeKind::Parallel => "bpmn:parallelGateway",
        NodeKind::Exclusive => "bpmn:exclusiveGateway",
    }
}

fn write_annotation(w: &mut W, a: &SemanticAnnotation) {
    put(w, Event::Start(element("bpmn:extensionElements", &[])));
    put(w, Event::Start(element("sa:SemanticDetails", &[])));
    for c in &a.details {
        put(w, Event::Empty(element("sa:concept", &[("ref", c)])));
    }
    put(w, Event::End(BytesEnd::new("sa:SemanticDetails")));
    put(w, Event::Start(element("sa:SemanticElements", &[])));
    for e in &a.elements {
        put(
            w,
            Event::Empty(element(
                "sa:element",
                &[("direction", e.direction.as_str()), ("message", &e.message), ("concept", &e.concept)],
            )),
        );
    }
    put(w, Event::End(BytesEnd::new("sa:SemanticElements")));
    put(w, Event::End(BytesEnd::new("bpmn:extensionElements")));
}

fn write_process(w: &mut W, g: &ProcessGraph, annotations: &BTreeMap<String, SemanticAnnotation>) {
    put(w, Event::Start(element("bpmn:process", &[("id", &g.id), ("name", &g.name), ("isExecutable", "true")])));
    let mut lanes: Vec<(&str, Vec<&str>)> = Vec::new();
    for n in &g.nodes {
        if let Some(lane) = &n.lane {
            match lanes.iter_mut().find(|(l, _)| l == lane) {
                Some((_, members)) => members.push(&n.id),
                None => lanes.push((lane, vec![&n.id])),
            }
        }
    }
    if !lanes.is_empty() {
        let set_id = format!("{}_lanes", g.id);
        put(w, Event::Start(element("bpmn:laneSet", &[("id", &set_id)])));
        for (i, (lane, members)) in lanes.iter().enumerate() {
            let lane_id = format!("{}_lane{}", g.id, i + 1);
            put(w, Event::Start(element("bpmn:lane", &[("id", &lane_id), ("name", lane)])));
            for m in members {
                put(w, Event::Start(element("bpmn:flowNodeRef", &[])));
                put(w, Event::Text(BytesText::from_escaped(escape(m, false))));
                put(w, Event::End(BytesEnd::new("bpmn:flowNodeRef")));
            }
            put(w, Event::End(BytesEnd::new("bpmn:lane")));
        }
        put(w, Event::End(BytesEnd::new("bpmn:laneSet")));
    }
    for n in &g.nodes {
        let tag = kind_tag(&n.kind);
        let mut attrs: Vec<(&str, &str)> = vec![("id", &n.id)];
        if !n.name.is_empty() {
            attrs.push(("name", &n.name));
        }
        match &n.kind {
            NodeKind::Task { function } => attrs.push(("sa:function", function)),
            NodeKind::Call { process } => attrs.push(("calledElement", process)),
            _ => {}
        }
        if let Some(e) = g.outgoing(&n.id).find(|e| e.default) {
            attrs.push(("default", &e.id));
        }
        match annotations.get(&n.id) {
            Some(a) => {
                put(w, Event::Start(element(tag, &attrs)));
                write_annotation(w, a);
                put(w, Event::End(BytesEnd::new(tag)));
            }
            None => put(w, Event::Empty(element(tag, &attrs))),
        }
    }
    for e in &g.edges {
        let attrs = [("id", e.id.as_str()), ("sourceRef", e.from.as_str()), ("targetRef", e.to.as_str())];
        match &e.condition {
            Some(c) => {
                put(w, Event::Start(element("bpmn:sequenceFlow", &attrs)));
                put(w, Event::Start(element("bpmn:conditionExpression", &[])));
                put(w, Event::Text(BytesText::from_escaped(escape(c, false))));
                put(w, Event::End(BytesEnd::new("bpmn:conditionExpression")));
                put(w, Event::End(BytesEnd::new("bpmn:sequenceFlow")));
            }
            None => put(w, Event::Empty(element("bpmn:sequenceFlow", &attrs))),
        }
    }
    put(w, Event::End(BytesEnd::new("bpmn:process")));
}

/// Serializes a document. Equal documents give equal bytes.
pub fn export_sa_bpmn(doc: &SaBpmnDocument) -> Vec<u8> {
    let mut w = Writer::new_with_indent(Vec::new(), b' ', 2);
    put(&mut w, Event::Decl(BytesDecl::new("1.0", Some("UTF-8"), None)));
    put(
        &mut w,
        Event::Start(element(
            "bpmn:definitions",
            &[("xmlns:bpmn", BPMN_NS), ("xmlns:sa", SA_NS), ("id", &doc.id), ("targetNamespace", "urn:mediate:process")],
        )),
    );
    if !doc.message_flows.is_empty() {
        put(&mut w, Event::Start(element("bpmn:collaboration", &[("id", &format!("{}_collaboration", doc.id))])));
        for p in &doc.processes {
            put(&mut w, Event::Empty(element("bpmn:participant", &[("id", &format!("{}_participant", p.id)), ("processRef", &p.id)])));
        }
        for f in &doc.message_flows {
            put(
                &mut w,
                Event::Empty(element(
                    "bpmn:messageFlow",
                    &[("id", &f.id), ("sourceRef", &f.source), ("targetRef", &f.target), ("sa:message", &f.message)],
                )),
            );
        }
        put(&mut w, Event::End(BytesEnd::new("bpmn:collaboration")));
    }
    for p in &doc.processes {
        write_process(&mut w, p, &doc.annotations);
    }
    put(&mut w, Event::End(BytesEnd::new("bpmn:definitions")));
    let mut out = w.into_inner();
    out.push(b'\n');
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ns {
    Bpmn,
    Sa,
    Other,
    None,
}

#[derive(Debug)]
enum Ctx {
    Definitions,
    Collaboration,
    Process,
    LaneSet,
    Lane(String),
    FlowNodeRef(String, String),
    Node(String),
    Extension(String),
    Details(String),
    Elements(String),
    Flow,
    Condition(String),
    Leaf,
}

struct Importer {
    doc: SaBpmnDocument,
    stack: Vec<Ctx>,
    skip: usize,
    lanes: BTreeMap<String, String>,
    defaults: Vec<String>,
}

fn missing(element: &str, attribute: &str) -> SaBpmnError {
    SaBpmnError::MissingAttribute { element: element.into(), attribute: attribute.into() }
}

impl Importer {
    fn process(&mut self) -> &mut ProcessGraph {
        self.doc.processes.last_mut().expect("inside a process")
    }

    fn open(&mut self, ns: Ns, local: &str, attrs: &BTreeMap<String, String>) -> Result<(), SaBpmnError> {
        let get = |k: &str| attrs.get(k).cloned();
        let req = |k: &str| get(k).ok_or_else(|| missing(local, k));
        if matches!(ns, Ns::Other | Ns::None) {
            self.skip = 1;
            return Ok(());
        }
        let ctx = match (self.stack.last(), ns, local) {
            (None, Ns::Bpmn, "definitions") => {
                self.doc.id = get("id").unwrap_or_default();
                Ctx::Definitions
            }
            (Some(Ctx::Definitions), Ns::Bpmn, "collaboration") => Ctx::Collaboration,
            (Some(Ctx::Collaboration), Ns::Bpmn, "participant") => Ctx::Leaf,
            (Some(Ctx::Collaboration), Ns::Bpmn, "messageFlow") => {
                self.doc.message_flows.push(MessageFlowRef {
                    id: req("id")?,
                    source: req("sourceRef")?,
                    target: req("targetRef")?,
                    message: get("sa:message").unwrap_or_default(),
                });
                Ctx::Leaf
            }
            (Some(Ctx::Definitions), Ns::Bpmn, "process") => {
                self.doc.processes.push(ProcessGraph::new(req("id")?, get("name").unwrap_or_default()));
                Ctx::Process
            }
            (Some(Ctx::Process), Ns::Bpmn, "laneSet") => Ctx::LaneSet,
            (Some(Ctx::LaneSet), Ns::Bpmn, "lane") => Ctx::Lane(get("name").unwrap_or_default()),
            (Some(Ctx::Lane(l)), Ns::Bpmn, "flowNodeRef") => Ctx::FlowNodeRef(l.clone(), String::new()),
            (Some(Ctx::Process), Ns::Bpmn, tag @ ("startEvent" | "endEvent" | "task" | "callActivity" | "parallelGateway" | "exclusiveGateway")) => {
                let id = req("id")?;
                let kind = match tag {
                    "startEvent" => NodeKind::Start,
                    "endEvent" => NodeKind::End,
                    "task" => NodeKind::Task { function: get("sa:function").unwrap_or_else(|| id.clone()) },
                    "callActivity" => NodeKind::Call { process: req("calledElement")? },
                    "parallelGateway" => NodeKind::Parallel,
                    _ => NodeKind::Exclusive,
                };
                if let Some(d) = get("default") {
                    self.defaults.push(d);
                }
                self.process().nodes.push(Node { id: id.clone(), name: get("name").unwrap_or_default(), kind, lane: None });
                Ctx::Node(id)
            }
            (Some(Ctx::Process), Ns::Bpmn, "sequenceFlow") => {
                let edge = Edge { id: req("id")?, from: req("sourceRef")?, to: req("targetRef")?, condition: None, default: false };
                self.process().edges.push(edge);
                Ctx::Flow
            }
            (Some(Ctx::Flow), Ns::Bpmn, "conditionExpression") => Ctx::Condition(String::new()),
            (Some(Ctx::Node(n)), Ns::Bpmn, "extensionElements") => Ctx::Extension(n.clone()),
            (Some(Ctx::Extension(n)), Ns::Sa, "SemanticDetails") => {
                self.doc.annotations.entry(n.clone()).or_default();
                Ctx::Details(n.clone())
            }
            (Some(Ctx::Extension(n)), Ns::Sa, "SemanticElements") => {
                self.doc.annotations.entry(n.clone()).or_default();
                Ctx::Elements(n.clone())
            }
            (Some(Ctx::Details(n)), Ns::Sa, "concept") => {
                let n = n.clone();
                let c = get("ref").ok_or_else(|| SaBpmnError::Annotation { node: n.clone(), message: "concept without ref".into() })?;
                self.doc.annotations.get_mut(&n).expect("opened").details.push(c);
                Ctx::Leaf
            }
            (Some(Ctx::Elements(n)), Ns::Sa, "element") => {
                let n = n.clone();
                let bad = |message: &str| SaBpmnError::Annotation { node: n.clone(), message: message.into() };
                let direction = match get("direction").as_deref() {
                    Some("input") => Direction::Input,
                    Some("output") => Direction::Output,
                    _ => return Err(bad("element direction must be input or output")),
                };
                let message = get("message").ok_or_else(|| bad("element without message"))?;
                let concept = get("concept").ok_or_else(|| bad("element without concept"))?;
                self.doc.annotations.get_mut(&n).expect("opened").elements.push(SemanticElement { message, direction, concept });
                Ctx::Leaf
            }
            (Some(Ctx::Extension(n) | Ctx::Details(n) | Ctx::Elements(n)), Ns::Sa, other) => {
                return Err(SaBpmnError::Annotation { node: n.clone(), message: format!("unknown element `{other}`") })
            }
            (Some(Ctx::Extension(_)), Ns::Bpmn, _) => {
                self.skip = 1;
                return Ok(());
            }
            (_, _, other) => return Err(SaBpmnError::Unsupported(other.to_string())),
        };
        self.stack.push(ctx);
        Ok(())
    }

    fn text(&mut self, t: &str) {
        match self.stack.last_mut() {
            Some(Ctx::Condition(s)) | Some(Ctx::FlowNodeRef(_, s)) => s.push_str(t),
            _ => {}
        }
    }

    fn close(&mut self) {
        match self.stack.pop() {
            Some(Ctx::Condition(s)) => {
                if let Some(e) = self.process().edges.last_mut() {
                    e.condition = Some(s);
                }
            }
            Some(Ctx::FlowNodeRef(lane, node)) => {
                self.lanes.insert(node.trim().to_string(), lane);
            }
            Some(Ctx::Process) => {
                let lanes = std::mem::take(&mut self.lanes);
                let defaults = std::mem::take(&mut self.defaults);
                let p = self.process();
                for n in &mut p.nodes {
                    n.lane = lanes.get(&n.id).cloned();
                }
                for e in &mut p.edges {
                    e.default = defaults.contains(&e.id);
                }
            }
            _ => {}
        }
    }
}

/// Parses a document in the supported subset.
pub fn import_sa_bpmn(xml: &[u8]) -> Result<SaBpmnDocument, SaBpmnError> {
    let text = std::str::from_utf8(xml).map_err(|e| SaBpmnError::Xml(e.to_string()))?;
    let mut reader = NsReader::from_str(text);
    let mut imp = Importer { doc: SaBpmnDocument::default(), stack: vec![], skip: 0, lanes: BTreeMap::new(), defaults: vec![] };
    loop {
        let (ns, ev) = reader.read_resolved_event().map_err(|e| SaBpmnError::Xml(e.to_string()))?;
        let ns = match ns {
            ResolveResult::Bound(n) if n.as_ref() == BPMN_NS.as_bytes() => Ns::Bpmn,
            ResolveResult::Bound(n) if n.as_ref() == SA_NS.as_bytes() => Ns::Sa,
            ResolveResult::Bound(_) | ResolveResult::Unknown(_) => Ns::Other,
            ResolveResult::Unbound => Ns::None,
        };
        match ev {
            Event::Start(ref e) | Event::Empty(ref e) => {
                let empty = matches!(ev, Event::Empty(_));
                if imp.skip > 0 {
                    if !empty {
                        imp.skip += 1;
                    }
                    continue;
                }
                let mut attrs = BTreeMap::new();
                for a in e.attributes() {
                    let a = a.map_err(|e| SaBpmnError::Xml(e.to_string()))?;
                    let value = a.unescape_value().map_err(|e| SaBpmnError::Xml(e.to_string()))?.into_owned();
                    let (res, local) = reader.resolve_attribute(a.key);
                    let local = String::from_utf8_lossy(local.as_ref()).into_owned();
                    let key = match res {
                        ResolveResult::Bound(n) if n.as_ref() == SA_NS.as_bytes() => format!("sa:{local}"),
                        ResolveResult::Unbound => local,
                        _ => continue,
                    };
                    attrs.insert(key, value);
                }
                let local = String::from_utf8_lossy(e.local_name().as_ref()).into_owned();
                imp.open(ns, &local, &attrs)?;
                if empty {
                    if imp.skip > 0 {
                        imp.skip = 0;
                    } else {
                        imp.close();
                    }
                }
            }
            Event::End(_) => {
                if imp.skip > 0 {
                    imp.skip -= 1;
                } else {
                    imp.close();
                }
            }
            Event::Text(t) if imp.skip == 0 => {
                let s = t.decode().map_err(|e| SaBpmnError::Xml(e.to_string()))?;
                imp.text(&s);
            }
            Event::GeneralRef(r) if imp.skip == 0 => {
                let resolved = match r.resolve_char_ref().map_err(|e| SaBpmnError::Xml(e.to_string()))? {
                    Some(c) => c.to_string(),
                    None => match r.decode().map_err(|e| SaBpmnError::Xml(e.to_string()))?.as_ref() {
                        "amp" => "&".into(),
                        "lt" => "<".into(),
                        "gt" => ">".into(),
                        "quot" => "\"".into(),
                        "apos" => "'".into(),
                        other => return Err(SaBpmnError::Xml(format!("unknown entity `{other}`"))),
                    },
                };
                imp.text(&resolved);
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if imp.doc.processes.is_empty() && imp.doc.id.is_empty() {
        return Err(SaBpmnError::Xml("no bpmn:definitions element".into()));
    }
    Ok(imp.doc)
}
