//! Best-effort WS-BPEL 2.0 export for interchange.
//!
//! The graph becomes one `flow` whose control links mirror the sequence
//! flows. Tasks become `invoke`s (a `sequence` of them for compositions);
//! gateways become `empty` activities with transition and join conditions.

use std::fmt::Write;

use quick_xml::escape::escape;

use super::ExecutableWorkflow;
use crate::graph::NodeKind;

const BPEL_NS: &str = "http://docs.oasis-open.org/wsbpel/2.0/process/executable";

fn link_name(edge: &str) -> String {
    edge.chars().map(|c| if c.is_alphanumeric() || c == '_' { c } else { '_' }).collect()
}

pub fn export_bpel(wf: &ExecutableWorkflow) -> String {
    let g = &wf.graph;
    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<process name="{}" targetNamespace="urn:mediate:workflow:{}" xmlns="{BPEL_NS}">"#,
        escape(wf.id.as_str()),
        escape(wf.id.as_str())
    );
    let services = wf.services();
    if !services.is_empty() {
        out.push_str("  <partnerLinks>\n");
        for s in &services {
            let _ = writeln!(out, r#"    <partnerLink name="{}" partnerLinkType="{}"/>"#, escape(*s), escape(*s));
        }
        out.push_str("  </partnerLinks>\n");
    }
    out.push_str("  <flow>\n    <links>\n");
    for e in &g.edges {
        let _ = writeln!(out, r#"      <link name="{}"/>"#, link_name(&e.id));
    }
    out.push_str("    </links>\n");
    for n in &g.nodes {
        let incoming: Vec<_> = g.incoming(&n.id).collect();
        let outgoing: Vec<_> = g.outgoing(&n.id).collect();
        let mut links = String::new();
        if !incoming.is_empty() {
            links.push_str("        <targets>\n");
            if matches!(n.kind, NodeKind::Parallel) && incoming.len() > 1 {
                let cond = incoming.iter().map(|e| format!("${}", link_name(&e.id))).collect::<Vec<_>>().join(" and ");
                let _ = writeln!(links, "          <joinCondition>{}</joinCondition>", escape(cond.as_str()));
            }
            for e in &incoming {
                let _ = writeln!(links, r#"          <target linkName="{}"/>"#, link_name(&e.id));
            }
            links.push_str("        </targets>\n");
        }
        if !outgoing.is_empty() {
            links.push_str("        <sources>\n");
            let choice = matches!(n.kind, NodeKind::Exclusive) && outgoing.len() > 1;
            for (i, e) in outgoing.iter().enumerate() {
                let cond = match (&e.condition, choice) {
                    (_, false) => None,
                    (Some(c), true) => Some(c.clone()),
                    (None, true) if e.default || (i == 0 && !outgoing.iter().any(|o| o.default)) => {
                        let others: Vec<String> =
                            outgoing.iter().filter_map(|o| o.condition.as_ref()).map(|c| format!("({c})")).collect();
                        Some(if others.is_empty() { "true()".into() } else { format!("not({})", others.join(" or ")) })
                    }
                    (None, true) => Some("false()".into()),
                };
                match cond {
                    Some(c) => {
                        let _ = writeln!(
                            links,
                            "          <source linkName=\"{}\"><transitionCondition>{}</transitionCondition></source>",
                            link_name(&e.id),
                            escape(c.as_str())
                        );
                    }
                    None => {
                        let _ = writeln!(links, r#"          <source linkName="{}"/>"#, link_name(&e.id));
                    }
                }
            }
            links.push_str("        </sources>\n");
        }
        let name = escape(n.id.as_str());
        match &n.kind {
            NodeKind::Start => {
                let _ = write!(out, "      <receive name=\"{name}\" createInstance=\"yes\">\n{links}      </receive>\n");
            }
            NodeKind::Task { .. } => {
                let bound: Vec<&str> = wf.tasks.get(&n.id).map(|t| t.services.iter().map(|s| s.service.as_str()).collect()).unwrap_or_default();
                if bound.len() == 1 {
                    let s = escape(bound[0]);
                    let _ = write!(out, "      <invoke name=\"{name}\" partnerLink=\"{s}\" operation=\"execute\">\n{links}      </invoke>\n");
                } else {
                    let _ = write!(out, "      <sequence name=\"{name}\">\n{links}");
                    for s in bound {
                        let s = escape(s);
                        let _ = writeln!(out, "        <invoke name=\"{name}_{s}\" partnerLink=\"{s}\" operation=\"execute\"/>");
                    }
                    out.push_str("      </sequence>\n");
                }
            }
            _ => {
                let _ = write!(out, "      <empty name=\"{name}\">\n{links}      </empty>\n");
            }
        }
    }
    out.push_str("  </flow>\n</process>\n");
    out
}
