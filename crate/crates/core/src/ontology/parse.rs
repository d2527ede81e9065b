//! Line-oriented triple format.
//!
//! ```text
//! # comment
//! Move        label       "Move"
//! Deliver     subClassOf  Move
//! Deliver     altLabel    "dispatch"
//! Ship        sameAs      Transport
//! FullName    hasPart     GivenName
//! order-42    instanceOf  PurchaseOrder
//! order-42    attr:quantity  12
//! ```
//!
//! A subject becomes a concept when it appears with `label`, `altLabel`,
//! `subClassOf`, `hasPart` or `a Concept`. Any other predicate is a plain
//! relation whose endpoints must exist. Objects are bare tokens, quoted
//! strings, or (for `attr:` values) JSON scalars.

use std::collections::BTreeMap;
use std::path::Path;

use super::{Concept, Instance, Ontology, OntologyError, Provenance, Relation, HAS_PART};

pub fn load_ontology(path: impl AsRef<Path>) -> Result<Ontology, OntologyError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| OntologyError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_ontology(&text)
}

fn split_line(line: &str, lineno: usize) -> Result<Vec<String>, OntologyError> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        if c == '#' {
            break;
        }
        if c == '"' {
            chars.next();
            let mut s = String::new();
            let mut closed = false;
            while let Some(c) = chars.next() {
                match c {
                    '\\' => {
                        if let Some(n) = chars.next() {
                            s.push(n);
                        }
                    }
                    '"' => {
                        closed = true;
                        break;
                    }
                    _ => s.push(c),
                }
            }
            if !closed {
                return Err(OntologyError::Syntax { line: lineno, message: "unterminated string".into() });
            }
            out.push(format!("\"{s}"));
        } else {
            let mut s = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() {
                    break;
                }
                s.push(c);
                chars.next();
            }
            out.push(s);
        }
    }
    Ok(out)
}

fn unquote(tok: &str) -> &str {
    tok.strip_prefix('"').unwrap_or(tok)
}

pub fn parse_ontology(text: &str) -> Result<Ontology, OntologyError> {
    let mut concepts: BTreeMap<String, Concept> = BTreeMap::new();
    let mut instances: BTreeMap<String, Instance> = BTreeMap::new();
    let mut relations = Vec::new();
    let mut attrs: Vec<(usize, String, String, serde_json::Value)> = Vec::new();

    fn concept_mut<'a>(concepts: &'a mut BTreeMap<String, Concept>, id: &str) -> &'a mut Concept {
        concepts.entry(id.to_string()).or_insert_with(|| Concept {
            id: id.to_string(),
            label: id.to_string(),
            alt_labels: vec![],
            parents: vec![],
        })
    }

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let toks = split_line(line, lineno)?;
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 3 {
            return Err(OntologyError::Syntax {
                line: lineno,
                message: format!("expected `subject predicate object`, got {} terms", toks.len()),
            });
        }
        let (s, p, o) = (unquote(&toks[0]), toks[1].as_str(), toks[2].as_str());
        match p {
            "label" => concept_mut(&mut concepts, s).label = unquote(o).to_string(),
            "altLabel" => concept_mut(&mut concepts, s).alt_labels.push(unquote(o).to_string()),
            "subClassOf" => concept_mut(&mut concepts, s).parents.push(unquote(o).to_string()),
            "a" if unquote(o) == "Concept" => {
                concept_mut(&mut concepts, s);
            }
            HAS_PART => {
                concept_mut(&mut concepts, s);
                relations.push(Relation::new(s, HAS_PART, unquote(o)));
            }
            "instanceOf" => {
                instances.insert(
                    s.to_string(),
                    Instance {
                        id: s.to_string(),
                        concept: unquote(o).to_string(),
                        attributes: BTreeMap::new(),
                        provenance: Provenance::User,
                    },
                );
            }
            _ if p.starts_with("attr:") => {
                let value = if o.starts_with('"') {
                    serde_json::Value::String(unquote(o).to_string())
                } else {
                    serde_json::from_str(o).unwrap_or_else(|_| serde_json::Value::String(o.to_string()))
                };
                attrs.push((lineno, s.to_string(), p["attr:".len()..].to_string(), value));
            }
            _ => relations.push(Relation::new(s, p, unquote(o))),
        }
    }

    for (lineno, inst, name, value) in attrs {
        let Some(i) = instances.get_mut(&inst) else {
            return Err(OntologyError::Syntax {
                line: lineno,
                message: format!("attribute on undeclared instance `{inst}`"),
            });
        };
        if i.attributes.insert(name.clone(), value).is_some() {
            return Err(OntologyError::Syntax {
                line: lineno,
                message: format!("attribute `{name}` repeated on instance `{inst}`"),
            });
        }
    }

    for c in concepts.values_mut() {
        c.parents.sort();
        c.parents.dedup();
    }

    Ontology::new(concepts.into_values().collect(), relations, instances.into_values().collect())
}
