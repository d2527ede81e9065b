//! CEP-lite: declarative rules turning events into twin-model updates.
//!
//! A rule matches events by source, type and attribute equality. Matching
//! events are buffered per correlation key; once `count` of them fall within
//! `window_ms` the rule fires once and the buffer is cleared. Buffered
//! events older than the window expire.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AgilityError, Category, Side, TwinModel};
use crate::events::{Event, EventSource};

pub const SEED_CEP_RULES: &str = include_str!("../../data/cep.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Insert,
    Delete,
    Set,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub op: Op,
    /// Instance id template, e.g. `task:{subject}` or `service:{attr.service}`.
    #[serde(default)]
    pub target: Option<String>,
    /// Instead of a target: every instance whose attributes equal these
    /// (templated) values.
    #[serde(default, rename = "match")]
    pub matching: BTreeMap<String, String>,
    #[serde(default)]
    pub attribute: Option<String>,
    #[serde(default)]
    pub value: Option<Value>,
    /// Event attribute supplying the value.
    #[serde(default)]
    pub value_from: Option<String>,
    /// Category of instances created by this action.
    #[serde(default)]
    pub category: Option<Category>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CepRule {
    pub id: String,
    pub source: EventSource,
    #[serde(rename = "type")]
    pub kind: String,
    /// Event attributes that must equal these values.
    #[serde(default)]
    pub when: BTreeMap<String, Value>,
    /// Event attribute correlating events; the subject when absent.
    #[serde(default)]
    pub correlate: Option<String>,
    #[serde(default = "one")]
    pub count: usize,
    /// 0 means unbounded.
    #[serde(default)]
    pub window_ms: u64,
    pub action: Action,
}

fn one() -> usize {
    1
}

impl CepRule {
    fn matches(&self, e: &Event) -> bool {
        e.source == self.source && e.kind == self.kind && self.when.iter().all(|(k, v)| e.attributes.get(k) == Some(v))
    }

    fn key(&self, e: &Event) -> String {
        match &self.correlate {
            Some(a) => e.attributes.get(a).map(value_text).unwrap_or_default(),
            None => e.subject.clone(),
        }
    }

    /// The model this rule writes to.
    pub fn side(&self) -> Side {
        Side::of(self.source)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CepRules {
    #[serde(rename = "rule", default)]
    pub rules: Vec<CepRule>,
}

impl CepRules {
    pub fn seed() -> Self {
        Self::parse(SEED_CEP_RULES).expect("seed CEP rules are valid")
    }

    pub fn parse(text: &str) -> Result<Self, AgilityError> {
        let rules: CepRules = toml::from_str(text).map_err(|e| AgilityError::Rules(e.to_string()))?;
        let mut seen = std::collections::BTreeSet::new();
        for r in &rules.rules {
            let bad = |m: &str| AgilityError::Rules(format!("rule `{}`: {m}", r.id));
            if !seen.insert(&r.id) {
                return Err(bad("duplicate id"));
            }
            if r.count == 0 {
                return Err(bad("count must be at least 1"));
            }
            let a = &r.action;
            if a.target.is_some() == !a.matching.is_empty() {
                return Err(bad("action needs exactly one of `target` and `match`"));
            }
            match a.op {
                Op::Set if a.attribute.is_none() || a.value.is_some() == a.value_from.is_some() => {
                    return Err(bad("`set` needs `attribute` and one of `value`, `value_from`"));
                }
                Op::Insert if a.target.is_none() || a.category.is_none() => {
                    return Err(bad("`insert` needs `target` and `category`"));
                }
                _ => {}
            }
        }
        Ok(rules)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AgilityError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| AgilityError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Delta {
    Insert { instance: String },
    Delete { instance: String },
    Set { instance: String, attribute: String, old: Option<Value>, new: Value },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Applied {
    pub rule: String,
    pub events: Vec<String>,
    pub model: Side,
    pub delta: Vec<Delta>,
}

/// Pending matches keyed by `rule#correlation-key`: (event id, timestamp).
pub type Buffers = BTreeMap<String, VecDeque<(String, u64)>>;

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Replaces `{subject}`, `{type}` and `{attr.NAME}`.
fn fill(template: &str, e: &Event) -> String {
    let mut out = template.replace("{subject}", &e.subject).replace("{type}", &e.kind);
    while let Some(start) = out.find("{attr.") {
        let Some(len) = out[start..].find('}') else { break };
        let name = &out[start + 6..start + len];
        let v = e.attributes.get(name).map(value_text).unwrap_or_default();
        out.replace_range(start..start + len + 1, &v);
    }
    out
}

pub(crate) fn apply_action(a: &Action, e: &Event, m: &mut TwinModel) -> Vec<Delta> {
    let targets: Vec<String> = match &a.target {
        Some(t) => vec![fill(t, e)],
        None => {
            let want: Vec<(&String, String)> = a.matching.iter().map(|(k, v)| (k, fill(v, e))).collect();
            m.instances
                .iter()
                .filter(|(_, inst)| want.iter().all(|(k, v)| inst.attributes.get(*k).map(value_text).as_deref() == Some(v.as_str())))
                .map(|(id, _)| id.clone())
                .collect()
        }
    };
    let mut delta = Vec::new();
    for id in targets {
        match a.op {
            Op::Insert => {
                if !m.instances.contains_key(&id) {
                    m.insert(&id, a.category.expect("validated"));
                    delta.push(Delta::Insert { instance: id.clone() });
                }
                if let (Some(attr), Some(v)) = (&a.attribute, value_of(a, e)) {
                    if let Some(d) = m.set(&id, attr, v) {
                        delta.push(d);
                    }
                }
            }
            Op::Delete => {
                if m.instances.remove(&id).is_some() {
                    delta.push(Delta::Delete { instance: id });
                }
            }
            Op::Set => {
                let attr = a.attribute.as_ref().expect("validated");
                let Some(v) = value_of(a, e) else { continue };
                if !m.instances.contains_key(&id) {
                    let Some(c) = a.category else { continue };
                    m.insert(&id, c);
                    delta.push(Delta::Insert { instance: id.clone() });
                }
                if let Some(d) = m.set(&id, attr, v) {
                    delta.push(d);
                }
            }
        }
    }
    delta
}

fn value_of(a: &Action, e: &Event) -> Option<Value> {
    match (&a.value, &a.value_from) {
        (Some(v), _) => Some(match v {
            Value::String(s) => Value::String(fill(s, e)),
            other => other.clone(),
        }),
        (None, Some(k)) => e.attributes.get(k).cloned(),
        (None, None) => None,
    }
}

/// Feeds one event through the rules. Returns the rules that fired and
/// whether any rule matched the event at all.
pub(crate) fn run_rules(rules: &CepRules, e: &Event, buffers: &mut Buffers, model: &mut TwinModel) -> (Vec<Applied>, bool) {
    let mut fired = Vec::new();
    let mut matched = false;
    for r in rules.rules.iter().filter(|r| r.matches(e)) {
        matched = true;
        let buf = buffers.entry(format!("{}#{}", r.id, r.key(e))).or_default();
        if r.window_ms > 0 {
            while buf.front().is_some_and(|(_, t)| e.timestamp.saturating_sub(*t) > r.window_ms) {
                buf.pop_front();
            }
        }
        buf.push_back((e.id.clone(), e.timestamp));
        if buf.len() < r.count {
            continue;
        }
        let events: Vec<String> = buf.drain(..).map(|(id, _)| id).collect();
        let delta = apply_action(&r.action, e, model);
        fired.push(Applied { rule: r.id.clone(), events, model: r.side(), delta });
    }
    buffers.retain(|_, b| !b.is_empty());
    (fired, matched)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_rules_parse() {
        let r = CepRules::seed();
        assert!(r.rules.iter().any(|r| r.source == EventSource::Field));
        assert!(r.rules.iter().any(|r| r.source == EventSource::Monitoring));
    }

    #[test]
    fn templates_fill_subject_and_attributes() {
        let e = Event::new("e1", EventSource::Field, "t", "truck-1", 0).with("service", "svc-a").with("n", 3);
        assert_eq!(fill("service:{attr.service}/{subject}/{attr.n}/{attr.none}", &e), "service:svc-a/truck-1/3/");
    }

    #[test]
    fn malformed_rules_are_rejected() {
        let base = r#"
[[rule]]
id = "r"
source = "field"
type = "x"
[rule.action]
op = "set"
target = "a"
attribute = "b"
"#;
        assert!(CepRules::parse(base).is_err());
        assert!(CepRules::parse(&format!("{base}value = 1\n")).is_ok());
        assert!(CepRules::parse(&format!("{base}value = 1\nvalue_from = \"v\"\n")).is_err());
        let twice = format!("{base}value = 1\n{}", base.replace("[[rule]]", "[[rule]]").to_string() + "value = 2\n");
        assert!(CepRules::parse(&twice).is_err());
    }
}
