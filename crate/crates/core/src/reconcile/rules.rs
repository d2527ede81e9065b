//! Transformation rule base and rule-chain search.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ReconcileError;
use crate::ontology::Ontology;

pub const SEED_TRANSFORMS: &str = include_str!("../../data/transforms.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleSpec {
    /// `to = scale · from + offset`.
    Mathematic {
        scale: f64,
        #[serde(default)]
        offset: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from_unit: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        to_unit: Option<String>,
    },
    /// Format rewrite. `None` marks a composite side.
    Syntactic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        source: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformationRule {
    pub id: String,
    pub from: String,
    pub to: String,
    #[serde(flatten)]
    pub spec: RuleSpec,
    #[serde(default)]
    pub bidirectional: bool,
}

/// One application of a rule, possibly reversed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChainStep {
    pub rule: String,
    #[serde(default)]
    pub inverse: bool,
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, Default)]
pub struct RuleBase {
    rules: Vec<TransformationRule>,
    patterns: BTreeMap<String, (Option<Pattern>, Option<Pattern>)>,
}

#[derive(Debug, Clone)]
struct Pattern {
    template: String,
    regex: Regex,
    names: Vec<String>,
}

#[derive(Deserialize)]
struct RawBase {
    #[serde(default)]
    rule: Vec<TransformationRule>,
}

fn placeholders(template: &str) -> Result<Vec<(usize, usize, String)>, String> {
    let mut out = Vec::new();
    let mut i = 0;
    while let Some(off) = template[i..].find('{') {
        let start = i + off;
        let len = template[start..].find('}').ok_or_else(|| format!("unclosed placeholder in `{template}`"))?;
        let name = &template[start + 1..start + len];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(format!("bad placeholder `{name}` in `{template}`"));
        }
        out.push((start, start + len + 1, name.to_string()));
        i = start + len + 1;
    }
    Ok(out)
}

impl Pattern {
    fn compile(template: &str) -> Result<Self, String> {
        let ph = placeholders(template)?;
        let mut re = String::from("^");
        let mut last = 0;
        let mut names = Vec::new();
        for (s, e, name) in ph {
            re.push_str(&regex::escape(&template[last..s]));
            if names.contains(&name) {
                return Err(format!("placeholder `{name}` repeated in `{template}`"));
            }
            re.push_str(&format!("(?P<{name}>.+?)"));
            names.push(name);
            last = e;
        }
        re.push_str(&regex::escape(&template[last..]));
        re.push('$');
        let regex = Regex::new(&re).map_err(|e| e.to_string())?;
        Ok(Self { template: template.to_string(), regex, names })
    }

    fn parse(&self, s: &str) -> Option<BTreeMap<String, String>> {
        let caps = self.regex.captures(s)?;
        Some(self.names.iter().map(|n| (n.clone(), caps[n.as_str()].to_string())).collect())
    }

    fn render(&self, values: &BTreeMap<String, String>) -> String {
        let mut out = self.template.clone();
        for n in &self.names {
            out = out.replace(&format!("{{{n}}}"), &values[n]);
        }
        out
    }
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

impl RuleBase {
    pub fn seed() -> Self {
        Self::parse(SEED_TRANSFORMS).expect("shipped rule base is valid")
    }

    pub fn parse(text: &str) -> Result<Self, ReconcileError> {
        let raw: RawBase = toml::from_str(text).map_err(|e| ReconcileError::Rules(e.to_string()))?;
        Self::new(raw.rule)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReconcileError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| ReconcileError::Rules(e.to_string()))?;
        Self::parse(&text)
    }

    pub fn new(rules: Vec<TransformationRule>) -> Result<Self, ReconcileError> {
        let mut patterns = BTreeMap::new();
        let mut ids = BTreeSet::new();
        for r in &rules {
            let bad = |m: String| ReconcileError::Rules(format!("rule `{}`: {m}", r.id));
            if !ids.insert(r.id.clone()) {
                return Err(bad("duplicate id".into()));
            }
            match &r.spec {
                RuleSpec::Mathematic { scale, offset, .. } => {
                    if !scale.is_finite() || !offset.is_finite() {
                        return Err(bad("non-finite coefficient".into()));
                    }
                    if r.bidirectional && *scale == 0.0 {
                        return Err(bad("zero scale cannot be inverted".into()));
                    }
                }
                RuleSpec::Syntactic { source, target } => {
                    let compile = |t: &Option<String>| t.as_deref().map(Pattern::compile).transpose().map_err(bad);
                    let (s, t) = (compile(source)?, compile(target)?);
                    let names = |p: &Option<Pattern>| p.as_ref().map(|p| p.names.iter().cloned().collect::<BTreeSet<_>>());
                    match (names(&s), names(&t)) {
                        (None, None) => return Err(bad("both sides lack a pattern".into())),
                        (Some(a), Some(b)) if a != b => {
                            return Err(bad("source and target placeholders differ".into()));
                        }
                        _ => {}
                    }
                    patterns.insert(r.id.clone(), (s, t));
                }
            }
        }
        Ok(Self { rules, patterns })
    }

    pub fn rules(&self) -> &[TransformationRule] {
        &self.rules
    }

    pub fn get(&self, id: &str) -> Option<&TransformationRule> {
        self.rules.iter().find(|r| r.id == id)
    }

    /// Rule concepts missing from the ontology, and composite sides whose
    /// placeholders are not parts of their concept.
    pub fn check_against(&self, o: &Ontology) -> Vec<String> {
        let mut problems = Vec::new();
        for r in &self.rules {
            for c in [&r.from, &r.to] {
                if o.concept(c).is_none() {
                    problems.push(format!("rule `{}`: unknown concept `{c}`", r.id));
                }
            }
            if let Some((s, t)) = self.patterns.get(&r.id) {
                let named = s.as_ref().or(t.as_ref()).map(|p| p.names.clone()).unwrap_or_default();
                for (side, concept) in [(s, &r.from), (t, &r.to)] {
                    if side.is_none() {
                        let parts = o.parts(concept);
                        if let Some(n) = named.iter().find(|n| !parts.contains(&n.as_str())) {
                            problems.push(format!("rule `{}`: `{n}` is not a part of `{concept}`", r.id));
                        }
                    }
                }
            }
        }
        problems
    }

    /// Usable steps out of a concept: forward rules and reversed
    /// bidirectional rules, ordered by rule id then direction.
    fn steps_from(&self, concept: &str) -> Vec<ChainStep> {
        let mut out = Vec::new();
        for r in &self.rules {
            if r.from == concept {
                out.push(ChainStep { rule: r.id.clone(), inverse: false, from: r.from.clone(), to: r.to.clone() });
            }
            if r.bidirectional && r.to == concept {
                out.push(ChainStep { rule: r.id.clone(), inverse: true, from: r.to.clone(), to: r.from.clone() });
            }
        }
        out.sort();
        out
    }

    /// Shortest chain from one concept to another within `bound` steps.
    /// Empty when the concepts are equal.
    pub fn find_chain(&self, from: &str, to: &str, bound: usize) -> Option<Vec<ChainStep>> {
        if from == to {
            return Some(vec![]);
        }
        let mut prev: BTreeMap<String, ChainStep> = BTreeMap::new();
        let mut queue = VecDeque::from([(from.to_string(), 0usize)]);
        let mut seen = BTreeSet::from([from.to_string()]);
        while let Some((c, d)) = queue.pop_front() {
            if d == bound {
                continue;
            }
            for step in self.steps_from(&c) {
                if !seen.insert(step.to.clone()) {
                    continue;
                }
                let next = step.to.clone();
                prev.insert(next.clone(), step);
                if next == to {
                    let mut chain = Vec::new();
                    let mut cur = next;
                    while cur != from {
                        let s = prev[&cur].clone();
                        cur = s.from.clone();
                        chain.push(s);
                    }
                    chain.reverse();
                    return Some(chain);
                }
                queue.push_back((next, d + 1));
            }
        }
        None
    }

    fn apply_step(&self, step: &ChainStep, v: &Value) -> Result<Value, ReconcileError> {
        let rule = self.get(&step.rule).ok_or_else(|| ReconcileError::Rules(format!("unknown rule `{}`", step.rule)))?;
        let fail = |m: &str| ReconcileError::RuleFailed { rule: step.rule.clone(), value: v.to_string(), message: m.to_string() };
        match &rule.spec {
            RuleSpec::Mathematic { scale, offset, .. } => {
                let x = match v {
                    Value::Number(n) => n.as_f64(),
                    Value::String(s) => s.trim().parse::<f64>().ok(),
                    _ => None,
                }
                .ok_or_else(|| fail("not a number"))?;
                let y = if step.inverse { (x - offset) / scale } else { scale * x + offset };
                serde_json::Number::from_f64(y).map(Value::Number).ok_or_else(|| fail("result is not finite"))
            }
            RuleSpec::Syntactic { .. } => {
                let (s, t) = &self.patterns[&rule.id];
                let (src, dst) = if step.inverse { (t, s) } else { (s, t) };
                let parts: BTreeMap<String, String> = match src {
                    Some(p) => {
                        let text = scalar_text(v).ok_or_else(|| fail("not a text value"))?;
                        p.parse(&text).ok_or_else(|| fail(&format!("does not match `{}`", p.template)))?
                    }
                    None => {
                        let obj = v.as_object().ok_or_else(|| fail("composite value is not an object"))?;
                        let names = &dst.as_ref().expect("one side has a pattern").names;
                        names
                            .iter()
                            .map(|n| {
                                obj.get(n).and_then(scalar_text).map(|t| (n.clone(), t)).ok_or_else(|| fail(&format!("missing part `{n}`")))
                            })
                            .collect::<Result<_, _>>()?
                    }
                };
                Ok(match dst {
                    Some(p) => Value::String(p.render(&parts)),
                    None => Value::Object(parts.into_iter().map(|(k, v)| (k, Value::String(v))).collect()),
                })
            }
        }
    }

    /// Applies a chain after checking that consecutive steps connect.
    pub fn apply_chain(&self, chain: &[ChainStep], v: &Value) -> Result<Value, ReconcileError> {
        check_chain(chain)?;
        let mut cur = v.clone();
        for step in chain {
            cur = self.apply_step(step, &cur)?;
        }
        Ok(cur)
    }
}

/// Every step's source concept must be the previous step's target.
pub fn check_chain(chain: &[ChainStep]) -> Result<(), ReconcileError> {
    for w in chain.windows(2) {
        if w[0].to != w[1].from {
            return Err(ReconcileError::IllTyped(format!("`{}` yields {} but `{}` expects {}", w[0].rule, w[0].to, w[1].rule, w[1].from)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn step(rb: &RuleBase, from: &str, to: &str) -> Vec<ChainStep> {
        rb.find_chain(from, to, 3).unwrap()
    }

    #[test]
    fn seed_rules_reference_known_concepts() {
        assert!(RuleBase::seed().check_against(&Ontology::seed()).is_empty());
    }

    #[test]
    fn celsius_to_fahrenheit() {
        let rb = RuleBase::seed();
        let c = step(&rb, "CelsiusTemperature", "FahrenheitTemperature");
        assert_eq!(c.len(), 1);
        assert_eq!(rb.apply_chain(&c, &json!(100)).unwrap(), json!(212.0));
        assert_eq!(rb.apply_chain(&c, &json!(0)).unwrap(), json!(32.0));
    }

    #[test]
    fn kelvin_to_fahrenheit_goes_through_celsius() {
        let rb = RuleBase::seed();
        let c = step(&rb, "KelvinTemperature", "FahrenheitTemperature");
        assert_eq!(c.iter().map(|s| (s.rule.as_str(), s.inverse)).collect::<Vec<_>>(), vec![("temp-c-to-k", true), ("temp-c-to-f", false)]);
        let once = rb.apply_chain(&c[..1], &json!(373.15)).unwrap();
        let twice = rb.apply_chain(&c[1..], &once).unwrap();
        assert_eq!(rb.apply_chain(&c, &json!(373.15)).unwrap(), twice);
        assert!((twice.as_f64().unwrap() - 212.0).abs() < 1e-9);
    }

    #[test]
    fn us_to_uk_date() {
        let rb = RuleBase::seed();
        let c = step(&rb, "UsDate", "UkDate");
        assert_eq!(rb.apply_chain(&c, &json!("12/31/2013")).unwrap(), json!("31/12/2013"));
        let back = step(&rb, "UkDate", "UsDate");
        assert_eq!(rb.apply_chain(&back, &json!("31/12/2013")).unwrap(), json!("12/31/2013"));
        assert!(matches!(rb.apply_chain(&c, &json!("2013-12-31")), Err(ReconcileError::RuleFailed { .. })));
    }

    #[test]
    fn name_composition_both_ways() {
        let rb = RuleBase::seed();
        let c = step(&rb, "FullName", "NameString");
        let full = json!({"GivenName": "Ada", "FamilyName": "Lovelace"});
        assert_eq!(rb.apply_chain(&c, &full).unwrap(), json!("Ada Lovelace"));
        let back = step(&rb, "NameString", "FullName");
        assert_eq!(rb.apply_chain(&back, &json!("Ada Lovelace")).unwrap(), full);
    }

    #[test]
    fn no_path_beyond_bound() {
        let rb = RuleBase::seed();
        assert!(rb.find_chain("CelsiusTemperature", "UsDate", 3).is_none());
        assert!(rb.find_chain("UsDate", "IsoDate", 0).is_none());
        assert_eq!(rb.find_chain("UsDate", "UsDate", 0), Some(vec![]));
    }

    #[test]
    fn ill_typed_chain_rejected() {
        let rb = RuleBase::seed();
        let mut c = step(&rb, "KelvinTemperature", "FahrenheitTemperature");
        c.swap(0, 1);
        assert!(matches!(rb.apply_chain(&c, &json!(1)), Err(ReconcileError::IllTyped(_))));
    }

    #[test]
    fn bad_rules_rejected() {
        let text = r#"
[[rule]]
id = "x"
kind = "syntactic"
from = "A"
to = "B"
source = "{a}-{b}"
target = "{a}"
"#;
        assert!(RuleBase::parse(text).is_err());
        let text = r#"
[[rule]]
id = "x"
kind = "mathematic"
from = "A"
to = "B"
scale = 0.0
bidirectional = true
"#;
        assert!(RuleBase::parse(text).is_err());
    }
}
