//! Triple-pattern rules evaluated to fixpoint over an [`InstanceStore`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::DeductionError;
use crate::ontology::{Instance, InstanceStore, Provenance, Relation};

pub const MEDIATION_RULES: &str = include_str!("../../data/rules/mediation.toml");

const INSTANCE_OF: &str = "a";

#[derive(Debug, Clone, PartialEq, Eq)]
enum Term {
    Var(String),
    Const(String),
}

impl Term {
    fn parse(s: &str) -> Self {
        match s.strip_prefix('?') {
            Some(v) => Term::Var(v.to_string()),
            None => Term::Const(s.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Pattern {
    s: Term,
    p: String,
    o: Term,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Constraint {
    left: Term,
    equal: bool,
    right: Term,
}

#[derive(Debug, Clone)]
pub struct Rule {
    pub id: String,
    when: Vec<Pattern>,
    constraints: Vec<Constraint>,
    then: Vec<Pattern>,
}

#[derive(Debug, Clone)]
pub struct RuleGroup {
    pub id: u32,
    pub name: String,
    pub rules: Vec<Rule>,
}

#[derive(Debug, Clone)]
pub struct RuleSet {
    pub groups: Vec<RuleGroup>,
}

#[derive(Deserialize)]
struct RawSet {
    group: Vec<RawGroup>,
}

#[derive(Deserialize)]
struct RawGroup {
    id: u32,
    name: String,
    #[serde(default)]
    rule: Vec<RawRule>,
}

#[derive(Deserialize)]
struct RawRule {
    id: String,
    when: Vec<String>,
    #[serde(default, rename = "where")]
    constraints: Vec<String>,
    then: Vec<String>,
}

/// One rule firing that added at least one fact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub group: u32,
    pub rule: String,
    pub bindings: BTreeMap<String, String>,
    pub facts: Vec<String>,
}

type Bindings = BTreeMap<String, String>;

fn parse_pattern(rule: &str, text: &str) -> Result<Pattern, DeductionError> {
    let parts: Vec<&str> = text.split_whitespace().collect();
    let [s, p, o] = parts.as_slice() else {
        return Err(DeductionError::Rule(format!("{rule}: `{text}` is not a triple")));
    };
    if p.starts_with('?') {
        return Err(DeductionError::Rule(format!("{rule}: predicate variables are not supported")));
    }
    Ok(Pattern { s: Term::parse(s), p: p.to_string(), o: Term::parse(o) })
}

fn parse_constraint(rule: &str, text: &str) -> Result<Constraint, DeductionError> {
    let parts: Vec<&str> = text.split_whitespace().collect();
    match parts.as_slice() {
        [l, op @ ("==" | "!="), r] => Ok(Constraint { left: Term::parse(l), equal: *op == "==", right: Term::parse(r) }),
        _ => Err(DeductionError::Rule(format!("{rule}: bad constraint `{text}`"))),
    }
}

impl RuleSet {
    pub fn mediation() -> Self {
        Self::parse(MEDIATION_RULES).expect("shipped rule file is valid")
    }

    pub fn parse(text: &str) -> Result<Self, DeductionError> {
        let raw: RawSet = toml::from_str(text).map_err(|e| DeductionError::Rule(e.to_string()))?;
        let mut groups = Vec::new();
        for g in raw.group {
            let mut rules = Vec::new();
            for r in g.rule {
                let when = r.when.iter().map(|t| parse_pattern(&r.id, t)).collect::<Result<Vec<_>, _>>()?;
                let then = r.then.iter().map(|t| parse_pattern(&r.id, t)).collect::<Result<Vec<_>, _>>()?;
                let constraints =
                    r.constraints.iter().map(|t| parse_constraint(&r.id, t)).collect::<Result<Vec<_>, _>>()?;
                let bound: Vec<&String> = when
                    .iter()
                    .flat_map(|p| [&p.s, &p.o])
                    .filter_map(|t| match t {
                        Term::Var(v) => Some(v),
                        Term::Const(_) => None,
                    })
                    .collect();
                for p in &then {
                    for t in [&p.s, &p.o] {
                        let vars = match t {
                            Term::Var(v) => vec![v.clone()],
                            Term::Const(c) => template_vars(c),
                        };
                        if let Some(v) = vars.iter().find(|v| !bound.contains(v)) {
                            return Err(DeductionError::Rule(format!("{}: `{v}` unbound in conclusion", r.id)));
                        }
                    }
                }
                rules.push(Rule { id: r.id, when, constraints, then });
            }
            groups.push(RuleGroup { id: g.id, name: g.name, rules });
        }
        Ok(Self { groups })
    }

    pub fn group(&self, id: u32) -> Option<&RuleGroup> {
        self.groups.iter().find(|g| g.id == id)
    }
}

fn template_vars(c: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = c;
    while let Some(start) = rest.find('{') {
        let Some(len) = rest[start..].find('}') else { break };
        out.push(rest[start + 1..start + len].to_string());
        rest = &rest[start + len + 1..];
    }
    out
}

fn local(v: &str) -> &str {
    v.split_once(':').map_or(v, |(_, l)| l)
}

fn instantiate(t: &Term, b: &Bindings) -> String {
    match t {
        Term::Var(v) => b[v].clone(),
        Term::Const(c) => {
            let mut s = c.clone();
            for v in template_vars(c) {
                s = s.replace(&format!("{{{v}}}"), local(&b[&v]));
            }
            s
        }
    }
}

fn unify(t: &Term, value: &str, b: &mut Bindings) -> bool {
    match t {
        Term::Const(c) => c == value,
        Term::Var(v) => match b.get(v) {
            Some(bound) => bound == value,
            None => {
                b.insert(v.clone(), value.to_string());
                true
            }
        },
    }
}

fn resolve<'a>(t: &'a Term, b: &'a Bindings) -> Option<&'a str> {
    match t {
        Term::Const(c) => Some(c),
        Term::Var(v) => b.get(v).map(String::as_str),
    }
}

/// Body patterns in join order: each step takes the pattern with the most
/// terms already bound, earliest first on ties.
fn join_order(when: &[Pattern]) -> Vec<&Pattern> {
    let mut bound: BTreeSet<&str> = BTreeSet::new();
    let mut rest: Vec<&Pattern> = when.iter().collect();
    let mut out = Vec::with_capacity(rest.len());
    let known = |t: &Term, bound: &BTreeSet<&str>| match t {
        Term::Const(_) => true,
        Term::Var(v) => bound.contains(v.as_str()),
    };
    while !rest.is_empty() {
        let (i, _) = rest
            .iter()
            .enumerate()
            .max_by_key(|(i, p)| (usize::from(known(&p.s, &bound)) + usize::from(known(&p.o, &bound)), std::cmp::Reverse(*i)))
            .expect("non-empty");
        let p = rest.remove(i);
        for t in [&p.s, &p.o] {
            if let Term::Var(v) = t {
                bound.insert(v);
            }
        }
        out.push(p);
    }
    out
}

fn matches(rule: &Rule, store: &InstanceStore) -> Vec<Bindings> {
    let mut partial = vec![Bindings::new()];
    for p in join_order(&rule.when) {
        let mut next = Vec::new();
        for b in &partial {
            if p.p == INSTANCE_OF {
                let concept = resolve(&p.o, b);
                let subject = resolve(&p.s, b);
                let candidates: Box<dyn Iterator<Item = &Instance>> = match subject {
                    Some(s) => Box::new(store.get(s).into_iter()),
                    None => Box::new(store.instances()),
                };
                for inst in candidates {
                    if concept.is_some_and(|c| c != inst.concept) {
                        continue;
                    }
                    let mut nb = b.clone();
                    if unify(&p.s, &inst.id, &mut nb) && unify(&p.o, &inst.concept, &mut nb) {
                        next.push(nb);
                    }
                }
            } else {
                let subject = resolve(&p.s, b);
                let object = resolve(&p.o, b);
                for r in store.triples(subject, &p.p, object) {
                    let mut nb = b.clone();
                    if unify(&p.s, &r.subject, &mut nb) && unify(&p.o, &r.object, &mut nb) {
                        next.push(nb);
                    }
                }
            }
        }
        partial = next;
    }
    partial.retain(|b| {
        rule.constraints.iter().all(|c| {
            let l = resolve(&c.left, b);
            let r = resolve(&c.right, b);
            (l == r) == c.equal
        })
    });
    partial
}

/// Runs one group to fixpoint. Returns the firings that changed the store.
pub fn apply_group(rules: &RuleSet, group: u32, store: &mut InstanceStore) -> Result<Vec<TraceRecord>, DeductionError> {
    let g = rules.group(group).ok_or_else(|| DeductionError::Rule(format!("no rule group {group}")))?;
    let mut trace = Vec::new();
    loop {
        let mut changed = false;
        for rule in &g.rules {
            for b in matches(rule, store) {
                let mut facts = Vec::new();
                for head in &rule.then {
                    let s = instantiate(&head.s, &b);
                    let o = instantiate(&head.o, &b);
                    let new = if head.p == INSTANCE_OF {
                        store.ensure_instance(&s, &o, Provenance::Deduced)?
                    } else {
                        store.insert_relation(Relation::new(&s, &head.p, &o))
                    };
                    if new {
                        facts.push(format!("{s} {} {o}", head.p));
                    }
                }
                if !facts.is_empty() {
                    changed = true;
                    trace.push(TraceRecord { group, rule: rule.id.clone(), bindings: b, facts });
                }
            }
        }
        if !changed {
            return Ok(trace);
        }
    }
}
