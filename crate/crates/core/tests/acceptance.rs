//! Acceptance criteria 1–9.
//!
//! Runs without the libtest harness so every criterion prints one line with
//! its verdict, measured time and limit. Expected values come from oracles
//! written here, independent of the code under test.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use mediate_core::agility::{
    category_distance, measure, Category, CepRules, MeasureConfig, ModelInstance, ReEntry, SituationTwin, TwinModel,
};
use mediate_core::deduction::{
    apply_rule_group_1, apply_rule_group_2, deduce_instances, extract_cartography, transfer, MediationInstances, RuleSet, SelectedFunction, Selection,
};
use mediate_core::events::{parse_event_log, Event, EventSource};
use mediate_core::graph::{NodeKind, ProcessGraph};
use mediate_core::matching::{
    hybrid_score, match_activity, Activity, Endpoint, MatchConfig, MockBehavior, PatternStore, Registry,
    SemanticProfile, ServiceDescriptor,
};
use mediate_core::model::{
    CollaborationModel, ConceptRef, FieldSpec, LinkKind, MessageDef, Objective, ObjectiveKind, Partner, SharedFunction,
    SubNetwork,
};
use mediate_core::ontology::{Concept, Ontology};
use mediate_core::orchestrator::{Coordinator, Engine, RunStatus, ServiceBus};
use mediate_core::pipeline::{scenario_dir, Decision, Project, RunOptions, Stage};
use mediate_core::reconcile::{build_data_map, execute_map, ReconcileConfig, RuleBase, RuleSpec, TransformationRule, UpstreamField};
use mediate_core::sa_bpmn::{
    export_sa_bpmn, import_sa_bpmn, Direction, MessageFlowRef, SaBpmnDocument, SemanticAnnotation, SemanticElement,
};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::{json, Map, Value};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// ------------------------------------------------------------------ models

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn empty_model() -> CollaborationModel {
    CollaborationModel {
        schema_version: 1,
        network_id: "net".into(),
        name: "Net".into(),
        context: BTreeMap::new(),
        sub_networks: vec![],
        partners: vec![],
        objectives: vec![],
        messages: vec![],
    }
}

fn function(id: &str, concept: &str, inputs: Vec<String>, outputs: Vec<String>) -> SharedFunction {
    SharedFunction { id: id.into(), name: id.into(), inputs, outputs, annotation: vec![ConceptRef::term(concept)] }
}

fn message(id: &str) -> MessageDef {
    MessageDef { id: id.into(), name: id.into(), concept: ConceptRef::term("Document"), fields: vec![] }
}

fn objective(id: &str, sn: &str) -> Objective {
    Objective {
        id: id.into(),
        kind: ObjectiveKind::Operation,
        description: id.into(),
        annotation: vec![ConceptRef::term("Deliver")],
        sub_network: sn.into(),
    }
}

fn pick(sel: &mut Selection, ob: &str, f: &str, p: &str) {
    sel.by_objective.entry(ob.to_string()).or_default().push(SelectedFunction {
        function: f.into(),
        partner: p.into(),
        link: LinkKind::Exact,
        score: 1.0,
    });
}

// -------------------------------------------------------------- criterion 1

fn criterion_1() -> Outcome {
    let mut rng = StdRng::seed_from_u64(1);
    let rules = RuleSet::mediation();
    let cases = 300;
    for case in 0..cases {
        let n = rng.gen_range(1..=6);
        let mut m = empty_model();
        let pool = rng.gen_range(2..=8);
        m.partners = (0..pool).map(|i| Partner { id: format!("p{i}"), name: format!("P{i}"), functions: vec![] }).collect();
        let ids: Vec<String> = m.partners.iter().map(|p| p.id.clone()).collect();
        for s in 0..n {
            let k = rng.gen_range(2..=pool.min(4));
            let partners: Vec<String> = ids.choose_multiple(&mut rng, k).cloned().collect();
            m.sub_networks.push(SubNetwork { id: format!("sn{s}"), name: format!("S{s}"), partners });
        }
        let mut store = transfer(&m, &Selection::default()).map_err(|e| e.to_string())?;
        apply_rule_group_1(&rules, &mut store).map_err(|e| e.to_string())?;
        let mediators = store.instances_of("Mediator").count();
        ensure!(mediators == n, "case {case}: {mediators} mediators for {n} sub-networks");
        for sn in &m.sub_networks {
            let links = store.relations().filter(|r| r.predicate == "hasMediator" && r.subject.ends_with(&format!(":{}", sn.id))).count();
            ensure!(links == 1, "case {case}: {} has {links} hasMediator relations", sn.id);
        }
        let before = store.clone();
        let again = apply_rule_group_1(&rules, &mut store).map_err(|e| e.to_string())?;
        ensure!(again.is_empty() && store == before, "case {case}: re-application changed the store");
    }
    Ok(format!("{cases} models, n in 1..=6"))
}

// -------------------------------------------------------------- criterion 2

fn random_network(rng: &mut StdRng) -> (CollaborationModel, Selection) {
    let mut m = empty_model();
    let msgs: Vec<String> = (0..rng.gen_range(1..=5)).map(|i| format!("m{i}")).collect();
    m.messages = msgs.iter().map(|id| message(id)).collect();
    let n_partners = rng.gen_range(2..=5);
    let mut fid = 0;
    for p in 0..n_partners {
        let functions = (0..rng.gen_range(1..=3))
            .map(|_| {
                fid += 1;
                let subset = |rng: &mut StdRng| msgs.iter().filter(|_| rng.gen_bool(0.35)).cloned().collect();
                function(&format!("f{fid}"), "Deliver", subset(rng), subset(rng))
            })
            .collect();
        m.partners.push(Partner { id: format!("p{p}"), name: format!("P{p}"), functions });
    }
    let ids: Vec<String> = m.partners.iter().map(|p| p.id.clone()).collect();
    for s in 0..rng.gen_range(1..=3) {
        let k = rng.gen_range(2..=n_partners);
        let partners = ids.choose_multiple(rng, k).cloned().collect();
        m.sub_networks.push(SubNetwork { id: format!("sn{s}"), name: format!("S{s}"), partners });
        m.objectives.push(objective(&format!("o{s}"), &format!("sn{s}")));
    }
    let mut sel = Selection::default();
    for ob in &m.objectives {
        sel.by_objective.insert(ob.id.clone(), vec![]);
    }
    for p in &m.partners {
        for f in &p.functions {
            let homes: Vec<&Objective> = m
                .objectives
                .iter()
                .filter(|o| m.sub_network(&o.sub_network).is_some_and(|sn| sn.partners.contains(&p.id)))
                .collect();
            if !homes.is_empty() && rng.gen_bool(0.75) {
                let ob = homes[rng.gen_range(0..homes.len())].id.clone();
                pick(&mut sel, &ob, &f.id, &p.id);
            }
        }
    }
    (m, sel)
}

fn criterion_2() -> Outcome {
    let mut rng = StdRng::seed_from_u64(2);
    let rules = RuleSet::mediation();
    let cases = 150;
    let mut total = 0;
    for case in 0..cases {
        let (m, sel) = random_network(&mut rng);
        let selected: BTreeSet<&str> = sel.functions().map(|(_, f)| f.function.as_str()).collect();
        let mut oracle = BTreeSet::new();
        for (_, f1) in m.functions().filter(|(_, f)| selected.contains(f.id.as_str())) {
            for (_, f2) in m.functions().filter(|(_, f)| selected.contains(f.id.as_str())) {
                for msg in &f1.outputs {
                    if f2.inputs.contains(msg) {
                        oracle.insert((f1.id.clone(), f2.id.clone(), msg.clone()));
                    }
                }
            }
        }
        let mut store = transfer(&m, &sel).map_err(|e| e.to_string())?;
        apply_rule_group_1(&rules, &mut store).map_err(|e| e.to_string())?;
        apply_rule_group_2(&rules, &mut store).map_err(|e| e.to_string())?;
        let inst = MediationInstances::from_store(&store, vec![]);
        let got: BTreeSet<(String, String, String)> =
            inst.relationships.iter().map(|o| (o.producer.clone(), o.consumer.clone(), o.message.clone())).collect();
        ensure!(got.len() == inst.relationships.len(), "case {case}: duplicate orders");
        ensure!(got == oracle, "case {case}: orders {got:?} != oracle {oracle:?}");
        total += oracle.len();
    }
    Ok(format!("{cases} models, {total} orders, exact"))
}

// -------------------------------------------------------------- criterion 3

fn permutations(items: &[String]) -> Vec<Vec<String>> {
    if items.is_empty() {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head.clone());
            out.push(tail);
        }
    }
    out
}

fn criterion_3() -> Outcome {
    let mut rng = StdRng::seed_from_u64(3);
    let cases = 250;
    let mut sequences = 0;
    for case in 0..cases {
        let n = rng.gen_range(1..=5);
        let mut names: Vec<String> = (0..n).map(|i| format!("f{i}")).collect();
        names.shuffle(&mut rng);
        let mut inputs = vec![vec![]; n];
        let mut outputs = vec![vec![]; n];
        let mut msg = 0;
        // messages only flow forward in a random topological order
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(0.4) {
                    msg += 1;
                    outputs[i].push(format!("m{msg}"));
                    inputs[j].push(format!("m{msg}"));
                    if j + 1 < n && rng.gen_bool(0.3) {
                        inputs[rng.gen_range(j + 1..n)].push(format!("m{msg}"));
                    }
                }
            }
            if rng.gen_bool(0.3) {
                msg += 1;
                inputs[i].push(format!("m{msg}"));
            }
        }
        let mut m = empty_model();
        let functions: Vec<SharedFunction> = (0..n)
            .map(|i| function(&names[i], &format!("Concept{i}"), inputs[i].clone(), outputs[i].clone()))
            .collect();
        m.messages = (1..=msg).map(|k| message(&format!("m{k}"))).collect();
        m.partners = vec![
            Partner { id: "a".into(), name: "A".into(), functions: functions.iter().step_by(2).cloned().collect() },
            Partner { id: "b".into(), name: "B".into(), functions: functions.iter().skip(1).step_by(2).cloned().collect() },
        ];
        m.sub_networks.push(SubNetwork { id: "sn".into(), name: "S".into(), partners: strings(&["a", "b"]) });
        m.objectives.push(objective("o", "sn"));
        let mut sel = Selection::default();
        for (p, f) in m.functions() {
            pick(&mut sel, "o", &f.id, &p.id);
        }
        let (_, inst) = deduce_instances(&m, &sel, &RuleSet::mediation()).map_err(|e| e.to_string())?;
        let carto = extract_cartography(&inst, &sel, &m).map_err(|e| e.to_string())?;
        let g = &carto.sub_processes[0].graph;
        let got = g.task_sequences().map_err(|e| format!("case {case}: {e}"))?;

        let sorted: Vec<String> = { let mut v = names.clone(); v.sort(); v };
        let position = |seq: &[String], f: &str| seq.iter().position(|x| x == f).expect("present");
        let oracle: BTreeSet<Vec<String>> = permutations(&sorted)
            .into_iter()
            .filter(|seq| {
                m.functions().all(|(_, consumer)| {
                    consumer.inputs.iter().all(|msg| {
                        m.functions()
                            .filter(|(_, p)| p.id != consumer.id && p.outputs.contains(msg))
                            .all(|(_, p)| position(seq, &p.id) < position(seq, &consumer.id))
                    })
                })
            })
            .collect();
        ensure!(got == oracle, "case {case}: {} sequences vs {} expected\n{:?}", got.len(), oracle.len(), m.partners);
        sequences += oracle.len();
    }
    Ok(format!("{cases} models with 1–5 functions, {sequences} sequences, exact"))
}

// -------------------------------------------------------------- criterion 4

fn random_ontology(rng: &mut StdRng) -> (Ontology, Vec<String>) {
    let n = rng.gen_range(6..=12);
    let mut concepts = vec![Concept { id: "C0".into(), label: "C0".into(), alt_labels: vec![], parents: vec![] }];
    for i in 1..n {
        let parent = format!("C{}", rng.gen_range(0..i));
        concepts.push(Concept { id: format!("C{i}"), label: format!("C{i}"), alt_labels: vec![], parents: vec![parent] });
    }
    let ids = concepts.iter().map(|c| c.id.clone()).collect();
    (Ontology::new(concepts, vec![], vec![]).expect("tree ontology"), ids)
}

const WORDS: [&str; 8] = ["ship", "goods", "order", "pay", "invoice", "plan", "stock", "truck"];

fn random_name(rng: &mut StdRng) -> String {
    let k = rng.gen_range(1..=3);
    WORDS.choose_multiple(rng, k).cloned().collect::<Vec<_>>().join(" ")
}

fn random_profile(rng: &mut StdRng, ids: &[String]) -> SemanticProfile {
    let mut some = |lo: usize, hi: usize| {
        let k = rng.gen_range(lo..=hi);
        ids.choose_multiple(rng, k).cloned().collect()
    };
    SemanticProfile { capability: some(1, 1), inputs: some(0, 2), outputs: some(1, 2) }
}

fn mock_service(id: &str, name: &str, profile: SemanticProfile) -> ServiceDescriptor {
    ServiceDescriptor {
        id: id.into(),
        name: name.into(),
        provider: None,
        endpoint: Endpoint::Mock(MockBehavior::default()),
        profile,
        inputs: vec![],
        outputs: vec![],
    }
}

/// Exhaustive search over every service subset of size ≤ k.
fn optimum(a: &Activity, reg: &Registry, o: &Ontology, cfg: &MatchConfig) -> Option<(f64, Vec<String>)> {
    let n = reg.services.len();
    let mut best: Option<(f64, Vec<String>)> = None;
    for mask in 1u32..(1 << n) {
        if mask.count_ones() as usize > cfg.k {
            continue;
        }
        let members: Vec<&ServiceDescriptor> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| &reg.services[i]).collect();
        // each output goes to its most similar supplier, ties to the lower id
        let mut suppliers = BTreeSet::new();
        let mut covered = true;
        for want in &a.profile.outputs {
            let sim = |s: &ServiceDescriptor| s.profile.outputs.iter().map(|h| o.similarity(want, h)).fold(0.0, f64::max);
            let mut chosen: Option<&ServiceDescriptor> = None;
            for s in &members {
                if sim(s) >= cfg.coverage_threshold && chosen.is_none_or(|c| sim(s) > sim(c) || (sim(s) == sim(c) && s.id < c.id)) {
                    chosen = Some(s);
                }
            }
            match chosen {
                Some(c) => {
                    suppliers.insert(c.id.clone());
                }
                None => covered = false,
            }
        }
        if !covered || (members.len() > 1 && suppliers.len() != members.len()) {
            continue;
        }
        let mut merged = SemanticProfile::default();
        for s in &members {
            for (into, from) in [
                (&mut merged.capability, &s.profile.capability),
                (&mut merged.inputs, &s.profile.inputs),
                (&mut merged.outputs, &s.profile.outputs),
            ] {
                for c in from {
                    if !into.contains(c) {
                        into.push(c.clone());
                    }
                }
            }
        }
        let name = members.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(" ");
        let score = hybrid_score(&a.name, &a.profile, &name, &merged, o, cfg.alpha);
        let mut ids: Vec<String> = members.iter().map(|s| s.id.clone()).collect();
        ids.sort();
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, ids));
        }
    }
    best
}

fn criterion_4() -> Outcome {
    let mut rng = StdRng::seed_from_u64(4);
    let cfg = MatchConfig { k: 3, ..MatchConfig::default() };
    let cases = 100;
    let mut compositions = 0;
    let mut reused = 0;
    for case in 0..cases {
        let (o, ids) = random_ontology(&mut rng);
        let n = rng.gen_range(1..=12);
        let services = (0..n).map(|i| mock_service(&format!("s{i:02}"), &random_name(&mut rng), random_profile(&mut rng, &ids))).collect();
        let reg = Registry { services };
        let mut profile = random_profile(&mut rng, &ids);
        if rng.gen_bool(0.5) {
            // outputs split over several services force compositions
            profile.outputs = reg.services.choose_multiple(&mut rng, 2).map(|s| s.profile.outputs[0].clone()).collect();
            profile.outputs.dedup();
        }
        let a = Activity { id: "act".into(), name: random_name(&mut rng), lane: None, profile, inputs: vec![], outputs: vec![] };
        let mut patterns = PatternStore::in_memory();
        let r = match_activity(&a, &reg, &patterns, &o, &cfg).map_err(|e| e.to_string())?;
        let top = r.candidates.first().map(|b| b.score);
        let best = optimum(&a, &reg, &o, &cfg);
        ensure!(top == best.as_ref().map(|b| b.0), "case {case}: matcher {top:?} vs optimum {best:?}");
        if let Some((_, ids)) = &best {
            compositions += usize::from(ids.len() > 1);
        }

        // a validated, non-top binding is offered first on the next match
        if let Some(last) = r.candidates.last().filter(|_| r.candidates.len() > 1) {
            patterns.record_success(&r.fingerprint, &last.services).map_err(|e| e.to_string())?;
            let again = match_activity(&a, &reg, &patterns, &o, &cfg).map_err(|e| e.to_string())?;
            ensure!(again.from_pattern && again.candidates[0].services == last.services, "case {case}: pattern not ranked first");
            reused += 1;
        }
    }
    Ok(format!("{cases} registries ≤12 services, k=3, {compositions} optimal compositions, {reused} pattern reuses"))
}

// -------------------------------------------------------------- criterion 5

fn convert(o: &Ontology, rb: &RuleBase, from: &str, to: &str, v: Value) -> Result<Value, String> {
    let map = build_data_map("svc", &[FieldSpec::new("x", to)], &[UpstreamField::new("n.y", from, 1)], o, rb, &ReconcileConfig::default());
    let store = BTreeMap::from([("n.y".to_string(), v)]);
    execute_map(&map, &store, rb).map(|m| m["x"].clone()).map_err(|e| e.to_string())
}

/// Breadth-first shortest path over rule edges, reverse edges included for
/// bidirectional rules.
fn bfs(rules: &[TransformationRule], from: &str, to: &str, bound: usize) -> Option<usize> {
    let mut dist = BTreeMap::from([(from.to_string(), 0usize)]);
    let mut frontier = vec![from.to_string()];
    while let Some(d) = frontier.first().map(|c| dist[c]) {
        if frontier.iter().any(|c| c == to) {
            return Some(d);
        }
        if d == bound {
            return None;
        }
        let mut next = Vec::new();
        for c in &frontier {
            for r in rules {
                for (a, b) in [(&r.from, &r.to), (&r.to, &r.from)].into_iter().take(if r.bidirectional { 2 } else { 1 }) {
                    if a == c && !dist.contains_key(b) {
                        dist.insert(b.clone(), d + 1);
                        next.push(b.clone());
                    }
                }
            }
        }
        frontier = next;
    }
    None
}

fn criterion_5() -> Outcome {
    let o = Ontology::seed();
    let rb = RuleBase::seed();
    for (c, f) in [(0.0, 32.0), (100.0, 212.0), (-40.0, -40.0)] {
        let got = convert(&o, &rb, "CelsiusTemperature", "FahrenheitTemperature", json!(c))?;
        ensure!(got.as_f64() == Some(f), "{c} °C gave {got}, expected {f}");
    }
    let got = convert(&o, &rb, "UsDate", "UkDate", json!("12/31/2013"))?;
    ensure!(got == json!("31/12/2013"), "US date gave {got}");

    let mut rng = StdRng::seed_from_u64(5);
    let graphs = 50;
    let mut checked = 0;
    for g in 0..graphs {
        let n = rng.gen_range(3..=9);
        let mut concepts = vec![Concept { id: "Q".into(), label: "Q".into(), alt_labels: vec![], parents: vec![] }];
        concepts.extend((0..n).map(|i| Concept { id: format!("K{i}"), label: format!("K{i}"), alt_labels: vec![], parents: vec!["Q".into()] }));
        let o = Ontology::new(concepts, vec![], vec![]).expect("flat ontology");
        let rules: Vec<TransformationRule> = (0..rng.gen_range(1..=2 * n))
            .map(|i| {
                let a = rng.gen_range(0..n);
                let b = (a + rng.gen_range(1..n)) % n;
                TransformationRule {
                    id: format!("r{i}"),
                    from: format!("K{a}"),
                    to: format!("K{b}"),
                    spec: RuleSpec::Mathematic { scale: 2.0, offset: 1.0, from_unit: None, to_unit: None },
                    bidirectional: rng.gen_bool(0.4),
                }
            })
            .collect();
        let rb = RuleBase::new(rules.clone()).map_err(|e| e.to_string())?;
        let cfg = ReconcileConfig { threshold: 0.0, chain_bound: n, ..Default::default() };
        for s in 0..n {
            for t in 0..n {
                let (from, to) = (format!("K{s}"), format!("K{t}"));
                let map = build_data_map("svc", &[FieldSpec::new("x", &to)], &[UpstreamField::new("n.y", &from, 1)], &o, &rb, &cfg);
                let got = map.assignments.first().map(|a| a.source.chain.len());
                let want = bfs(&rules, &from, &to, n);
                ensure!(got == want, "graph {g}: {from}→{to} chain {got:?}, shortest {want:?}");
                if let Some(a) = map.assignments.first() {
                    let chain = &a.source.chain;
                    ensure!(chain.first().is_none_or(|c| c.from == from) && chain.last().is_none_or(|c| c.to == to), "graph {g}: chain ends");
                    ensure!(chain.windows(2).all(|w| w[0].to == w[1].from), "graph {g}: chain does not connect");
                }
                checked += 1;
            }
        }
    }
    Ok(format!("0→32, 100→212, −40→−40, 12/31/2013→31/12/2013; {checked} chains on {graphs} rule graphs"))
}

// -------------------------------------------------------------- criterion 6

fn random_text(rng: &mut StdRng) -> String {
    const CHARS: &[char] = &['a', 'b', 'Z', '9', ' ', '<', '>', '&', '"', '\'', 'é', '→', '_', '-', '.'];
    let len = rng.gen_range(1..=12);
    let s: String = (0..len).map(|_| *CHARS.choose(rng).expect("non-empty")).collect();
    // names are stored trimmed
    let t = s.trim().to_string();
    if t.is_empty() { "x".into() } else { t }
}

fn random_document(rng: &mut StdRng, k: usize) -> SaBpmnDocument {
    let mut doc = SaBpmnDocument { id: format!("defs{k}"), ..Default::default() };
    let mut tasks = Vec::new();
    for p in 0..rng.gen_range(1..=3) {
        let pid = format!("p{k}_{p}");
        let mut g = ProcessGraph::new(&pid, random_text(rng));
        g.add_node(format!("{pid}_start"), "start", NodeKind::Start, None);
        for i in 0..rng.gen_range(0..=6) {
            let id = format!("{pid}_n{i}");
            let kind = match rng.gen_range(0..4) {
                0 => NodeKind::Parallel,
                1 => NodeKind::Exclusive,
                2 => NodeKind::Call { process: format!("p{k}_0") },
                _ => NodeKind::Task { function: id.clone() },
            };
            let lane = matches!(kind, NodeKind::Task { .. }).then(|| format!("lane{}", rng.gen_range(0..3)));
            if matches!(kind, NodeKind::Task { .. }) {
                tasks.push(id.clone());
            }
            let name = if kind.is_gateway() { String::new() } else { random_text(rng) };
            g.add_node(id, name, kind, lane);
        }
        g.add_node(format!("{pid}_end"), "end", NodeKind::End, None);
        let ids: Vec<String> = g.nodes.iter().map(|n| n.id.clone()).collect();
        for i in 1..ids.len() {
            let from = ids[rng.gen_range(0..i)].clone();
            // a node names at most one default flow
            let has_default = g.outgoing(&from).any(|e| e.default);
            let e = g.add_edge(&from, &ids[i]);
            if rng.gen_bool(0.2) {
                e.condition = Some(format!("x > {} && y == \"a<b\"", i));
            } else if !has_default && rng.gen_bool(0.1) {
                e.default = true;
            }
        }
        doc.processes.push(g);
    }
    for t in &tasks {
        if rng.gen_bool(0.7) {
            let elements = (0..rng.gen_range(0..=3))
                .map(|i| SemanticElement {
                    message: format!("msg{i}"),
                    direction: if rng.gen_bool(0.5) { Direction::Input } else { Direction::Output },
                    concept: format!("Concept{}", rng.gen_range(0..5)),
                })
                .collect();
            let details = (0..rng.gen_range(0..=2)).map(|i| format!("Cap{i}")).collect();
            doc.annotations.insert(t.clone(), SemanticAnnotation { details, elements });
        }
    }
    if tasks.len() >= 2 {
        for i in 0..rng.gen_range(0..=2) {
            doc.message_flows.push(MessageFlowRef {
                id: format!("mf{k}_{i}"),
                source: tasks[0].clone(),
                target: tasks[tasks.len() - 1].clone(),
                message: format!("msg{i}"),
            });
        }
    }
    doc
}

fn criterion_6() -> Outcome {
    let mut rng = StdRng::seed_from_u64(6);
    let docs = 500;
    let mut bytes = 0;
    for k in 0..docs {
        let d = random_document(&mut rng, k);
        let xml = export_sa_bpmn(&d);
        ensure!(xml == export_sa_bpmn(&d.clone()), "doc {k}: export is not deterministic");
        let back = import_sa_bpmn(&xml).map_err(|e| format!("doc {k}: {e}\n{}", String::from_utf8_lossy(&xml)))?;
        if back != d {
            let a = format!("{d:#?}");
            let b = format!("{back:#?}");
            let diff: Vec<String> = a.lines().zip(b.lines()).filter(|(x, y)| x != y).take(6).map(|(x, y)| format!("{x} | {y}")).collect();
            return Err(format!("doc {k}: round trip differs: {}", diff.join("; ")));
        }
        ensure!(export_sa_bpmn(&back) == xml, "doc {k}: re-export differs");
        bytes += xml.len();
    }
    Ok(format!("{docs} documents, {bytes} bytes, byte-equal re-export"))
}

// ----------------------------------------------------- scenario helpers

fn scenario_project() -> Result<(tempfile::TempDir, Project), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for entry in std::fs::read_dir(scenario_dir()).map_err(|e| e.to_string())? {
        let p = entry.map_err(|e| e.to_string())?.path();
        if p.is_file() {
            std::fs::copy(&p, dir.path().join(p.file_name().expect("file"))).map_err(|e| e.to_string())?;
        }
    }
    let project = Project::load(dir.path()).map_err(|e| e.to_string())?;
    Ok((dir, project))
}

fn scenario_input() -> Map<String, Value> {
    serde_json::from_str(&std::fs::read_to_string(scenario_dir().join("input.json")).expect("input")).expect("input json")
}

fn scenario_events(name: &str) -> Vec<Event> {
    parse_event_log(&std::fs::read_to_string(scenario_dir().join("events").join(name)).expect("events")).expect("event log")
}

fn design(p: &Project) -> Result<(), String> {
    p.run_pipeline(&[Stage::Model, Stage::Deduce, Stage::Match, Stage::Reconcile, Stage::Compile], None)
        .map(|_| ())
        .map_err(|e| e.to_string())
}

fn nearest_tasks(g: &ProcessGraph, from: &str, forward: bool) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack = vec![from.to_string()];
    let mut seen = BTreeSet::new();
    while let Some(n) = stack.pop() {
        let next: Vec<String> = if forward {
            g.outgoing(&n).map(|e| e.to.clone()).collect()
        } else {
            g.incoming(&n).map(|e| e.from.clone()).collect()
        };
        for m in next {
            if !seen.insert(m.clone()) {
                continue;
            }
            match g.node(&m).map(|n| &n.kind) {
                Some(NodeKind::Task { .. }) => {
                    out.insert(m);
                }
                _ => stack.push(m),
            }
        }
    }
    out
}

// -------------------------------------------------------------- criterion 7

fn criterion_7() -> Outcome {
    let (_dir, p) = scenario_project()?;
    design(&p)?;
    let (_, run) = p.stage_run("acceptance", &scenario_input(), &RunOptions::default()).map_err(|e| e.to_string())?;
    ensure!(run.status == RunStatus::Completed, "run ended {:?}", run.status);
    let expected: BTreeMap<String, usize> = [
        "svc-forecast", "svc-plan", "svc-prepare", "svc-transport-fast", "svc-notify", "svc-receive", "svc-invoice", "svc-pay",
    ]
    .iter()
    .map(|s| (s.to_string(), 1))
    .collect();
    let count = |inv: &[mediate_core::orchestrator::Invocation]| {
        let mut m: BTreeMap<String, usize> = BTreeMap::new();
        for i in inv {
            *m.entry(i.service.clone()).or_default() += 1;
        }
        m
    };

    let mut project = p.compiled().map_err(|e| e.to_string())?;
    let joins: Vec<(String, BTreeSet<String>, BTreeSet<String>)> = project
        .workflows
        .iter()
        .flat_map(|w| {
            w.graph
                .nodes
                .iter()
                .filter(|n| n.kind == NodeKind::Parallel && w.graph.incoming(&n.id).count() > 1)
                .map(|n| (n.id.clone(), nearest_tasks(&w.graph, &n.id, false), nearest_tasks(&w.graph, &n.id, true)))
                .collect::<Vec<_>>()
        })
        .collect();
    ensure!(!joins.is_empty(), "scenario has no parallel join");
    let mut rng = StdRng::seed_from_u64(7);
    let runs = 100;
    for r in 0..runs {
        for s in &mut project.services {
            if let Endpoint::Mock(b) = &mut s.endpoint {
                b.delay_ms = rng.gen_range(0..=2);
            }
        }
        let bus = Arc::new(ServiceBus::new(project.services.clone()));
        let sink = Arc::new(Mutex::new(Vec::new()));
        let engine = Engine::new(bus.clone(), Arc::new(RuleBase::seed())).with_sink(sink.clone());
        let run = Coordinator::new(&project, &engine).start(&format!("r{r}"), &scenario_input());
        ensure!(run.status == RunStatus::Completed, "run {r} ended {:?}", run.status);
        ensure!(count(&bus.invocations()) == expected, "run {r}: invocations {:?}", count(&bus.invocations()));
        let events = sink.lock().expect("sink").clone();
        let at = |kind: &str, node: &str| events.iter().position(|e| e.kind == kind && e.subject == node);
        for (join, before, after) in &joins {
            let done = before.iter().map(|t| at("task.completed", t)).collect::<Option<Vec<_>>>().ok_or(format!("run {r}: a branch of {join} never completed"))?;
            for t in after {
                let started = at("task.started", t).ok_or(format!("run {r}: {t} never started"))?;
                ensure!(done.iter().all(|d| *d < started), "run {r}: {t} started before all branches of {join} completed");
            }
        }
    }
    Ok(format!("8 services invoked once each; {} join(s) held over {runs} runs", joins.len()))
}

// -------------------------------------------------------------- criterion 8

fn replay_bytes(p: &Project, events: &[Event]) -> Result<Vec<String>, String> {
    let (_, out) = p.monitor(events, false).map_err(|e| e.to_string())?;
    Ok(out.reports.iter().map(|r| r.to_json()).collect())
}

fn lanes(p: &Project) -> Result<BTreeSet<String>, String> {
    let carto = p.cartography().map_err(|e| e.to_string())?;
    Ok(carto.graphs().flat_map(|g| g.nodes.iter().filter_map(|n| n.lane.clone())).collect())
}

fn criterion_8() -> Outcome {
    // (a) faulted service
    let (_d, p) = scenario_project()?;
    design(&p)?;
    let opts = RunOptions { faults: BTreeSet::from(["svc-transport-fast".to_string()]), ..Default::default() };
    p.stage_run("r1", &scenario_input(), &opts).map_err(|e| e.to_string())?;
    let events = scenario_events("fault.jsonl");
    let first = replay_bytes(&p, &events)?;
    ensure!(first == replay_bytes(&p, &events)?, "(a) replay is not byte-identical");
    let (_, out) = p.monitor(&events, false).map_err(|e| e.to_string())?;
    let last = out.reports.last().ok_or("(a) no report")?;
    ensure!(last.verdict && last.dominant == Some(Category::Execution), "(a) report {}", last.to_json());
    ensure!(out.reentry == ReEntry::RediscoverServices, "(a) re-entry {:?}", out.reentry);
    // the replacement needs the designer's validation before compiling
    let _ = p.monitor(&events, true);
    for pending in p.pending_matches().map_err(|e| e.to_string())? {
        p.decide(&pending.activity_id, &Decision::Accept { index: 0 }).map_err(|e| e.to_string())?;
    }
    p.stage_compile().map_err(|e| e.to_string())?;
    let bound: BTreeSet<String> = p
        .compiled()
        .map_err(|e| e.to_string())?
        .workflows
        .iter()
        .flat_map(|w| w.tasks.values().flat_map(|t| t.services.iter().map(|s| s.service.clone())))
        .collect();
    ensure!(!bound.contains("svc-transport-fast") && bound.contains("svc-transport-rail"), "(a) bindings {bound:?}");

    // (b) partner withdrawal
    let (_d, p) = scenario_project()?;
    design(&p)?;
    let events = scenario_events("withdrawal.jsonl");
    ensure!(replay_bytes(&p, &events)? == replay_bytes(&p, &events)?, "(b) replay is not byte-identical");
    let (_, out) = p.monitor(&events, true).map_err(|e| e.to_string())?;
    let last = out.reports.last().ok_or("(b) no report")?;
    ensure!(last.verdict && last.dominant == Some(Category::Network), "(b) report {}", last.to_json());
    ensure!(out.reentry == ReEntry::RededuceProcesses, "(b) re-entry {:?}", out.reentry);
    let l = lanes(&p)?;
    ensure!(!l.contains("carrier"), "(b) lanes after re-deduction {l:?}");

    // (c) objective change
    let (_d, p) = scenario_project()?;
    design(&p)?;
    let before = p.version();
    let events = scenario_events("objective.jsonl");
    ensure!(replay_bytes(&p, &events)? == replay_bytes(&p, &events)?, "(c) replay is not byte-identical");
    let (_, out) = p.monitor(&events, true).map_err(|e| e.to_string())?;
    let last = out.reports.last().ok_or("(c) no report")?;
    ensure!(last.verdict && last.dominant == Some(Category::Situation), "(c) report {}", last.to_json());
    ensure!(out.reentry == ReEntry::GatherKnowledge, "(c) re-entry {:?}", out.reentry);
    ensure!(out.adaptation.is_some_and(|a| a.new_version.is_none()) && p.version() == before, "(c) workflows changed");
    Ok("fault→execution→rediscover, withdrawal→network→rededuce, objective→situation→pause; replays byte-identical".into())
}

// -------------------------------------------------------------- criterion 9

fn random_twin(rng: &mut StdRng) -> TwinModel {
    let mut t = TwinModel::default();
    for i in 0..rng.gen_range(0..12) {
        let category = Category::ALL[rng.gen_range(0..3)];
        let attributes = (0..rng.gen_range(0..3)).map(|k| (format!("a{k}"), json!(rng.gen_range(0..3)))).collect();
        t.instances.insert(format!("x:{}", i + rng.gen_range(0..4)), ModelInstance { category, attributes });
    }
    t
}

fn random_event(rng: &mut StdRng, i: usize) -> Event {
    let source = if rng.gen_bool(0.5) { EventSource::Field } else { EventSource::Monitoring };
    let (kind, subject) = match rng.gen_range(0..5) {
        0 => ("task.completed", format!("t{}", rng.gen_range(0..4))),
        1 => ("task.faulted", format!("t{}", rng.gen_range(0..4))),
        2 => ("partner.withdrawn", format!("p{}", rng.gen_range(0..3))),
        3 => ("context.changed", "season".to_string()),
        _ => ("activity.confirmed", format!("t{}", rng.gen_range(0..4))),
    };
    Event::new(format!("e{i}"), source, kind, subject, i as u64)
        .with("service", "svc")
        .with("status", "done")
        .with("value", "summer")
}

fn criterion_9() -> Outcome {
    let mut rng = StdRng::seed_from_u64(9);
    let rules = CepRules::seed();
    let cfg = MeasureConfig::default();
    let pairs = 1000;
    for case in 0..pairs {
        let (a, b) = (random_twin(&mut rng), random_twin(&mut rng));
        for c in Category::ALL {
            let d = category_distance(&a, &b, c).distance;
            ensure!(category_distance(&a, &a, c).distance == 0.0, "case {case}: d(m,m) ≠ 0");
            ensure!(d == category_distance(&b, &a, c).distance, "case {case}: asymmetric");
            ensure!((0.0..=1.0).contains(&d), "case {case}: {d} out of bounds");
        }
        let twin = SituationTwin { expected: a.clone(), field: b.clone(), ..SituationTwin::new(TwinModel::default()) };
        let swapped = SituationTwin { expected: b.clone(), field: a.clone(), ..SituationTwin::new(TwinModel::default()) };
        let (r, s) = (measure(&twin, &cfg), measure(&swapped, &cfg));
        ensure!(r.total == s.total && (0.0..=1.0).contains(&r.total), "case {case}: total {} vs {}", r.total, s.total);
        ensure!(measure(&SituationTwin::new(a.clone()), &cfg).total == 0.0, "case {case}: identical twins differ");

        // events of one source never touch the other side's model
        let mut t = SituationTwin::new(a);
        for i in 0..8 {
            let e = random_event(&mut rng, i);
            let (exp, field) = (t.expected.clone(), t.field.clone());
            t.ingest(&e, &rules);
            match e.source {
                EventSource::Monitoring => ensure!(t.field == field, "case {case}: monitoring event changed the field model"),
                EventSource::Field => ensure!(t.expected == exp, "case {case}: field event changed the expected model"),
            }
        }
    }
    Ok(format!("{pairs} twin pairs: d(m,m)=0, symmetry, [0,1], source segregation"))
}

// ------------------------------------------------------------------- main

fn main() {
    let criteria: [(u32, &str, Duration, fn() -> Outcome); 9] = [
        (1, "rule group 1 mediators", Duration::from_secs(1), criterion_1),
        (2, "rule group 2 orders", Duration::from_secs(1), criterion_2),
        (3, "cartography soundness", Duration::from_secs(30), criterion_3),
        (4, "matching optimality and pattern reuse", Duration::from_secs(30), criterion_4),
        (5, "data reconciliation", Duration::from_secs(5), criterion_5),
        (6, "SA-BPMN round trip", Duration::from_secs(10), criterion_6),
        (7, "orchestration scenario", Duration::from_secs(20), criterion_7),
        (8, "agility scenarios", Duration::from_secs(30), criterion_8),
        (9, "twin measure properties", Duration::from_secs(10), criterion_9),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (n, name, limit, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str()) || *x == n.to_string()) {
            continue;
        }
        let t = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let took = t.elapsed();
        let (verdict, detail) = match &r {
            Ok(d) if took <= limit => ("PASS", d.clone()),
            Ok(d) => ("FAIL", format!("{d}; over the time limit")),
            Err(e) => ("FAIL", e.clone()),
        };
        if verdict == "FAIL" {
            failed += 1;
        }
        println!("criterion {n} {verdict}: {name} [{:.3}s / {}s] {detail}", took.as_secs_f64(), limit.as_secs());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
