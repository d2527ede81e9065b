//! Candidate search over single services and small compositions.

use std::collections::{BTreeMap, BTreeSet};

use super::{resolve_lenient, semantic_part, Activity, Binding, MatchConfig, Resolved, ServiceDescriptor};
use crate::ontology::Ontology;
use crate::text;

struct Scored<'a> {
    svc: &'a ServiceDescriptor,
    profile: Resolved,
}

fn push_unique(into: &mut Vec<String>, from: &[String]) {
    for c in from {
        if !into.contains(c) {
            into.push(c.clone());
        }
    }
}

fn merged(members: &[&Scored]) -> (String, Resolved) {
    let mut r = Resolved { capability: vec![], inputs: vec![], outputs: vec![] };
    for m in members {
        push_unique(&mut r.capability, &m.profile.capability);
        push_unique(&mut r.inputs, &m.profile.inputs);
        push_unique(&mut r.outputs, &m.profile.outputs);
    }
    let name = members.iter().map(|m| m.svc.name.as_str()).collect::<Vec<_>>().join(" ");
    (name, r)
}

/// Which member supplies each activity output: the most similar output at or
/// above the coverage threshold, ties to the lower service id. `None` when an
/// output is left uncovered or a member of a composition supplies nothing.
fn cover(a: &Resolved, members: &[&Scored], o: &Ontology, cfg: &MatchConfig) -> Option<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for want in &a.outputs {
        let mut best: Option<(f64, &str)> = None;
        for m in members {
            let sim = m.profile.outputs.iter().map(|have| o.similarity(want, have)).fold(0.0, f64::max);
            if sim >= cfg.coverage_threshold && best.is_none_or(|(b, id)| sim > b || (sim == b && m.svc.id.as_str() < id)) {
                best = Some((sim, &m.svc.id));
            }
        }
        map.insert(want.clone(), best?.1.to_string());
    }
    if members.len() > 1 {
        let used: BTreeSet<&String> = map.values().collect();
        if members.iter().any(|m| !used.contains(&m.svc.id)) {
            return None;
        }
    }
    Some(map)
}

fn covered_fraction(a: &Resolved, members: &[&Scored], o: &Ontology, cfg: &MatchConfig) -> f64 {
    if a.outputs.is_empty() {
        return 1.0;
    }
    let hit = a
        .outputs
        .iter()
        .filter(|w| members.iter().any(|m| m.profile.outputs.iter().any(|h| o.similarity(w, h) >= cfg.coverage_threshold)))
        .count();
    hit as f64 / a.outputs.len() as f64
}

fn raw_score(activity: &Activity, a: &Resolved, members: &[&Scored], o: &Ontology, cfg: &MatchConfig) -> f64 {
    let (name, profile) = merged(members);
    cfg.alpha * semantic_part(o, a, &profile) + (1.0 - cfg.alpha) * text::name_similarity(&activity.name, &name)
}

fn evaluate(activity: &Activity, a: &Resolved, members: &[&Scored], o: &Ontology, cfg: &MatchConfig) -> Option<Binding> {
    let coverage = cover(a, members, o, cfg)?;
    let mut services: Vec<String> = members.iter().map(|m| m.svc.id.clone()).collect();
    services.sort();
    Some(Binding { services, score: raw_score(activity, a, members, o, cfg), coverage })
}

fn rank(v: &mut Vec<Binding>) {
    v.sort_by(|x, y| {
        y.score
            .total_cmp(&x.score)
            .then(x.services.len().cmp(&y.services.len()))
            .then_with(|| x.services.cmp(&y.services))
    });
    v.dedup_by(|x, y| x.services == y.services);
}

fn subset_count(n: usize, k: usize) -> usize {
    let mut total = 0usize;
    let mut c = 1usize;
    for i in 1..=k.min(n) {
        c = c.saturating_mul(n - i + 1) / i;
        total = total.saturating_add(c);
    }
    total
}

fn combinations(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if !cur.is_empty() {
            f(cur);
        }
        if cur.len() == k {
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::new(), &mut f);
}

/// Ranked bindings for an activity. Every candidate covers all of the
/// activity's outputs. Small pools are searched exhaustively, larger ones
/// with a beam over growing compositions.
pub(crate) fn best_bindings(
    activity: &Activity,
    a: &Resolved,
    pool: &[&ServiceDescriptor],
    o: &Ontology,
    cfg: &MatchConfig,
) -> Vec<Binding> {
    let scored: Vec<Scored> = pool.iter().map(|s| Scored { svc: s, profile: resolve_lenient(o, &s.profile) }).collect();
    let k = cfg.k.max(1);
    let mut found = Vec::new();
    if subset_count(scored.len(), k) <= cfg.exhaustive_limit {
        combinations(scored.len(), k, |idx| {
            let members: Vec<&Scored> = idx.iter().map(|&i| &scored[i]).collect();
            found.extend(evaluate(activity, a, &members, o, cfg));
        });
    } else {
        let heuristic = |idx: &[usize]| {
            let members: Vec<&Scored> = idx.iter().map(|&i| &scored[i]).collect();
            (covered_fraction(a, &members, o, cfg), raw_score(activity, a, &members, o, cfg))
        };
        let mut frontier: Vec<Vec<usize>> = vec![vec![]];
        for _ in 0..k {
            let mut next: BTreeSet<Vec<usize>> = BTreeSet::new();
            for base in &frontier {
                for i in 0..scored.len() {
                    if base.contains(&i) {
                        continue;
                    }
                    let mut s = base.clone();
                    s.push(i);
                    s.sort();
                    next.insert(s);
                }
            }
            let mut ranked: Vec<(f64, f64, Vec<usize>)> = next
                .into_iter()
                .map(|s| {
                    let (c, r) = heuristic(&s);
                    (c, r, s)
                })
                .collect();
            for (_, _, s) in &ranked {
                let members: Vec<&Scored> = s.iter().map(|&i| &scored[i]).collect();
                found.extend(evaluate(activity, a, &members, o, cfg));
            }
            ranked.sort_by(|x, y| y.0.total_cmp(&x.0).then(y.1.total_cmp(&x.1)).then_with(|| x.2.cmp(&y.2)));
            ranked.truncate(cfg.beam_width.max(1));
            frontier = ranked.into_iter().map(|(_, _, s)| s).collect();
        }
    }
    rank(&mut found);
    found.truncate(cfg.max_candidates);
    found
}

/// Coverage map of a fixed set of services, as used for pattern hits.
pub(crate) fn coverage(
    a: &Resolved,
    ids: &[String],
    pool: &[&ServiceDescriptor],
    o: &Ontology,
    cfg: &MatchConfig,
) -> Option<BTreeMap<String, String>> {
    let scored: Vec<Scored> = ids
        .iter()
        .filter_map(|id| pool.iter().find(|s| &s.id == id))
        .map(|s| Scored { svc: s, profile: resolve_lenient(o, &s.profile) })
        .collect();
    let members: Vec<&Scored> = scored.iter().collect();
    cover(a, &members, o, cfg)
}

#[cfg(test)]
mod tests {
    use super::super::tests::{activity, profile, service};
    use super::super::*;
    use super::*;
    use crate::ontology::tests::five_node;

    fn resolved(o: &Ontology, p: &SemanticProfile) -> Resolved {
        resolve_profile(o, p).unwrap()
    }

    #[test]
    fn subset_counts() {
        assert_eq!(subset_count(4, 2), 4 + 6);
        assert_eq!(subset_count(30, 3), 30 + 435 + 4060);
        assert_eq!(subset_count(2, 3), 3);
    }

    #[test]
    fn composition_covers_split_outputs() {
        let o = five_node();
        let want = profile(&["A"], &["Root"], &["A1", "B"]);
        let reg = vec![
            service("s1", "first half", profile(&["A"], &["Root"], &["A1"])),
            service("s2", "second half", profile(&["A"], &["Root"], &["B"])),
            service("s3", "unrelated", profile(&["B"], &[], &["B"])),
        ];
        let pool: Vec<&ServiceDescriptor> = reg.iter().collect();
        let act = activity("t", "first second", want.clone());
        let got = best_bindings(&act, &resolved(&o, &want), &pool, &o, &MatchConfig::default());
        assert_eq!(got[0].services, vec!["s1".to_string(), "s2".to_string()]);
        assert_eq!(got[0].coverage["A1"], "s1");
        assert_eq!(got[0].coverage["B"], "s2");
        // no single service covers both outputs, and idle members are not allowed
        let sets: Vec<Vec<&str>> = got.iter().map(|b| b.services.iter().map(String::as_str).collect()).collect();
        assert_eq!(sets, vec![vec!["s1", "s2"], vec!["s1", "s3"]]);
    }

    #[test]
    fn beam_mode_still_finds_obvious_best() {
        let o = five_node();
        let want = profile(&["A1"], &["A"], &["A2"]);
        let mut reg: Vec<ServiceDescriptor> = (0..60)
            .map(|i| service(&format!("n{i:02}"), &format!("noise {i}"), profile(&["B"], &["B"], &["A2"])))
            .collect();
        reg.push(service("target", "pick parts", want.clone()));
        let pool: Vec<&ServiceDescriptor> = reg.iter().collect();
        let cfg = MatchConfig::default();
        assert!(subset_count(pool.len(), cfg.k) > cfg.exhaustive_limit);
        let act = activity("t", "pick parts", want.clone());
        let got = best_bindings(&act, &resolved(&o, &want), &pool, &o, &cfg);
        assert_eq!(got[0].services, vec!["target".to_string()]);
        assert_eq!(got[0].score, 1.0);
    }
}
