//! Knowledge completion: tie the model's concept references to ontology
//! concepts as `exact`, `same_as` or `near_by` links.

use serde::{Deserialize, Serialize};

use super::Ontology;
use crate::model::{CollaborationModel, ConceptRef, LinkKind};
use crate::text;

const MAX_CANDIDATES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub concept: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LinkStatus {
    /// Resolved without user input (exact label, declared synonym, or a link
    /// already present in the model).
    Confirmed { concept: String, link: LinkKind },
    /// Best candidate clears the near-by threshold; awaits confirmation.
    Proposed { candidates: Vec<Candidate> },
    /// Nothing clears the threshold; candidates kept for the designer.
    Unresolved { candidates: Vec<Candidate> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkOutcome {
    pub path: String,
    pub term: String,
    #[serde(flatten)]
    pub status: LinkStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompletionReport {
    pub outcomes: Vec<LinkOutcome>,
}

impl CompletionReport {
    /// Outcomes still needing a human decision.
    pub fn open(&self) -> impl Iterator<Item = &LinkOutcome> {
        self.outcomes.iter().filter(|o| !matches!(o.status, LinkStatus::Confirmed { .. }))
    }

    pub fn is_complete(&self) -> bool {
        self.open().next().is_none()
    }
}

fn token_similarity(o: &Ontology, a: &str, b: &str) -> f64 {
    if a == b {
        return 1.0;
    }
    let (Some(ca), Some(cb)) = (o.lexicon(a), o.lexicon(b)) else {
        return 0.0;
    };
    let mut best = 0.0f64;
    for x in ca {
        for y in cb {
            best = best.max(o.similarity(x, y));
        }
    }
    best
}

/// Soft Jaccard over token sets: tokens are paired greedily by semantic token
/// similarity (identical words, or words naming related concepts), and the
/// matched weight `M` gives `M / (|A| + |B| - M)`.
pub fn label_similarity(o: &Ontology, a: &str, b: &str) -> f64 {
    let ta: Vec<String> = text::token_set(a).into_iter().collect();
    let tb: Vec<String> = text::token_set(b).into_iter().collect();
    if ta.is_empty() || tb.is_empty() {
        return if ta.is_empty() && tb.is_empty() { 1.0 } else { 0.0 };
    }
    let mut pairs = Vec::new();
    for (i, x) in ta.iter().enumerate() {
        for (j, y) in tb.iter().enumerate() {
            let s = token_similarity(o, x, y);
            if s > 0.0 {
                pairs.push((s, i, j));
            }
        }
    }
    pairs.sort_by(|p, q| q.0.total_cmp(&p.0).then((p.1, p.2).cmp(&(q.1, q.2))));
    let mut used_a = vec![false; ta.len()];
    let mut used_b = vec![false; tb.len()];
    let mut matched = 0.0;
    for (s, i, j) in pairs {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            matched += s;
        }
    }
    matched / ((ta.len() + tb.len()) as f64 - matched)
}

/// Candidates for a free-text term, best first: label similarity descending,
/// then concept id.
pub fn rank_candidates(o: &Ontology, term: &str) -> Vec<Candidate> {
    let mut out: Vec<Candidate> = o
        .concepts()
        .map(|c| {
            let score = std::iter::once(c.label.as_str())
                .chain(c.alt_labels.iter().map(String::as_str))
                .chain(std::iter::once(c.id.as_str()))
                .map(|l| label_similarity(o, term, l))
                .fold(0.0, f64::max);
            Candidate { concept: c.id.clone(), score }
        })
        .filter(|c| c.score > 0.0)
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.concept.cmp(&b.concept)));
    out
}

fn resolve(o: &Ontology, r: &ConceptRef, near_by_threshold: f64) -> LinkStatus {
    if let (Some(c), Some(link)) = (&r.concept, r.link) {
        if o.concept(c).is_some() {
            return LinkStatus::Confirmed { concept: c.clone(), link };
        }
    }
    if let Some((id, primary)) = o.lookup_label(&r.term) {
        let link = if primary { LinkKind::Exact } else { LinkKind::SameAs };
        return LinkStatus::Confirmed { concept: id.to_string(), link };
    }
    let mut candidates = rank_candidates(o, &r.term);
    candidates.truncate(MAX_CANDIDATES);
    match candidates.first() {
        Some(top) if top.score >= near_by_threshold => LinkStatus::Proposed { candidates },
        _ => LinkStatus::Unresolved { candidates },
    }
}

/// Resolves every concept reference of the model. Never mutates either side;
/// use [`apply_completion`] to store the decisions on the model.
pub fn link_references(m: &CollaborationModel, o: &Ontology, near_by_threshold: f64) -> CompletionReport {
    let outcomes = m
        .concept_refs()
        .into_iter()
        .map(|(path, r)| LinkOutcome { path, term: r.term.clone(), status: resolve(o, r, near_by_threshold) })
        .collect();
    CompletionReport { outcomes }
}

/// Writes confirmed links into a copy of the model. With `accept_proposals`,
/// the top near-by proposal of each open reference is taken as well.
pub fn apply_completion(m: &CollaborationModel, report: &CompletionReport, accept_proposals: bool) -> CollaborationModel {
    let mut out = m.clone();
    let by_path: std::collections::BTreeMap<&str, &LinkStatus> =
        report.outcomes.iter().map(|o| (o.path.as_str(), &o.status)).collect();
    for (path, r) in out.concept_refs_mut() {
        match by_path.get(path.as_str()) {
            Some(LinkStatus::Confirmed { concept, link }) => {
                r.concept = Some(concept.clone());
                r.link = Some(*link);
            }
            Some(LinkStatus::Proposed { candidates }) if accept_proposals => {
                r.concept = Some(candidates[0].concept.clone());
                r.link = Some(LinkKind::NearBy);
            }
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::{parse_ontology, tests::five_node};

    fn fixture() -> Ontology {
        parse_ontology(
            r#"
Thing label "Thing"
Process subClassOf Thing
Object subClassOf Thing
Move subClassOf Process
Product subClassOf Object
Ship subClassOf Move
Deliver subClassOf Move
Goods subClassOf Product
DeliverProduct subClassOf Deliver
DeliverProduct label "Deliver Product"
Invoice subClassOf Object
Invoice altLabel "bill"
"#,
        )
        .unwrap()
    }

    #[test]
    fn exact_label_is_auto_confirmed() {
        let o = fixture();
        let r = ConceptRef::term("deliver product");
        assert_eq!(resolve(&o, &r, 0.5), LinkStatus::Confirmed { concept: "DeliverProduct".into(), link: LinkKind::Exact });
    }

    #[test]
    fn alt_label_is_same_as() {
        let o = fixture();
        assert_eq!(
            resolve(&o, &ConceptRef::term("Bill"), 0.5),
            LinkStatus::Confirmed { concept: "Invoice".into(), link: LinkKind::SameAs }
        );
    }

    #[test]
    fn ship_goods_proposes_deliver_product_first() {
        let o = fixture();
        // Oracle: hand-computed soft Jaccard.
        // depths: Thing 1, Process/Object 2, Move/Product 3, Ship/Deliver/Goods 4, DeliverProduct 5
        // ship~deliver = 2*3/8, goods~product = 2*3/7 -> M = 0.75 + 6/7
        let m = 0.75 + 6.0 / 7.0;
        let deliver_product = m / (4.0 - m);
        // "Ship" alone: M = 1 over 2 + 1 tokens
        let ship = 1.0 / (3.0 - 1.0);
        assert!(deliver_product > ship);

        let ranked = rank_candidates(&o, "ship goods");
        assert_eq!(ranked[0].concept, "DeliverProduct");
        assert!((ranked[0].score - deliver_product).abs() < 1e-12);
        // full ordering equals sorting all concepts by the stated score
        let mut oracle: Vec<(String, f64)> = o
            .concepts()
            .map(|c| {
                let s = [c.label.clone(), c.id.clone()]
                    .iter()
                    .chain(c.alt_labels.iter())
                    .map(|l| label_similarity(&o, "ship goods", l))
                    .fold(0.0, f64::max);
                (c.id.clone(), s)
            })
            .filter(|(_, s)| *s > 0.0)
            .collect();
        oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        assert_eq!(ranked.iter().map(|c| c.concept.clone()).collect::<Vec<_>>(), oracle.into_iter().map(|x| x.0).collect::<Vec<_>>());

        match resolve(&o, &ConceptRef::term("ship goods"), 0.5) {
            LinkStatus::Proposed { candidates } => assert_eq!(candidates[0].concept, "DeliverProduct"),
            s => panic!("{s:?}"),
        }
    }

    #[test]
    fn empty_ontology_leaves_everything_open() {
        let m = crate::model::parse_model(crate::model::tests::MINIMAL).unwrap();
        let report = link_references(&m, &Ontology::empty(), 0.5);
        assert!(!report.outcomes.is_empty());
        assert!(report.outcomes.iter().all(|o| matches!(o.status, LinkStatus::Unresolved { .. })));
        assert!(!report.is_complete());
    }

    #[test]
    fn apply_writes_links_on_the_model_only() {
        let m = crate::model::parse_model(crate::model::tests::MINIMAL).unwrap();
        let o = five_node();
        let before = o.len();
        let report = link_references(&m, &o, 0.5);
        let linked = apply_completion(&m, &report, false);
        assert_eq!(o.len(), before);
        assert_eq!(linked.partners.len(), m.partners.len());
    }

    #[test]
    fn similarity_bounds() {
        let o = fixture();
        for (a, b) in [("ship goods", "deliver product"), ("x", "y"), ("ship", "ship")] {
            let s = label_similarity(&o, a, b);
            assert!((0.0..=1.0).contains(&s));
        }
        assert_eq!(label_similarity(&o, "ship", "ship"), 1.0);
    }
}
