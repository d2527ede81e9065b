//! Browser bindings for three pure operations of the core crate: deducing
//! the processes of a collaboration model, scoring an activity against a
//! service, and converting a value between concepts. Results are JSON
//! strings so the page needs no generated types.

use mediate_core::deduction::{deduce_instances, extract_cartography, select_functions, RuleSet, DEFAULT_SELECTION_THRESHOLD};
use mediate_core::matching::{hybrid_score, SemanticProfile};
use mediate_core::model::{parse_model, validate_against, ModelError};
use mediate_core::ontology::{apply_completion, link_references, Ontology};
use mediate_core::reconcile::RuleBase;
use mediate_core::sa_bpmn::{document_from_cartography, export_sa_bpmn};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const SCENARIO_MODEL: &str = include_str!("../../core/data/scenarios/deliver-product/model.toml");

/// The bundled deliver-product model, as TOML.
#[wasm_bindgen]
pub fn scenario_model() -> String {
    SCENARIO_MODEL.to_string()
}

/// Concept ids of the seed ontology.
#[wasm_bindgen]
pub fn concepts() -> String {
    let o = Ontology::seed();
    json!(o.concepts().map(|c| c.id.as_str()).collect::<Vec<_>>()).to_string()
}

fn deduce_json(model_toml: &str) -> Result<Value, String> {
    let o = Ontology::seed();
    let m = match parse_model(model_toml) {
        Ok(m) => m,
        Err(ModelError::Invalid(r)) => return Ok(json!({ "findings": r.findings })),
        Err(e) => return Err(e.to_string()),
    };
    let linked = apply_completion(&m, &link_references(&m, &o, 0.5), true);
    let findings = validate_against(&linked, &o);
    if !findings.is_clean() {
        return Ok(json!({ "findings": findings.findings }));
    }
    let selection = select_functions(&linked, &o, DEFAULT_SELECTION_THRESHOLD);
    let (_, instances) = deduce_instances(&linked, &selection, &RuleSet::mediation()).map_err(|e| e.to_string())?;
    let carto = extract_cartography(&instances, &selection, &linked).map_err(|e| e.to_string())?;
    let bpmn = String::from_utf8(export_sa_bpmn(&document_from_cartography(&carto, &linked))).map_err(|e| e.to_string())?;
    let processes: Vec<Value> = carto
        .graphs()
        .map(|g| {
            let names = |id: &str| g.nodes.iter().find(|n| n.id == id).map_or(id.to_string(), |n| n.name.clone());
            json!({
                "id": g.id,
                "name": g.name,
                "tasks": g.tasks().map(|(n, _)| json!({ "id": n.id, "name": n.name, "lane": n.lane })).collect::<Vec<_>>(),
                "edges": g.edges.iter().map(|e| [names(&e.from), names(&e.to)]).collect::<Vec<_>>(),
            })
        })
        .collect();
    Ok(json!({ "findings": [], "mediators": instances.mediators.len(), "processes": processes, "bpmn": bpmn }))
}

/// Deduces the processes of a TOML collaboration model.
#[wasm_bindgen]
pub fn deduce(model_toml: &str) -> Result<String, JsError> {
    deduce_json(model_toml).map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

fn split(list: &str) -> Vec<String> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

/// Hybrid similarity of an activity and a service, each given as a name and
/// comma-separated capability concepts.
#[wasm_bindgen]
pub fn score(activity_name: &str, activity_concepts: &str, service_name: &str, service_concepts: &str, alpha: f64) -> f64 {
    let profile = |c: &str| SemanticProfile { capability: split(c), inputs: vec![], outputs: vec![] };
    hybrid_score(activity_name, &profile(activity_concepts), service_name, &profile(service_concepts), &Ontology::seed(), alpha.clamp(0.0, 1.0))
}

fn convert_json(from: &str, to: &str, value: &str) -> Result<Value, String> {
    let rules = RuleBase::seed();
    let input: Value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    let chain = rules.find_chain(from, to, 3).ok_or_else(|| format!("no conversion from {from} to {to} within 3 rules"))?;
    let out = rules.apply_chain(&chain, &input).map_err(|e| e.to_string())?;
    Ok(json!({ "chain": chain.iter().map(|s| s.rule.clone()).collect::<Vec<_>>(), "value": out }))
}

/// Converts a value between two data concepts with the seed rule base.
#[wasm_bindgen]
pub fn convert(from: &str, to: &str, value: &str) -> Result<String, JsError> {
    convert_json(from, to, value).map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_deduces_processes_with_bpmn() {
        let v = deduce_json(SCENARIO_MODEL).unwrap();
        assert!(v["processes"].as_array().unwrap().len() >= 2);
        assert!(v["bpmn"].as_str().unwrap().contains("bpmn:definitions"));
    }

    #[test]
    fn invalid_model_reports_findings() {
        let broken = SCENARIO_MODEL.replacen("inputs = [", "inputs = [\"ghost\", ", 1);
        let v = deduce_json(&broken).unwrap();
        assert!(!v["findings"].as_array().unwrap().is_empty());
    }

    #[test]
    fn conversions_follow_rules() {
        let v = convert_json("CelsiusTemperature", "FahrenheitTemperature", "100").unwrap();
        assert_eq!(v["value"], json!(212.0));
        let v = convert_json("UsDate", "UkDate", "12/31/2025").unwrap();
        assert_eq!(v["value"], "31/12/2025");
        assert!(convert_json("UsDate", "CelsiusTemperature", "1").is_err());
    }

    #[test]
    fn identical_descriptions_score_one() {
        let s = score("ship goods", "Transport", "ship goods", "Transport", 0.7);
        assert!((s - 1.0).abs() < 1e-12);
        assert!(score("ship goods", "Transport", "pay invoice", "Pay", 0.7) < s);
    }
}
