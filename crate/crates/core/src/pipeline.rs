//! Projects and the design-time pipeline.
//!
//! A project is a `mediate.toml` naming the model, the service registry and
//! optional rule files, plus an artifacts directory. Every stage reads the
//! artifacts of the stage before it and writes its own, so stages can run in
//! separate processes and re-running one on unchanged inputs rewrites the
//! same bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::agility::{
    dispatch, measure, select_adaptation, AdaptationRecord, Adapter, AgilityError, CepRules, DistanceReport,
    MeasureConfig, ReEntry, SituationTwin, TwinModel,
};
use crate::deduction::{
    deduce_instances, extract_cartography, select_functions, DeductionError, MediationInstances, ProcessCartography,
    RuleSet, Selection, DEFAULT_SELECTION_THRESHOLD,
};
use crate::events::{parse_event_log, write_event_log, Event};
use crate::matching::{
    activities, match_activity, resolve_uncovered, Activity, MatchConfig, MatchError, MatchResult, MatchStatus,
    PatternStore, Registry, Resolution, UncoveredChoice,
};
use crate::model::{load_model, validate_against, validate_model, CollaborationModel, ModelError, ValidationReport};
use crate::ontology::{apply_completion, link_references, load_ontology, CompletionReport, Ontology, OntologyError};
use crate::orchestrator::{
    compile, export_bpel, CompileError, CompileInput, CompiledProject, Coordinator, Engine, RunError, RunStatus,
    ServiceBus, WorkflowInstance,
};
use crate::reconcile::{DataMap, ReconcileConfig, ReconcileError, RuleBase};
use crate::sa_bpmn::{document_from_cartography, export_sa_bpmn, import_sa_bpmn, SaBpmnError};

pub const CONFIG_FILE: &str = "mediate.toml";
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Model,
    Deduce,
    Match,
    Reconcile,
    Compile,
    Run,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Model, Stage::Deduce, Stage::Match, Stage::Reconcile, Stage::Compile, Stage::Run];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Model => "model",
            Stage::Deduce => "deduce",
            Stage::Match => "match",
            Stage::Reconcile => "reconcile",
            Stage::Compile => "compile",
            Stage::Run => "run",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL.into_iter().find(|st| st.as_str() == s).ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{stage} needs {missing}; run the {needs} stage first")]
    Prerequisite { stage: Stage, needs: Stage, missing: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("model is invalid:\n{0}")]
    Invalid(ValidationReport),
    #[error("model changed: token {given} is stale, current is {current}")]
    Stale { given: String, current: String },
    #[error("concept references need a decision: {}", .0.join(", "))]
    Unlinked(Vec<String>),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Deduction(#[from] DeductionError),
    #[error(transparent)]
    SaBpmn(#[from] SaBpmnError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Reconcile(#[from] ReconcileError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error("run input lacks {}", .0.join(", "))]
    Input(Vec<String>),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Agility(#[from] AgilityError),
}

impl PipelineError {
    /// Process exit code for the failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Prerequisite { .. } => 3,
            PipelineError::Io { .. } => 4,
            PipelineError::Model(_) | PipelineError::Invalid(_) | PipelineError::Stale { .. } | PipelineError::Unlinked(_) | PipelineError::Ontology(_) => 10,
            PipelineError::Deduction(_) | PipelineError::SaBpmn(_) => 11,
            PipelineError::Match(_) => 12,
            PipelineError::Reconcile(_) => 13,
            PipelineError::Compile(_) => 14,
            PipelineError::Input(_) | PipelineError::Run(_) => 15,
            PipelineError::Agility(_) => 16,
        }
    }
}

type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn io_err(path: &Path, e: impl fmt::Display) -> PipelineError {
    PipelineError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgilityConfig {
    #[serde(flatten)]
    pub measure: MeasureConfig,
    /// Dispatch adaptations without asking.
    pub auto_dispatch: bool,
}

impl Default for AgilityConfig {
    fn default() -> Self {
        Self { measure: MeasureConfig::default(), auto_dispatch: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    pub model: PathBuf,
    pub registry: PathBuf,
    /// Seed ontology when absent.
    pub ontology: Option<PathBuf>,
    /// Seed transformation rules when absent.
    pub transforms: Option<PathBuf>,
    /// Seed CEP rules when absent.
    pub cep_rules: Option<PathBuf>,
    /// Defaults to `patterns.jsonl` in the artifacts directory.
    pub patterns: Option<PathBuf>,
    pub artifacts: PathBuf,
    pub selection_threshold: f64,
    pub near_by_threshold: f64,
    /// Take the best near-by proposal for references without exact links.
    pub accept_proposals: bool,
    /// Accept the top candidate of matches awaiting validation.
    pub auto_accept: bool,
    pub matching: MatchConfig,
    pub reconcile: ReconcileConfig,
    pub agility: AgilityConfig,
    /// Edge id → condition, for exclusive gateways.
    pub conditions: BTreeMap<String, String>,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        Self {
            model: "model.toml".into(),
            registry: "registry.toml".into(),
            ontology: None,
            transforms: None,
            cep_rules: None,
            patterns: None,
            artifacts: ".mediate".into(),
            selection_threshold: DEFAULT_SELECTION_THRESHOLD,
            near_by_threshold: 0.5,
            accept_proposals: false,
            auto_accept: false,
            matching: MatchConfig::default(),
            reconcile: ReconcileConfig::default(),
            agility: AgilityConfig::default(),
            conditions: BTreeMap::new(),
        }
    }
}

impl ProjectConfig {
    pub fn check_ranges(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(PipelineError::Config(format!("{name} = {v} is outside [0,1]")))
            }
        };
        unit("selection_threshold", self.selection_threshold)?;
        unit("near_by_threshold", self.near_by_threshold)?;
        let m = &self.matching;
        unit("matching.alpha", m.alpha)?;
        unit("matching.auto_threshold", m.auto_threshold)?;
        unit("matching.floor", m.floor)?;
        unit("matching.coverage_threshold", m.coverage_threshold)?;
        if m.k == 0 || m.beam_width == 0 || m.max_candidates == 0 {
            return Err(PipelineError::Config("matching.k, beam_width and max_candidates must be positive".into()));
        }
        unit("reconcile.threshold", self.reconcile.threshold)?;
        self.agility.measure.validate().map_err(|e| PipelineError::Config(e.to_string()))
    }
}

/// Withdrawn partners and excluded services accumulated by adaptations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Exclusions {
    pub withdrawn_partners: BTreeSet<String>,
    pub excluded_services: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub schema_version: u32,
    pub stage: Stage,
    /// Written files, relative to the artifacts directory.
    pub artifacts: Vec<String>,
    pub summary: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeductionArtifact {
    pub selection: Selection,
    pub instances: MediationInstances,
}

/// A designer's decision on one match.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum Decision {
    Accept { index: usize },
    Reject,
    GenerateGuiService,
    MarkExternal,
    Defer,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunOptions {
    /// Services made to fail for this run.
    pub faults: BTreeSet<String>,
    /// Runs tasks one at a time.
    pub sequential: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorOutcome {
    pub reports: Vec<DistanceReport>,
    pub reentry: ReEntry,
    pub adaptation: Option<AdaptationRecord>,
}

#[derive(Debug, Clone)]
pub struct Project {
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
    pub config: ProjectConfig,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("artifact serializes") + "\n"
}

fn short_hash(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().take(6).map(|b| format!("{b:02x}")).collect()
}

impl Project {
    pub fn new(root: impl Into<PathBuf>, config: ProjectConfig) -> Self {
        Self { root: root.into(), config }
    }

    /// Reads `mediate.toml` (or the given file) and checks it.
    pub fn load(config_path: impl AsRef<Path>) -> Result<Self> {
        let path = config_path.as_ref();
        let path = if path.is_dir() { path.join(CONFIG_FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let config: ProjectConfig = toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let p = Self::new(root, config);
        p.validate()?;
        Ok(p)
    }

    /// Configuration values in range and referenced input files present.
    pub fn validate(&self) -> Result<()> {
        self.config.check_ranges()?;
        let c = &self.config;
        let files = [Some(&c.model), Some(&c.registry), c.ontology.as_ref(), c.transforms.as_ref(), c.cep_rules.as_ref()];
        for f in files.into_iter().flatten() {
            let p = self.resolve(f);
            if !p.is_file() {
                return Err(PipelineError::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn artifacts(&self) -> PathBuf {
        self.resolve(&self.config.artifacts)
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.artifacts().join(name)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<String> {
        let path = self.artifact(name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        std::fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
        Ok(name.to_string())
    }

    fn prerequisite<T: DeserializeOwned>(&self, stage: Stage, needs: Stage, name: &str) -> Result<T> {
        let path = self.artifact(name);
        if !path.is_file() {
            return Err(PipelineError::Prerequisite { stage, needs, missing: name.to_string() });
        }
        read_json(&path)
    }

    fn report(&self, stage: Stage, mut artifacts: Vec<String>, summary: Value) -> Result<StageReport> {
        let name = format!("reports/{stage}.json");
        artifacts.push(name.clone());
        let r = StageReport { schema_version: REPORT_SCHEMA_VERSION, stage, artifacts, summary };
        self.write(&name, to_json(&r))?;
        Ok(r)
    }

    // ------------------------------------------------------------ inputs

    pub fn ontology(&self) -> Result<Ontology> {
        match &self.config.ontology {
            Some(p) => Ok(load_ontology(self.resolve(p))?),
            None => Ok(Ontology::seed()),
        }
    }

    pub fn transforms(&self) -> Result<RuleBase> {
        match &self.config.transforms {
            Some(p) => Ok(RuleBase::load(self.resolve(p))?),
            None => Ok(RuleBase::seed()),
        }
    }

    pub fn cep_rules(&self) -> Result<CepRules> {
        match &self.config.cep_rules {
            Some(p) => Ok(CepRules::load(self.resolve(p))?),
            None => Ok(CepRules::seed()),
        }
    }

    pub fn source_model(&self) -> Result<CollaborationModel> {
        Ok(load_model(self.resolve(&self.config.model))?)
    }

    pub fn exclusions(&self) -> Result<Exclusions> {
        let p = self.artifact("exclusions.json");
        if p.is_file() {
            read_json(&p)
        } else {
            Ok(Exclusions::default())
        }
    }

    fn save_exclusions(&self, x: &Exclusions) -> Result<()> {
        self.write("exclusions.json", to_json(x)).map(|_| ())
    }

    /// The configured registry plus generated services, minus excluded ones.
    pub fn registry(&self) -> Result<Registry> {
        let mut r = Registry::load(self.resolve(&self.config.registry))?;
        let generated = self.artifact("generated.toml");
        if generated.is_file() {
            for s in Registry::load(&generated)?.services {
                r.upsert(s);
            }
        }
        Ok(r.without(&self.exclusions()?.excluded_services))
    }

    pub fn patterns(&self) -> Result<PatternStore> {
        let p = match &self.config.patterns {
            Some(p) => self.resolve(p),
            None => self.artifact("patterns.jsonl"),
        };
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        Ok(PatternStore::open(p)?)
    }

    // --------------------------------------------------------- artifacts

    pub fn linked_model(&self) -> Result<CollaborationModel> {
        self.prerequisite(Stage::Deduce, Stage::Model, "model.json")
    }

    pub fn deduction(&self) -> Result<DeductionArtifact> {
        self.prerequisite(Stage::Match, Stage::Deduce, "deduction.json")
    }

    pub fn cartography(&self) -> Result<ProcessCartography> {
        self.prerequisite(Stage::Match, Stage::Deduce, "cartography.json")
    }

    pub fn matches(&self) -> Result<Vec<MatchResult>> {
        self.prerequisite(Stage::Compile, Stage::Match, "matches.json")
    }

    pub fn compiled(&self) -> Result<CompiledProject> {
        let path = self.artifact("workflows.json");
        if !path.is_file() {
            return Err(PipelineError::Prerequisite { stage: Stage::Run, needs: Stage::Compile, missing: "workflows.json".into() });
        }
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        CompiledProject::from_json(&text).map_err(|e| io_err(&path, e))
    }

    /// Identifies the compiled workflows; `none` before compilation.
    pub fn version(&self) -> String {
        std::fs::read(self.artifact("workflows.json")).map(|b| short_hash(&b)).unwrap_or_else(|_| "none".into())
    }

    pub fn compiled_version(&self, version: &str) -> Result<CompiledProject> {
        let path = self.artifact(&format!("versions/{version}.json"));
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        CompiledProject::from_json(&text).map_err(|e| io_err(&path, e))
    }

    // ------------------------------------------------------------ stages

    /// Validates the model and links its concept references.
    pub fn stage_model(&self) -> Result<StageReport> {
        let o = self.ontology()?;
        let m = self.source_model()?;
        let completion: CompletionReport = link_references(&m, &o, self.config.near_by_threshold);
        let linked = apply_completion(&m, &completion, self.config.accept_proposals);
        let open: Vec<String> = linked.concept_refs().into_iter().filter(|(_, r)| !r.is_resolved()).map(|(p, r)| format!("{p} ({})", r.term)).collect();
        let findings = validate_against(&linked, &o);
        let mut files = vec![self.write("completion.json", to_json(&completion))?];
        if !findings.is_clean() {
            return Err(PipelineError::Invalid(findings));
        }
        if !open.is_empty() {
            return Err(PipelineError::Unlinked(open));
        }
        files.push(self.write("model.json", to_json(&linked))?);
        let summary = json!({
            "partners": linked.partners.len(),
            "functions": linked.functions().count(),
            "objectives": linked.objectives.len(),
            "references": completion.outcomes.len(),
        });
        self.report(Stage::Model, files, summary)
    }

    /// Selects functions, runs the deduction rules and extracts the
    /// cartography, honouring withdrawn partners.
    pub fn stage_deduce(&self) -> Result<StageReport> {
        let o = self.ontology()?;
        let mut m = self.linked_model()?;
        for p in &self.exclusions()?.withdrawn_partners {
            m = m.without_partner(p);
        }
        let selection = select_functions(&m, &o, self.config.selection_threshold);
        let (_, instances) = deduce_instances(&m, &selection, &RuleSet::mediation())?;
        let carto = extract_cartography(&instances, &selection, &m)?;
        let doc = document_from_cartography(&carto, &m);
        let summary = json!({
            "mediators": instances.mediators.len(),
            "orders": instances.relationships.len(),
            "processes": carto.sub_processes.iter().map(|s| s.graph.id.clone()).collect::<Vec<_>>(),
            "tasks": carto.graphs().map(|g| g.tasks().count()).sum::<usize>(),
        });
        let files = vec![
            self.write("deduction.json", to_json(&DeductionArtifact { selection, instances }))?,
            self.write("cartography.json", to_json(&carto))?,
            self.write("process.bpmn", export_sa_bpmn(&doc))?,
        ];
        self.report(Stage::Deduce, files, summary)
    }

    /// Activities of the exported SA-BPMN document, with the deduction model.
    pub fn activities(&self) -> Result<(CollaborationModel, Vec<Activity>)> {
        let m = self.linked_model()?;
        let path = self.artifact("process.bpmn");
        if !path.is_file() {
            return Err(PipelineError::Prerequisite { stage: Stage::Match, needs: Stage::Deduce, missing: "process.bpmn".into() });
        }
        let xml = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
        let doc = import_sa_bpmn(&xml)?;
        let acts = activities(&doc, &m);
        Ok((m, acts))
    }

    pub fn stage_match(&self) -> Result<StageReport> {
        let o = self.ontology()?;
        let (_, acts) = self.activities()?;
        let registry = self.registry()?;
        let patterns = self.patterns()?;
        let mut results = Vec::new();
        for a in &acts {
            let mut r = match_activity(a, &registry, &patterns, &o, &self.config.matching)?;
            if self.config.auto_accept && r.status == MatchStatus::AwaitingValidation {
                r.accept(0)?;
            }
            results.push(r);
        }
        self.report_matches(results)
    }

    fn report_matches(&self, results: Vec<MatchResult>) -> Result<StageReport> {
        let count = |s: MatchStatus| results.iter().filter(|r| r.status == s && !r.deferred).count();
        let summary = json!({
            "activities": results.len(),
            "auto": count(MatchStatus::Auto),
            "awaiting_validation": count(MatchStatus::AwaitingValidation),
            "uncovered": count(MatchStatus::Uncovered),
            "deferred": results.iter().filter(|r| r.deferred).count(),
            "bindings": results.iter().map(|r| (r.activity_id.clone(), r.chosen.as_ref().map(|b| b.services.clone()))).collect::<BTreeMap<_, _>>(),
        });
        let files = vec![self.write("matches.json", to_json(&results))?];
        self.report(Stage::Match, files, summary)
    }

    /// Matches still needing a decision.
    pub fn pending_matches(&self) -> Result<Vec<MatchResult>> {
        Ok(self.matches()?.into_iter().filter(|r| !r.is_ready()).collect())
    }

    pub fn decide(&self, activity: &str, decision: &Decision) -> Result<MatchResult> {
        let mut results = self.matches()?;
        let r = results
            .iter_mut()
            .find(|r| r.activity_id == activity)
            .ok_or_else(|| PipelineError::Match(MatchError::NotChosen(activity.to_string())))?;
        let uncovered = |choice| -> Result<Resolution> {
            let (_, acts) = self.activities()?;
            let a = acts.iter().find(|a| a.id == activity).ok_or_else(|| PipelineError::Match(MatchError::NotChosen(activity.to_string())))?;
            Ok(resolve_uncovered(a, choice))
        };
        match decision {
            Decision::Accept { index } => r.accept(*index)?,
            Decision::Reject => r.reject(),
            Decision::Defer => {
                if let Resolution::Deferred { .. } = uncovered(UncoveredChoice::Defer)? {
                    r.deferred = true;
                }
            }
            Decision::GenerateGuiService | Decision::MarkExternal => {
                let choice = if *decision == Decision::MarkExternal { UncoveredChoice::MarkExternal } else { UncoveredChoice::GenerateGuiService };
                if let Resolution::Service(svc) = uncovered(choice)? {
                    let path = self.artifact("generated.toml");
                    let mut generated = if path.is_file() { Registry::load(&path)? } else { Registry::default() };
                    generated.upsert(svc.clone());
                    self.write("generated.toml", generated.to_toml_string())?;
                    let (_, acts) = self.activities()?;
                    let a = acts.iter().find(|a| a.id == activity).expect("found above");
                    r.bind_to(&svc, a);
                }
            }
        }
        let out = r.clone();
        self.report_matches(results)?;
        Ok(out)
    }

    fn compile_project(&self, stage: Stage) -> Result<CompiledProject> {
        let o = self.ontology()?;
        let rules = self.transforms()?;
        let m = self.linked_model()?;
        let mut model = m.clone();
        for p in &self.exclusions()?.withdrawn_partners {
            model = model.without_partner(p);
        }
        let carto = self.cartography()?;
        let matches = self.prerequisite::<Vec<MatchResult>>(stage, Stage::Match, "matches.json")?;
        let registry = self.registry()?;
        Ok(compile(&CompileInput {
            cartography: &carto,
            matches: &matches,
            registry: &registry,
            model: &model,
            ontology: &o,
            rules: &rules,
            reconcile: &self.config.reconcile,
            conditions: &self.config.conditions,
        })?)
    }

    /// Builds the data map of every bound service.
    pub fn stage_reconcile(&self) -> Result<StageReport> {
        let p = self.compile_project(Stage::Reconcile)?;
        let maps: BTreeMap<String, BTreeMap<String, &DataMap>> = p
            .workflows
            .iter()
            .flat_map(|w| &w.tasks)
            .map(|(node, t)| (node.clone(), t.services.iter().map(|s| (s.service.clone(), &s.map)).collect()))
            .collect();
        let conversions: usize = maps.values().flat_map(|m| m.values()).flat_map(|m| &m.assignments).filter(|a| !a.source.chain.is_empty()).count();
        let summary = json!({ "tasks": maps.len(), "conversions": conversions, "start_fields": p.inputs });
        let files = vec![self.write("datamaps.json", to_json(&maps))?];
        self.report(Stage::Reconcile, files, summary)
    }

    pub fn stage_compile(&self) -> Result<StageReport> {
        let p = self.compile_project(Stage::Compile)?;
        let text = p.to_json();
        let mut files = vec![self.write("workflows.json", &text)?];
        let version = short_hash(text.as_bytes());
        files.push(self.write(&format!("versions/{version}.json"), &text)?);
        for w in &p.workflows {
            files.push(self.write(&format!("bpel/{}.bpel", w.id), export_bpel(w))?);
        }
        let summary = json!({
            "version": version,
            "order": p.order,
            "workflows": p.workflows.iter().map(|w| (w.id.clone(), w.subscribes.clone())).collect::<BTreeMap<_, _>>(),
            "services": p.services.iter().map(|s| s.id.clone()).collect::<Vec<_>>(),
        });
        self.report(Stage::Compile, files, summary)
    }

    // -------------------------------------------------------------- runs

    fn engine(&self, project: &CompiledProject, opts: &RunOptions, clock: u64) -> Result<(Engine, Arc<Mutex<Vec<Event>>>)> {
        let bus = ServiceBus::new(project.services.clone());
        for f in &opts.faults {
            bus.set_fault(f, true);
        }
        let sink = Arc::new(Mutex::new(Vec::new()));
        let mut e = Engine::new(Arc::new(bus), Arc::new(self.transforms()?)).with_sink(sink.clone()).with_clock(clock);
        if opts.sequential {
            e = e.sequential();
        }
        Ok((e, sink))
    }

    fn run_dir(id: &str) -> String {
        format!("runs/{id}")
    }

    fn save_run(&self, run: &crate::orchestrator::ProjectRun, engine: &Engine, events: &[Event], version: &str) -> Result<Vec<String>> {
        let dir = Self::run_dir(&run.id);
        let mut files = vec![];
        let mut state = serde_json::to_value(run).expect("run serializes");
        state["version"] = json!(version);
        files.push(self.write(&format!("{dir}/run.json"), to_json(&state))?);
        for inst_id in run.instances.values() {
            if let Some(inst) = engine.instance(inst_id) {
                files.push(self.write(&format!("{dir}/instances/{inst_id}.jsonl"), inst.to_jsonl())?);
            }
        }
        let log_path = self.artifact(&format!("{dir}/events.jsonl"));
        let mut log = std::fs::read_to_string(&log_path).unwrap_or_default();
        log.push_str(&write_event_log(events));
        files.push(self.write(&format!("{dir}/events.jsonl"), log)?);
        let mut inv: Vec<Value> = read_json(&self.artifact(&format!("{dir}/invocations.json"))).unwrap_or_default();
        let mut fresh: Vec<_> = engine.bus().invocations();
        fresh.sort_by(|a, b| (&a.instance, &a.node, &a.service).cmp(&(&b.instance, &b.node, &b.service)));
        inv.extend(fresh.into_iter().map(|i| json!({"instance": i.instance, "node": i.node, "service": i.service, "payload_hash": i.payload_hash})));
        files.push(self.write(&format!("{dir}/invocations.json"), to_json(&inv))?);
        Ok(files)
    }

    /// Stored run, its workflows and an engine holding its instances.
    pub fn load_run(&self, id: &str, opts: &RunOptions) -> Result<(crate::orchestrator::ProjectRun, CompiledProject, Engine, Arc<Mutex<Vec<Event>>>)> {
        let dir = Self::run_dir(id);
        let path = self.artifact(&format!("{dir}/run.json"));
        if !path.is_file() {
            return Err(PipelineError::Run(RunError::UnknownInstance(id.to_string())));
        }
        let state: Value = read_json(&path)?;
        let version = state["version"].as_str().unwrap_or("none").to_string();
        let run: crate::orchestrator::ProjectRun = serde_json::from_value(state).map_err(|e| io_err(&path, e))?;
        let project = self.compiled_version(&version).or_else(|_| self.compiled())?;
        let events = std::fs::read_to_string(self.artifact(&format!("{dir}/events.jsonl"))).unwrap_or_default();
        let clock = crate::events::parse_event_log(&events).unwrap_or_default().iter().map(|e| e.timestamp + 1).max().unwrap_or(0);
        let (engine, sink) = self.engine(&project, opts, clock)?;
        for inst_id in run.instances.values() {
            let p = self.artifact(&format!("{dir}/instances/{inst_id}.jsonl"));
            if p.is_file() {
                let text = std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
                engine.insert(WorkflowInstance::from_jsonl(&text)?);
            }
        }
        Ok((run, project, engine, sink))
    }

    fn run_report(&self, run: &crate::orchestrator::ProjectRun, engine: &Engine, files: Vec<String>) -> Result<StageReport> {
        let mut invoked: BTreeMap<String, usize> = BTreeMap::new();
        for i in engine.bus().invocations() {
            *invoked.entry(i.service).or_default() += 1;
        }
        let pending: Vec<(String, String)> = run
            .current_instance()
            .and_then(|i| engine.instance(i))
            .map(|inst| inst.pending.iter().map(|(n, (s, _))| (n.clone(), s.clone())).collect())
            .unwrap_or_default();
        let summary = json!({ "run": run.id, "status": run.status, "published": run.published, "invocations": invoked, "pending": pending });
        self.report(Stage::Run, files, summary)
    }

    /// Starts a run of the compiled workflows with the given start input.
    pub fn stage_run(&self, id: &str, input: &Map<String, Value>, opts: &RunOptions) -> Result<(StageReport, crate::orchestrator::ProjectRun)> {
        let project = self.compiled()?;
        let missing: Vec<String> = project.inputs.iter().filter(|f| !input.contains_key(&f.name)).map(|f| f.name.clone()).collect();
        if !missing.is_empty() {
            return Err(PipelineError::Input(missing));
        }
        let dir = self.artifact(&Self::run_dir(id));
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        }
        let (engine, sink) = self.engine(&project, opts, 0)?;
        let run = Coordinator::new(&project, &engine).start(id, input);
        self.after_run(&run)?;
        let events = std::mem::take(&mut *sink.lock().expect("sink poisoned"));
        let files = self.save_run(&run, &engine, &events, &self.version())?;
        Ok((self.run_report(&run, &engine, files)?, run))
    }

    /// Records validated bindings as patterns once a run completes.
    fn after_run(&self, run: &crate::orchestrator::ProjectRun) -> Result<()> {
        if run.status != RunStatus::Completed {
            return Ok(());
        }
        let mut patterns = self.patterns()?;
        for r in self.matches()? {
            if let Some(b) = r.chosen.filter(|_| !r.from_pattern) {
                patterns.record_success(&r.fingerprint, &b.services)?;
            }
        }
        Ok(())
    }

    fn continue_run(
        &self,
        id: &str,
        f: impl FnOnce(&Coordinator, &mut crate::orchestrator::ProjectRun) -> Result<(), RunError>,
    ) -> Result<(StageReport, crate::orchestrator::ProjectRun)> {
        let (mut run, project, engine, sink) = self.load_run(id, &RunOptions::default())?;
        let version = if self.compiled_version(&self.version()).is_ok_and(|p| p == project) { self.version() } else { "none".into() };
        f(&Coordinator::new(&project, &engine), &mut run)?;
        self.after_run(&run)?;
        let events = std::mem::take(&mut *sink.lock().expect("sink poisoned"));
        let state: Value = read_json(&self.artifact(&format!("{}/run.json", Self::run_dir(id))))?;
        let version = state["version"].as_str().map(String::from).unwrap_or(version);
        let files = self.save_run(&run, &engine, &events, &version)?;
        Ok((self.run_report(&run, &engine, files)?, run))
    }

    pub fn complete_task(&self, id: &str, node: &str, payload: Map<String, Value>) -> Result<(StageReport, crate::orchestrator::ProjectRun)> {
        self.continue_run(id, |c, run| c.complete_human_task(run, node, payload))
    }

    pub fn interrupt_run(&self, id: &str) -> Result<(StageReport, crate::orchestrator::ProjectRun)> {
        self.continue_run(id, |c, run| c.interrupt(run))
    }

    pub fn resume_run(&self, id: &str) -> Result<(StageReport, crate::orchestrator::ProjectRun)> {
        self.continue_run(id, |c, run| c.resume(run))
    }

    /// Continues a stopped run under the current workflows, reusing the
    /// outputs of tasks whose bindings did not change.
    pub fn migrate_run(&self, old: &str, id: &str) -> Result<(StageReport, crate::orchestrator::ProjectRun)> {
        let (old_run, old_project, engine, _) = self.load_run(old, &RunOptions::default())?;
        let project = self.compiled()?;
        let (fresh, sink) = self.engine(&project, &RunOptions::default(), 0)?;
        for inst in old_run.instances.values().filter_map(|i| engine.instance(i)) {
            fresh.insert(inst);
        }
        let run = Coordinator::new(&project, &fresh).migrate(&old_project, &old_run, id)?;
        self.after_run(&run)?;
        let events = std::mem::take(&mut *sink.lock().expect("sink poisoned"));
        let files = self.save_run(&run, &fresh, &events, &self.version())?;
        Ok((self.run_report(&run, &fresh, files)?, run))
    }

    /// Ids of stored runs.
    pub fn runs(&self) -> Vec<String> {
        let Ok(entries) = std::fs::read_dir(self.artifact("runs")) else { return vec![] };
        let mut ids: Vec<String> = entries.filter_map(|e| e.ok()).filter(|e| e.path().join("run.json").is_file()).filter_map(|e| e.file_name().into_string().ok()).collect();
        ids.sort();
        ids
    }

    /// Stages in pipeline order; `run` needs the start input.
    pub fn run_pipeline(&self, stages: &[Stage], run: Option<(&str, &Map<String, Value>, &RunOptions)>) -> Result<Vec<StageReport>> {
        let mut ordered: Vec<Stage> = stages.to_vec();
        ordered.sort();
        ordered.dedup();
        let mut out = Vec::new();
        for s in ordered {
            out.push(match s {
                Stage::Model => self.stage_model()?,
                Stage::Deduce => self.stage_deduce()?,
                Stage::Match => self.stage_match()?,
                Stage::Reconcile => self.stage_reconcile()?,
                Stage::Compile => self.stage_compile()?,
                Stage::Run => {
                    let (id, input, opts) = run.ok_or_else(|| PipelineError::Config("the run stage needs a start input".into()))?;
                    self.stage_run(id, input, opts)?.0
                }
            });
        }
        Ok(out)
    }

    // ----------------------------------------------------------- agility

    /// Both twin models as designed: the linked model and the compiled
    /// workflows, when present.
    pub fn initial_twin(&self) -> Result<TwinModel> {
        let m = self.linked_model()?;
        let p = self.compiled().ok();
        Ok(TwinModel::from_model(&m, p.as_ref()))
    }

    /// Replays events over the designed twin, measuring after each one.
    /// With `dispatch`, a positive verdict re-enters the pipeline.
    pub fn monitor(&self, events: &[Event], dispatch_adaptation: bool) -> Result<(SituationTwin, MonitorOutcome)> {
        let rules = self.cep_rules()?;
        let cfg = &self.config.agility.measure;
        let mut twin = SituationTwin::new(self.initial_twin()?);
        let mut reports = Vec::with_capacity(events.len());
        for e in events {
            twin.ingest(e, &rules);
            reports.push(measure(&twin, cfg));
        }
        let last = reports.last().cloned().unwrap_or_else(|| measure(&twin, cfg));
        let reentry = select_adaptation(&last);
        let mut adaptation = None;
        if dispatch_adaptation && reentry != ReEntry::None {
            let record = dispatch(reentry, &twin, &mut FileAdapter { project: self })?;
            let name = format!("adaptations/{}-{}.json", record.old_version, record.new_version.as_deref().unwrap_or("pending"));
            self.write(&name, to_json(&record))?;
            adaptation = Some(record);
        }
        Ok((twin, MonitorOutcome { reports, reentry, adaptation }))
    }
}

impl Project {
    /// Content token of the model file for optimistic concurrency.
    pub fn model_token(&self) -> Result<String> {
        let path = self.resolve(&self.config.model);
        std::fs::read(&path).map(|b| short_hash(&b)).map_err(|e| io_err(&path, e))
    }

    /// Replaces the model file if it validates and `token`, when given, is
    /// still current. Returns the new token.
    pub fn save_model(&self, m: &CollaborationModel, token: Option<&str>) -> Result<String> {
        let current = self.model_token()?;
        if let Some(given) = token.filter(|t| *t != current) {
            return Err(PipelineError::Stale { given: given.to_string(), current });
        }
        let report = validate_model(m);
        if !report.is_clean() {
            return Err(PipelineError::Invalid(report));
        }
        let path = self.resolve(&self.config.model);
        let text = m.to_toml_string();
        std::fs::write(&path, &text).map_err(|e| io_err(&path, e))?;
        Ok(short_hash(text.as_bytes()))
    }

    /// Appends events to the project's event log. Returns the log length.
    pub fn ingest(&self, events: &[Event]) -> Result<usize> {
        let mut log = self.ingested()?;
        log.extend_from_slice(events);
        self.write("ingested.jsonl", write_event_log(&log))?;
        Ok(log.len())
    }

    /// Events ingested so far, in arrival order.
    pub fn ingested(&self) -> Result<Vec<Event>> {
        let path = self.artifact("ingested.jsonl");
        if !path.is_file() {
            return Ok(vec![]);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        parse_event_log(&text).map_err(|e| io_err(&path, e))
    }

    /// The latest report of a stage.
    pub fn stage_report(&self, stage: Stage) -> Result<StageReport> {
        let name = format!("reports/{stage}.json");
        let path = self.artifact(&name);
        if !path.is_file() {
            return Err(PipelineError::Prerequisite { stage, needs: stage, missing: name });
        }
        read_json(&path)
    }

    /// Latest reports of the stages that have run.
    pub fn reports(&self) -> Vec<StageReport> {
        Stage::ALL.iter().filter_map(|s| self.stage_report(*s).ok()).collect()
    }
}

/// Adapts a file-backed project: stops stored runs and re-runs stages.
pub struct FileAdapter<'a> {
    pub project: &'a Project,
}

impl FileAdapter<'_> {
    fn stages(&self, stages: &[Stage]) -> Result<String, String> {
        self.project.run_pipeline(stages, None).map_err(|e| e.to_string())?;
        Ok(self.project.version())
    }
}

impl Adapter for FileAdapter<'_> {
    fn interrupt_all(&mut self) -> Result<Vec<String>, String> {
        let mut out = vec![];
        for id in self.project.runs() {
            let (run, ..) = self.project.load_run(&id, &RunOptions::default()).map_err(|e| e.to_string())?;
            if matches!(run.status, RunStatus::Running | RunStatus::Paused) {
                let (_, run) = self.project.interrupt_run(&id).map_err(|e| e.to_string())?;
                out.extend(run.current_instance().map(String::from));
            }
        }
        Ok(out)
    }

    fn version(&self) -> String {
        self.project.version()
    }

    fn rededuce(&mut self, withdrawn: &BTreeSet<String>) -> Result<String, String> {
        let mut x = self.project.exclusions().map_err(|e| e.to_string())?;
        x.withdrawn_partners.extend(withdrawn.iter().cloned());
        self.project.save_exclusions(&x).map_err(|e| e.to_string())?;
        self.stages(&[Stage::Deduce, Stage::Match, Stage::Compile])
    }

    fn rediscover(&mut self, excluded: &BTreeSet<String>) -> Result<String, String> {
        let mut x = self.project.exclusions().map_err(|e| e.to_string())?;
        x.excluded_services.extend(excluded.iter().cloned());
        self.project.save_exclusions(&x).map_err(|e| e.to_string())?;
        self.stages(&[Stage::Match, Stage::Compile])
    }
}

/// The bundled deliver-product scenario directory.
pub fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/scenarios/deliver-product")
}
