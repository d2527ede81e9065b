//! Command line verbs, one per pipeline stage plus `monitor` and `serve`.
//!
//! Each verb loads the project, applies `--set` overrides, calls the
//! matching [`Project`] operation and prints its JSON result on stdout.

use std::io::{BufRead, Write};
use std::path::PathBuf;

use clap::{ArgGroup, Parser, Subcommand};
use mediate_core::events::parse_event_log;
use mediate_core::model::validate_model;
use mediate_core::pipeline::{Decision, PipelineError, Project, ProjectConfig, RunOptions, Stage};
use serde::Serialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "mediate", version, about = "Deduce, bind, run and adapt collaborative processes")]
pub struct Cli {
    /// Project file or directory holding `mediate.toml`.
    #[arg(long, short, env = "MEDIATE_PROJECT", default_value = ".", global = true)]
    pub project: PathBuf,
    /// Overrides a configuration value, e.g. `matching.alpha=0.6`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Checks the configuration and the model file.
    Validate,
    /// Links concept references and writes the linked model.
    Link,
    /// Deduces the collaborative processes.
    Deduce,
    /// Matches services to every activity.
    Match {
        /// Ask about matches awaiting validation even without a terminal.
        #[arg(long, conflicts_with = "no_prompt")]
        prompt: bool,
        /// Never ask; leave matches awaiting validation.
        #[arg(long)]
        no_prompt: bool,
    },
    /// Lists matches that still need a decision.
    Pending,
    /// Records a decision on one match.
    #[command(group(ArgGroup::new("decision").required(true)))]
    Decide {
        activity: String,
        /// Accept the candidate at this index.
        #[arg(long, group = "decision", value_name = "INDEX")]
        accept: Option<usize>,
        #[arg(long, group = "decision")]
        reject: bool,
        /// Generate a form-based service a person completes.
        #[arg(long, group = "decision")]
        gui: bool,
        /// Bind a placeholder for an external service.
        #[arg(long, group = "decision")]
        external: bool,
        #[arg(long, group = "decision")]
        defer: bool,
    },
    /// Builds the data maps of the bound services.
    Reconcile,
    /// Compiles executable workflows.
    Compile,
    /// Runs the compiled workflows.
    Run {
        id: String,
        /// JSON object with the start fields.
        #[arg(long)]
        input: PathBuf,
        /// Makes a service fail during this run.
        #[arg(long = "fault", value_name = "SERVICE")]
        faults: Vec<String>,
        #[arg(long)]
        sequential: bool,
    },
    /// Supplies the outputs of a task waiting for a person.
    CompleteTask {
        run: String,
        node: String,
        /// JSON object, or `@file`.
        #[arg(long)]
        payload: String,
    },
    /// Stops scheduling new tasks of a run.
    Interrupt { run: String },
    /// Continues an interrupted run.
    Resume { run: String },
    /// Continues a stopped run under the current workflows.
    Migrate { old: String, new: String },
    /// Replays events over the twin and prints one report per event.
    Monitor {
        /// Newline-delimited JSON events.
        #[arg(long)]
        events: PathBuf,
        /// Dispatch the selected adaptation.
        #[arg(long, conflicts_with = "no_dispatch")]
        dispatch: bool,
        /// Only report.
        #[arg(long)]
        no_dispatch: bool,
    },
    /// Appends events to the project's event log.
    Ingest {
        #[arg(long)]
        events: PathBuf,
    },
    /// Serves the HTTP API.
    Serve {
        #[arg(long, env = "MEDIATE_BIND", default_value = "127.0.0.1:7878")]
        bind: String,
    },
    /// Runs several stages in order.
    Pipeline {
        /// Comma-separated stages; all design stages by default.
        #[arg(long, value_delimiter = ',')]
        stages: Vec<Stage>,
        /// Also runs the workflows under this id.
        #[arg(long, requires = "input")]
        run: Option<String>,
        #[arg(long, requires = "run")]
        input: Option<PathBuf>,
        #[arg(long = "fault", value_name = "SERVICE")]
        faults: Vec<String>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Pipeline(e) => e.exit_code(),
            CliError::Usage(_) => 2,
            CliError::Io(_) => 4,
        }
    }
}

/// Sets a dotted key of the configuration. Values are TOML literals;
/// anything else is taken as a string.
pub fn apply_override(config: &ProjectConfig, assignment: &str) -> Result<ProjectConfig, CliError> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| CliError::Usage(format!("`{assignment}` is not KEY=VALUE")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut root = toml::Value::try_from(config).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut slot = &mut root;
    let parts: Vec<&str> = key.trim().split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = slot.as_table_mut().ok_or_else(|| CliError::Usage(format!("`{key}` does not name a setting")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value.clone());
            break;
        }
        slot = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let config: ProjectConfig =
        root.try_into().map_err(|e: toml::de::Error| PipelineError::Config(format!("--set {assignment}: {}", e.message())))?;
    // nested sections ignore unknown keys, so check the value landed
    let back = toml::Value::try_from(&config).map_err(|e| CliError::Usage(e.to_string()))?;
    let landed = parts.iter().try_fold(&back, |v, part| v.get(part));
    if landed.is_none() {
        return Err(PipelineError::Config(format!("--set {assignment}: unknown setting `{key}`")).into());
    }
    Ok(config)
}

pub fn load_project(cli: &Cli) -> Result<Project, CliError> {
    let mut p = Project::load(&cli.project)?;
    for o in &cli.overrides {
        p.config = apply_override(&p.config, o)?;
    }
    p.validate()?;
    Ok(p)
}

fn read_json_file<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn print(out: &mut dyn Write, v: &impl Serialize) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *out, v).map_err(std::io::Error::from)?;
    writeln!(out)?;
    Ok(())
}

/// Asks for a decision on each match awaiting one.
fn prompt_decisions(p: &Project, out: &mut dyn Write, input: &mut dyn BufRead) -> Result<Vec<Value>, CliError> {
    let mut decided = vec![];
    for m in p.pending_matches()? {
        writeln!(out, "activity {} ({:?})", m.activity_id, m.status)?;
        for (i, c) in m.candidates.iter().enumerate() {
            writeln!(out, "  [{i}] {} score {:.3}", c.services.join(" + "), c.score)?;
        }
        writeln!(out, "  number = accept, r = reject, g = gui service, e = external, d = defer, empty = skip")?;
        out.flush()?;
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 {
            break;
        }
        let d = match line.trim() {
            "" => continue,
            "r" => Decision::Reject,
            "g" => Decision::GenerateGuiService,
            "e" => Decision::MarkExternal,
            "d" => Decision::Defer,
            n => Decision::Accept { index: n.parse().map_err(|_| CliError::Usage(format!("unknown answer `{n}`")))? },
        };
        let r = p.decide(&m.activity_id, &d)?;
        decided.push(json!({ "activity": r.activity_id, "status": r.status, "chosen": r.chosen }));
    }
    Ok(decided)
}

/// Runs one verb. `interactive` tells whether the input is a terminal.
pub fn execute(cli: Cli, out: &mut dyn Write, input: &mut dyn BufRead, interactive: bool) -> Result<(), CliError> {
    let p = load_project(&cli)?;
    match cli.command {
        Command::Validate => {
            let m = p.source_model()?;
            p.ontology()?;
            let report = validate_model(&m);
            if !report.is_clean() {
                return Err(PipelineError::Invalid(report).into());
            }
            print(out, &json!({ "model": m.network_id, "findings": report.findings }))
        }
        Command::Link => print(out, &p.stage_model()?),
        Command::Deduce => print(out, &p.stage_deduce()?),
        Command::Match { prompt, no_prompt } => {
            let report = p.stage_match()?;
            if prompt || (interactive && !no_prompt) {
                let decided = prompt_decisions(&p, out, input)?;
                return print(out, &json!({ "report": report, "decided": decided }));
            }
            print(out, &report)
        }
        Command::Pending => print(out, &p.pending_matches()?),
        Command::Decide { activity, accept, reject, gui, external, defer } => {
            let d = match (accept, reject, gui, external, defer) {
                (Some(index), ..) => Decision::Accept { index },
                (_, true, ..) => Decision::Reject,
                (_, _, true, ..) => Decision::GenerateGuiService,
                (_, _, _, true, _) => Decision::MarkExternal,
                _ => Decision::Defer,
            };
            print(out, &p.decide(&activity, &d)?)
        }
        Command::Reconcile => print(out, &p.stage_reconcile()?),
        Command::Compile => print(out, &p.stage_compile()?),
        Command::Run { id, input: path, faults, sequential } => {
            let start: Map<String, Value> = read_json_file(&path)?;
            let opts = RunOptions { faults: faults.into_iter().collect(), sequential };
            print(out, &p.stage_run(&id, &start, &opts)?.0)
        }
        Command::CompleteTask { run, node, payload } => {
            let text = match payload.strip_prefix('@') {
                Some(file) => std::fs::read_to_string(file).map_err(|e| CliError::Usage(format!("{file}: {e}")))?,
                None => payload,
            };
            let payload: Map<String, Value> = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("payload: {e}")))?;
            print(out, &p.complete_task(&run, &node, payload)?.0)
        }
        Command::Interrupt { run } => print(out, &p.interrupt_run(&run)?.0),
        Command::Resume { run } => print(out, &p.resume_run(&run)?.0),
        Command::Migrate { old, new } => print(out, &p.migrate_run(&old, &new)?.0),
        Command::Monitor { events, dispatch, no_dispatch } => {
            let text = std::fs::read_to_string(&events).map_err(|e| CliError::Usage(format!("{}: {e}", events.display())))?;
            let events = parse_event_log(&text).map_err(|e| CliError::Usage(format!("{}: {e}", events.display())))?;
            let dispatch = dispatch || (p.config.agility.auto_dispatch && !no_dispatch);
            let (_, outcome) = p.monitor(&events, dispatch)?;
            for r in &outcome.reports {
                writeln!(out, "{}", r.to_json())?;
            }
            let summary = json!({ "reentry": outcome.reentry, "adaptation": outcome.adaptation });
            writeln!(out, "{}", serde_json::to_string(&summary).map_err(std::io::Error::from)?)?;
            Ok(())
        }
        Command::Ingest { events } => {
            let text = std::fs::read_to_string(&events).map_err(|e| CliError::Usage(format!("{}: {e}", events.display())))?;
            let events = parse_event_log(&text).map_err(|e| CliError::Usage(format!("{}: {e}", events.display())))?;
            let total = p.ingest(&events)?;
            print(out, &json!({ "accepted": events.len(), "total": total }))
        }
        Command::Serve { bind } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::api::serve(p, &bind))?;
            Ok(())
        }
        Command::Pipeline { mut stages, run, input: path, faults } => {
            if stages.is_empty() {
                stages = vec![Stage::Model, Stage::Deduce, Stage::Match, Stage::Reconcile, Stage::Compile];
            }
            let start: Option<Map<String, Value>> = path.as_deref().map(read_json_file).transpose()?;
            let opts = RunOptions { faults: faults.into_iter().collect(), sequential: false };
            if run.is_some() && !stages.contains(&Stage::Run) {
                stages.push(Stage::Run);
            }
            let run = run.as_deref().zip(start.as_ref()).map(|(id, s)| (id, s, &opts));
            print(out, &p.run_pipeline(&stages, run)?)
        }
    }
}
