//! Collaborative process design and execution for partner networks.
//!
//! A collaboration model (partners, their shared functions, objectives and
//! messages) is linked to an ontology, turned into mediation processes by a
//! forward-chaining rule engine, bound to services by semantic matching,
//! compiled into executable workflows with data maps, run on an in-process
//! service bus, and watched by a twin model that proposes adaptations when
//! the field drifts from the design. [`pipeline::Project`] ties the steps
//! together over an artifacts directory.

pub mod agility;
pub mod deduction;
pub mod events;
pub mod graph;
pub mod matching;
pub mod model;
pub mod ontology;
pub mod orchestrator;
pub mod pipeline;
pub mod reconcile;
pub mod sa_bpmn;
pub mod text;
