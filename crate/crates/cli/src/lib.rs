//! Command line and HTTP front ends of the pipeline.

pub mod api;
pub mod cli;
