pub mod ingest;
pub mod query;
pub mod statprofile;
pub mod llm;
pub mod context;
pub mod semantics;
pub mod pipeline;
pub mod fixtures;
pub mod report;
pub mod service;
pub mod cli;
