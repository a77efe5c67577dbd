//! Data ingestion and reporting behind the `mcvtest` binary.

pub mod ingest;
pub mod report;
