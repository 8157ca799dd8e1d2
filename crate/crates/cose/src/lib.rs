pub mod commands;
pub mod ingest;
pub mod server;
