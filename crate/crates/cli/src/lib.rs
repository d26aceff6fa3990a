//! Command-line surface and review service for the heritage pipeline.

pub mod reviews;
pub mod server;
