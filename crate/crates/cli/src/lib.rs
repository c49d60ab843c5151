//! Pipeline orchestration for the ideolens CLI: configuration loading,
//! run provenance manifests, and the stage implementations behind each
//! subcommand.

pub mod config;
pub mod manifest;
pub mod stages;
