//! Command-line companion to `stylelab-core`: file formats, run manifests,
//! a rayon executor and the subcommands.

pub mod cli;
pub mod commands;
pub mod error;
pub mod exec;
pub mod io;
pub mod manifest;
