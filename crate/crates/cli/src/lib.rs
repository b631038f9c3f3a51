//! Library surface of the `flowmap` binary, exposed so integration tests can
//! exercise config loading and the command implementations directly.

pub mod checks;
pub mod commands;
pub mod config;
pub mod error;
pub mod seed;
