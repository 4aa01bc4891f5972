//! Project store, commands and the conflict-resolution HTTP API behind the
//! `annoflow` binary.

pub mod app;
pub mod commands;
pub mod error;
pub mod server;
pub mod store;

pub use error::{CliError, CliResult};
pub use store::{Stage, Store};

/// What a command prints: result lines on stdout, warnings on stderr.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Output {
    pub lines: Vec<String>,
    pub warnings: Vec<String>,
}

impl Output {
    pub fn line(&mut self, s: impl Into<String>) {
        self.lines.push(s.into());
    }

    pub fn warn(&mut self, s: impl Into<String>) {
        self.warnings.push(s.into());
    }

    pub fn text(&self) -> String {
        let mut t = self.lines.join("\n");
        t.push('\n');
        t
    }
}
