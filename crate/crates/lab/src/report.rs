//! Deterministic report rendering.
//!
//! Reports are JSON documents with a fixed field order (struct declaration
//! order) and shortest-round-trip float formatting, so the same config and
//! seed always produce byte-identical files, independent of thread count.
//! Violation witnesses are additionally rendered as a CSV sibling (header
//! row plus one row per witness) for spreadsheet triage.

use serde::Serialize;

use crate::config::Command;

/// Verdict of one run: `pass` exits 0, `fail` exits 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(&self) -> bool {
        *self == Verdict::Pass
    }

    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
        }
    }
}

/// The report envelope: tool identity, the full replayable config echo, the
/// summary verdict, and command-specific details. Wall time is deliberately
/// absent — it is printed to the console instead, keeping report bytes a
/// pure function of the config.
#[derive(Debug, Serialize)]
pub struct Report<'a, T: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub config: &'a Command,
    pub verdict: Verdict,
    pub details: T,
}

pub const TOOL_NAME: &str = "bellman-lab";

pub fn tool_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Renders the report as pretty JSON with a trailing newline.
pub fn render_report<T: Serialize>(
    config: &Command,
    verdict: Verdict,
    details: T,
) -> Result<String, serde_json::Error> {
    let report = Report { tool: TOOL_NAME, version: tool_version(), config, verdict, details };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    Ok(text)
}

/// A CSV document under construction: fixed header, then one row per
/// witness, floats in shortest round-trip decimal form.
#[derive(Debug, Clone)]
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &str) -> Self {
        let mut text = String::with_capacity(256);
        text.push_str(header);
        text.push('\n');
        Csv { text }
    }

    /// Appends one row of pre-rendered cells.
    pub fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn finish(self) -> String {
        self.text
    }
}

/// One float cell in shortest round-trip decimal form.
pub fn cell(value: f64) -> String {
    format!("{value}")
}

/// A quoted cell holding space-separated floats (used for points of varying
/// dimension).
pub fn vec_cell(values: &[f64]) -> String {
    let joined: Vec<String> = values.iter().map(|v| cell(*v)).collect();
    format!("\"{}\"", joined.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_rows_render_with_header_and_shortest_floats() {
        let mut csv = Csv::new("a,b,point");
        csv.row(&[cell(1.0), cell(0.1), vec_cell(&[1.5, 2.0])]);
        assert_eq!(csv.finish(), "a,b,point\n1,0.1,\"1.5 2\"\n");
    }

    #[test]
    fn verdict_serializes_lowercase() {
        assert_eq!(serde_json::to_string(&Verdict::Pass).unwrap(), "\"pass\"");
        assert_eq!(Verdict::from_pass(false).name(), "fail");
    }
}
