//! Machine-readable check records shared by the verification routines and
//! the harness.

use serde::Serialize;

/// One verified claim: what was measured, against which tolerance, and the
/// inputs that witness a failure.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRecord {
    pub name: String,
    /// Short label of the mathematical statement under test.
    pub anchor: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub witnesses: Vec<String>,
}

impl CheckRecord {
    /// Passes iff `residual <= tolerance`.
    pub fn at_most(name: &str, anchor: &str, residual: f64, tolerance: f64) -> Self {
        CheckRecord {
            name: name.to_string(),
            anchor: anchor.to_string(),
            residual,
            tolerance,
            pass: residual <= tolerance,
            witnesses: Vec::new(),
        }
    }

    /// Exact integer equality, recorded as residual `|got − want|` with
    /// tolerance zero.
    pub fn count(name: &str, anchor: &str, got: usize, want: usize) -> Self {
        let mut rec = Self::at_most(name, anchor, got.abs_diff(want) as f64, 0.0);
        rec.witnesses.push(format!("got {got}, want {want}"));
        rec
    }

    /// Boolean outcome; residual 0 on success, 1 on failure.
    pub fn flag(name: &str, anchor: &str, ok: bool) -> Self {
        Self::at_most(name, anchor, if ok { 0.0 } else { 1.0 }, 0.0)
    }

    pub fn with_witness(mut self, w: impl Into<String>) -> Self {
        self.witnesses.push(w.into());
        self
    }

    pub fn with_witnesses(mut self, ws: impl IntoIterator<Item = String>) -> Self {
        self.witnesses.extend(ws);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_flag_follows_residual() {
        assert!(CheckRecord::at_most("a", "x", 1e-13, 1e-12).pass);
        assert!(!CheckRecord::at_most("a", "x", 2e-12, 1e-12).pass);
        assert!(!CheckRecord::at_most("a", "x", f64::NAN, 1.0).pass);
        assert!(CheckRecord::count("c", "x", 9, 9).pass);
        assert!(!CheckRecord::count("c", "x", 8, 9).pass);
    }
}
