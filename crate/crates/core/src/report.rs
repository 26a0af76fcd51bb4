use serde::{Deserialize, Serialize};

/// Outcome of one sampled hypothesis check.
///
/// `worst` is the least favourable observed statistic and `slack` its margin
/// to the certified bound (negative when the check fails).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub pass: bool,
    pub worst: f64,
    pub slack: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckReport {
    /// Check of the form `worst ≤ bound`.
    pub fn upper(name: &str, worst: f64, bound: f64, rel_tol: f64, n: usize) -> Self {
        let slack = bound - worst;
        Self {
            name: name.to_owned(),
            pass: worst <= bound + rel_tol * bound.abs().max(1.0),
            worst,
            slack,
            n,
            warning: None,
            note: None,
        }
    }

    /// Check of the form `worst ≥ bound`.
    pub fn lower(name: &str, worst: f64, bound: f64, rel_tol: f64, n: usize) -> Self {
        let slack = worst - bound;
        Self {
            name: name.to_owned(),
            pass: worst >= bound - rel_tol * bound.abs().max(1.0),
            worst,
            slack,
            n,
            warning: None,
            note: None,
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn with_warning(mut self, warning: Option<String>) -> Self {
        self.warning = warning;
        self
    }
}
