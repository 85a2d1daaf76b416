//! Information sources backed by an external command.
//!
//! The command template is run through `sh -c` after substituting `{x}`
//! with all coordinates separated by spaces and `{x1}`, `{x2}`, ... with
//! single coordinates. Coordinates are written with 17 significant digits.
//! Standard output must hold a single real number.

use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::domain::InformationSource;
use crate::error::SourceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSourceSpec {
    pub command: String,
    pub cost: f64,
    #[serde(default)]
    pub noise: f64,
}

#[derive(Debug, Clone)]
pub struct ExternalSource {
    spec: ExternalSourceSpec,
}

impl ExternalSource {
    pub fn new(spec: ExternalSourceSpec) -> Result<Self, String> {
        if !(spec.cost > 0.0) || !spec.cost.is_finite() {
            return Err(format!("external source cost must be positive, got {}", spec.cost));
        }
        if !(spec.noise >= 0.0) || !spec.noise.is_finite() {
            return Err(format!("external source noise must be nonnegative, got {}", spec.noise));
        }
        Ok(Self { spec })
    }

    pub fn command_line(&self, x: &[f64]) -> String {
        substitute(&self.spec.command, x)
    }
}

pub fn format_coordinate(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn substitute(template: &str, x: &[f64]) -> String {
    let mut out = template.replace(
        "{x}",
        &x.iter().map(|&v| format_coordinate(v)).collect::<Vec<_>>().join(" "),
    );
    // Highest index first so `{x1}` does not clobber `{x12}`.
    for (i, &v) in x.iter().enumerate().rev() {
        out = out.replace(&format!("{{x{}}}", i + 1), &format_coordinate(v));
    }
    out
}

/// Parses a single real, accepting U+2212 as a minus sign.
pub fn parse_output(text: &str) -> Result<f64, SourceError> {
    let t = text.trim().replace('\u{2212}', "-");
    t.parse::<f64>()
        .map_err(|_| SourceError::Evaluation(format!("could not parse '{}' as a number", text.trim())))
}

impl InformationSource<f64> for ExternalSource {
    fn evaluate(&self, x: &[f64]) -> Result<f64, SourceError> {
        let line = self.command_line(x);
        let out = Command::new("sh")
            .arg("-c")
            .arg(&line)
            .output()
            .map_err(|e| SourceError::Evaluation(format!("could not start '{line}': {e}")))?;
        if !out.status.success() {
            let stderr = String::from_utf8_lossy(&out.stderr);
            return Err(SourceError::Evaluation(format!(
                "'{line}' exited with {}: {}",
                out.status,
                stderr.trim()
            )));
        }
        parse_output(&String::from_utf8_lossy(&out.stdout))
    }

    fn cost(&self, _x: &[f64]) -> f64 {
        self.spec.cost
    }

    fn noise_variance(&self, _x: &[f64]) -> f64 {
        self.spec.noise
    }
}
