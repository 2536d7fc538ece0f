use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerical tolerances shared by the pipeline stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Scaled residual bound for secular roots.
    pub tol_root: f64,
    /// Pole proximity threshold, relative to the local pole spacing.
    pub tol_pole: f64,
    /// Residues below `tol_residue * max(residue)` are treated as inactive.
    pub tol_residue: f64,
    /// Relative gap accepted by oracle comparisons.
    pub oracle_tol: f64,
    /// How far (scaled by `1 + |root|`) an eigenvalue of the effective
    /// channel problem may sit from a root and still count as exact.
    pub channel_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tol_root: 1e-10,
            tol_pole: 1e-8,
            tol_residue: 1e-14,
            oracle_tol: 1e-8,
            channel_tol: 1e-7,
        }
    }
}

impl Tolerances {
    pub fn check(&self) -> Result<()> {
        let all = [
            ("tol_root", self.tol_root),
            ("tol_pole", self.tol_pole),
            ("tol_residue", self.tol_residue),
            ("oracle_tol", self.oracle_tol),
            ("channel_tol", self.channel_tol),
        ];
        for (name, v) in all {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Schema(format!(
                    "tolerance {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}
