//! Run configuration shared by the command-line tool and the web demo.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldResolution;
use crate::geometry::{DEFAULT_L, DEFAULT_NR_C};
use crate::operator::{ContinuationOptions, Discretization, NewtonOptions, DEFAULT_MAX_ITER, DEFAULT_NEWTON_TOL};
use crate::profiles::{validate_mu, HQuadrature, RotationProfile};
use crate::spherical::{DEFAULT_NR, DEFAULT_TOL};

/// The rotation profile ψ as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PsiSpec {
    EvenGaussian { a: f64 },
    SkewedRational { b: f64, a: f64 },
    CustomTable { p: Vec<f64>, psi: Vec<f64> },
}

impl Default for PsiSpec {
    fn default() -> Self {
        PsiSpec::EvenGaussian { a: 1.0 }
    }
}

impl PsiSpec {
    /// Default parameters for a kind name given on the command line.
    pub fn from_kind(kind: &str) -> Result<Self> {
        match kind {
            "even-gaussian" => Ok(PsiSpec::EvenGaussian { a: 1.0 }),
            "skewed-rational" => Ok(PsiSpec::SkewedRational { b: 0.5, a: 0.5 }),
            other => Err(Error::InvalidParameter(format!(
                "unknown psi kind {other:?} (expected even-gaussian or skewed-rational)"
            ))),
        }
    }

    pub fn build(&self) -> Result<RotationProfile> {
        match self {
            PsiSpec::EvenGaussian { a } => RotationProfile::even_gaussian(*a),
            PsiSpec::SkewedRational { b, a } => RotationProfile::skewed_rational(*b, *a),
            PsiSpec::CustomTable { p, psi } => RotationProfile::from_table(p.clone(), psi.clone()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PsiSpec::EvenGaussian { .. } => "even-gaussian",
            PsiSpec::SkewedRational { .. } => "skewed-rational",
            PsiSpec::CustomTable { .. } => "custom-table",
        }
    }
}

/// Everything a run depends on. Missing keys in a JSON file take their
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mu: f64,
    pub psi: PsiSpec,
    pub gamma_max: f64,
    pub gamma_steps: usize,
    pub nr: usize,
    pub nr_c: usize,
    pub l_max: usize,
    pub polar_nodes: usize,
    pub base_tol: f64,
    pub newton_tol: f64,
    pub max_iter: usize,
    pub quad_outer: usize,
    pub quad_inner: usize,
    pub out_dir: String,
    pub seed: u64,
    pub n_orbits: usize,
    /// Orbit length in dynamical times M^{-1/2}.
    pub orbit_time: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mu: 1.0,
            psi: PsiSpec::default(),
            gamma_max: 1.0,
            gamma_steps: 8,
            nr: DEFAULT_NR,
            nr_c: DEFAULT_NR_C,
            l_max: DEFAULT_L,
            polar_nodes: 32,
            base_tol: DEFAULT_TOL,
            newton_tol: DEFAULT_NEWTON_TOL,
            max_iter: DEFAULT_MAX_ITER,
            quad_outer: HQuadrature::default().outer,
            quad_inner: HQuadrature::default().inner,
            out_dir: "out".into(),
            seed: 0,
            n_orbits: 16,
            orbit_time: 1.0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidParameter(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidParameter(format!("config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        validate_mu(self.mu)?;
        self.psi.build()?;
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !self.gamma_max.is_finite() {
            return bad(format!("gamma_max must be finite, got {}", self.gamma_max));
        }
        if self.gamma_steps < 1 {
            return bad("gamma_steps must be at least 1".into());
        }
        if self.l_max % 2 == 1 {
            return bad(format!("L must be even, got {}", self.l_max));
        }
        if self.nr < 16 {
            return bad(format!("nr must be at least 16, got {}", self.nr));
        }
        if self.nr_c < 6 {
            return bad(format!("nr_c must be at least 6, got {}", self.nr_c));
        }
        if self.polar_nodes % 2 == 1 || self.polar_nodes <= self.l_max {
            return bad(format!("polar nodes must be even and exceed L, got {}", self.polar_nodes));
        }
        for (name, v) in [("base_tol", self.base_tol), ("newton_tol", self.newton_tol)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.base_tol >= 1e-3 {
            return bad(format!("base_tol must be below 1e-3, got {}", self.base_tol));
        }
        if self.max_iter == 0 || self.quad_outer < 4 || self.quad_inner < 4 {
            return bad("iteration and quadrature counts must be positive (quadrature at least 4)".into());
        }
        if !(self.orbit_time > 0.0 && self.orbit_time.is_finite()) {
            return bad(format!("orbit_time must be positive, got {}", self.orbit_time));
        }
        Ok(())
    }

    pub fn discretization(&self) -> Discretization {
        Discretization {
            l_max: self.l_max,
            nr_c: self.nr_c,
            polar_nodes: self.polar_nodes,
            field: FieldResolution {
                polar_nodes: self.polar_nodes,
                ..FieldResolution::default()
            },
        }
    }

    pub fn quadrature(&self) -> HQuadrature {
        HQuadrature {
            outer: self.quad_outer,
            inner: self.quad_inner,
        }
    }

    pub fn continuation(&self) -> ContinuationOptions {
        ContinuationOptions {
            newton: NewtonOptions {
                tol: self.newton_tol,
                max_iter: self.max_iter,
                ..NewtonOptions::default()
            },
            ..ContinuationOptions::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = RunConfig::from_json(r#"{"mu": 2.0, "psi": {"kind": "skewed-rational", "b": 0.5, "a": 0.5}}"#).unwrap();
        assert_eq!(c.mu, 2.0);
        assert_eq!(c.nr_c, DEFAULT_NR_C);
        assert_eq!(c.psi.kind(), "skewed-rational");
        assert!(RunConfig::from_json(r#"{"muu": 1}"#).is_err());
    }

    #[test]
    fn ranges_are_enforced() {
        let mut c = RunConfig { mu: 5.0, ..Default::default() };
        assert!(c.validate().is_err());
        c.mu = 1.0;
        c.l_max = 7;
        assert!(c.validate().is_err());
        c.l_max = 8;
        c.gamma_steps = 0;
        assert!(c.validate().is_err());
        c.gamma_steps = 2;
        c.newton_tol = 0.0;
        assert!(c.validate().is_err());
        c.newton_tol = 1e-9;
        c.psi = PsiSpec::SkewedRational { b: 3.0, a: 0.5 };
        assert!(c.validate().is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let c = RunConfig {
            psi: PsiSpec::CustomTable {
                p: vec![-1.0, 0.0, 1.0],
                psi: vec![0.5, 1.0, 0.5],
            },
            ..Default::default()
        };
        let back = RunConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
