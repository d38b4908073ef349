//! WebAssembly bindings for the browser demo in `www/`.
//!
//! The page drives an [`Explorer`]: pick μ and a rotation profile, run the
//! continuation, then scrub through the γ steps to see the meridional
//! density and the free boundary change.

use std::sync::Arc;

use axistar::config::PsiSpec;
use axistar::geometry::Vec3;
use axistar::model::AxisymmetricState;
use axistar::operator::{ContinuationOptions, DeformationOperator, Discretization};
use axistar::profiles::{Ansatz, PolytropeProfile};
use axistar::spherical::{solve_base_state, RadialState, DEFAULT_NR, DEFAULT_TOL};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Half-width of the meridional slice.
const EXTENT: f64 = 1.6;

#[derive(Debug, Serialize)]
pub struct BaseSummary {
    pub mu: f64,
    pub e0: f64,
    pub mass: f64,
    pub r: Vec<f64>,
    pub rho0: Vec<f64>,
    pub u0: Vec<f64>,
    pub passed: bool,
}

#[derive(Debug, Serialize)]
pub struct StepSummary {
    pub gamma: f64,
    pub iterations: usize,
    pub residual: f64,
    pub x_norm: f64,
    pub quadrupole_ratio: f64,
    pub max_current: f64,
    pub passed: bool,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub reached_gamma: f64,
    pub truncated: bool,
    pub stop_reason: Option<String>,
    pub steps: Vec<StepSummary>,
}

fn solve_base(mu: f64) -> Result<Arc<RadialState>, String> {
    solve_base_state(mu, DEFAULT_NR, DEFAULT_TOL).map(Arc::new).map_err(|e| e.to_string())
}

/// Profiles of the spherical base state on its radial grid, inside r ≤ 1.5.
pub fn base_summary(mu: f64) -> Result<BaseSummary, String> {
    let b = solve_base(mu)?;
    let n = b.r.iter().take_while(|&&r| r <= 1.5).count();
    Ok(BaseSummary {
        mu: b.mu,
        e0: b.e0,
        mass: b.mass,
        r: b.r[..n].to_vec(),
        rho0: b.rho0[..n].to_vec(),
        u0: b.u0[..n].to_vec(),
        passed: b.invariant_checks().iter().all(|c| c.pass),
    })
}

#[wasm_bindgen(js_name = baseState)]
pub fn base_state(mu: f64) -> Result<String, JsValue> {
    let s = base_summary(mu).map_err(|e| JsValue::from_str(&e))?;
    Ok(serde_json::to_string(&s).expect("plain data"))
}

/// A continuation run kept in memory so the page can revisit its steps.
#[wasm_bindgen]
pub struct Explorer {
    states: Vec<AxisymmetricState>,
    summary: RunSummary,
}

impl Explorer {
    pub fn run(mu: f64, psi: PsiSpec, gamma_max: f64, steps: usize) -> Result<Explorer, String> {
        let err = |e: axistar::Error| e.to_string();
        let base = solve_base(mu)?;
        let ansatz = Ansatz::new(PolytropeProfile::new(base.mu, base.e0).map_err(err)?, psi.build().map_err(err)?)
            .map_err(err)?;
        let op = DeformationOperator::new(base, ansatz, &Discretization::default()).map_err(err)?;
        let opts = ContinuationOptions {
            sector_diagnostics: false,
            ..Default::default()
        };
        let cont = op.continue_in_gamma(gamma_max, steps.max(1), &opts).map_err(err)?;
        let mut states = Vec::with_capacity(cont.entries.len());
        let mut summaries = Vec::with_capacity(cont.entries.len());
        for e in &cont.entries {
            let s = AxisymmetricState::assemble(&op, e.gamma, &e.field).map_err(err)?;
            summaries.push(StepSummary {
                gamma: e.gamma,
                iterations: e.iterations,
                residual: e.residual,
                x_norm: e.x_norm,
                quadrupole_ratio: s.quadrupole_ratio(),
                max_current: s.velocity_moments().max_magnitude(),
                passed: s.passed(),
            });
            states.push(s);
        }
        Ok(Explorer {
            states,
            summary: RunSummary {
                reached_gamma: cont.reached_gamma,
                truncated: cont.truncated,
                stop_reason: cont.stop_reason.clone(),
                steps: summaries,
            },
        })
    }

    pub fn summary(&self) -> &RunSummary {
        &self.summary
    }

    /// ρ on an n × n grid of the (x₁, x₃) half-plane x₂ = 0, row-major with
    /// x₃ decreasing down the rows.
    pub fn density_slice(&self, step: usize, n: usize) -> Vec<f64> {
        let Some(s) = self.states.get(step) else {
            return Vec::new();
        };
        let n = n.max(2);
        let h = 2.0 * EXTENT / (n - 1) as f64;
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            let z = EXTENT - i as f64 * h;
            for j in 0..n {
                out.push(s.density_at(&Vec3::new(-EXTENT + j as f64 * h, 0.0, z)));
            }
        }
        out
    }

    /// Support boundary as (x₁, x₃) pairs around the full meridian.
    pub fn boundary(&self, step: usize) -> Vec<f64> {
        let Some(s) = self.states.get(step) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for k in 0..=128 {
            let t = 2.0 * std::f64::consts::PI * k as f64 / 128.0;
            let r = s.boundary_radius(t.cos());
            out.push(r * t.sin());
            out.push(r * t.cos());
        }
        out
    }
}

#[wasm_bindgen]
impl Explorer {
    /// `psi` is "even-gaussian" or "skewed-rational"; `param` is the
    /// gaussian width a, or the damping a of the skewed profile (b = 1/2).
    #[wasm_bindgen(constructor)]
    pub fn new(mu: f64, psi: &str, param: f64, gamma_max: f64, steps: usize) -> Result<Explorer, JsValue> {
        let spec = match psi {
            "even-gaussian" => PsiSpec::EvenGaussian { a: param },
            "skewed-rational" => PsiSpec::SkewedRational { b: 0.5, a: param },
            other => return Err(JsValue::from_str(&format!("unknown profile {other}"))),
        };
        Explorer::run(mu, spec, gamma_max, steps).map_err(|e| JsValue::from_str(&e))
    }

    #[wasm_bindgen(js_name = summaryJson)]
    pub fn summary_json(&self) -> String {
        serde_json::to_string(&self.summary).expect("plain data")
    }

    #[wasm_bindgen(js_name = stepCount)]
    pub fn step_count(&self) -> usize {
        self.states.len()
    }

    #[wasm_bindgen(js_name = densitySlice)]
    pub fn density_slice_js(&self, step: usize, n: usize) -> Vec<f64> {
        self.density_slice(step, n)
    }

    #[wasm_bindgen(js_name = boundaryCurve)]
    pub fn boundary_js(&self, step: usize) -> Vec<f64> {
        self.boundary(step)
    }

    pub fn extent(&self) -> f64 {
        EXTENT
    }
}
