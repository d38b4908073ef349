//! End-to-end runs: continuation, assembly and the checks on the result.

use std::sync::Arc;

use axistar::model::AxisymmetricState;
use axistar::operator::{step_directory, ContinuationOptions, DeformationOperator, Discretization, NewtonOptions};
use axistar::profiles::{Ansatz, PolytropeProfile, RotationProfile};
use axistar::spherical::{solve_base_state, DEFAULT_NR, DEFAULT_TOL};

fn operator(mu: f64, rotation: RotationProfile) -> DeformationOperator {
    let base = Arc::new(solve_base_state(mu, DEFAULT_NR, DEFAULT_TOL).unwrap());
    let ansatz = Ansatz::new(PolytropeProfile::new(base.mu, base.e0).unwrap(), rotation).unwrap();
    DeformationOperator::new(base, ansatz, &Discretization::default()).unwrap()
}

#[test]
fn density_is_continuous_in_gamma() {
    let op = operator(1.0, RotationProfile::skewed_rational(0.5, 0.5).unwrap());
    let opts = NewtonOptions::default();
    let g0 = 0.5;
    let start = op.newton_solve(g0, &op.zero_field(), &opts).unwrap();
    let s0 = AxisymmetricState::assemble(&op, g0, &start.field).unwrap();
    let steps = [0.2, 0.1, 0.05, 0.025];
    let dist: Vec<f64> = steps
        .iter()
        .map(|&h| {
            let rep = op.newton_solve(g0 + h, &start.field, &opts).unwrap();
            AxisymmetricState::assemble(&op, g0 + h, &rep.field).unwrap().density_distance(&s0)
        })
        .collect();
    for w in dist.windows(2) {
        assert!(w[1] < w[0], "{dist:?}");
    }
    let slope = (dist[0] / dist[3]).ln() / (steps[0] / steps[3] as f64).ln();
    assert!(slope >= 0.9, "slope {slope}, {dist:?}");
}

#[test]
fn other_polytropic_indices_continue_and_pass_checks() {
    for mu in [0.5, 2.0] {
        let op = operator(mu, RotationProfile::skewed_rational(0.5, 0.5).unwrap());
        let cont = op.continue_in_gamma(1.0, 4, &ContinuationOptions::default()).unwrap();
        assert!(!cont.truncated, "mu={mu}: {:?}", cont.stop_reason);
        let last = cont.entries.last().unwrap();
        let s = AxisymmetricState::assemble(&op, last.gamma, &last.field).unwrap();
        assert!(s.passed(), "mu={mu}: {:?}", s.failed_checks());
    }
}

#[test]
fn run_manifest_lists_every_step() {
    let op = operator(1.0, RotationProfile::even_gaussian(2.0).unwrap());
    let cont = op.continue_in_gamma(0.6, 3, &ContinuationOptions::default()).unwrap();
    let m = cont.manifest();
    assert_eq!(m.entries.len(), 4);
    assert_eq!(m.entries[3].directory, step_directory(3));
    assert_eq!(m.reached_gamma, 0.6);
    let json = serde_json::to_string(&m).unwrap();
    assert_eq!(serde_json::from_str::<axistar::operator::RunManifest>(&json).unwrap(), m);
    assert!(m.entries.iter().all(|e| e.sector_conditions.iter().all(|c| c.is_finite() && *c >= 1.0)));
}
