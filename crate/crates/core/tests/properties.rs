//! Structural invariants checked over random inputs.

use std::sync::OnceLock;

use axistar::config::{PsiSpec, RunConfig};
use axistar::field::{AxiField, FieldGrid, PotentialField};
use axistar::geometry::{CoefficientGrid, DeformationField, Vec3};
use axistar::io::{format_float, Table};
use axistar::profiles::{Ansatz, PolytropeProfile, RotationProfile};
use proptest::prelude::*;

fn skewed_ansatz() -> &'static Ansatz {
    static A: OnceLock<Ansatz> = OnceLock::new();
    A.get_or_init(|| {
        Ansatz::new(
            PolytropeProfile::new(1.0, -0.6).unwrap(),
            RotationProfile::skewed_rational(0.5, 0.5).unwrap(),
        )
        .unwrap()
    })
}

fn grid() -> std::sync::Arc<FieldGrid> {
    static G: OnceLock<std::sync::Arc<FieldGrid>> = OnceLock::new();
    G.get_or_init(FieldGrid::default_grid).clone()
}

fn bump(amp: f64, q: f64) -> impl Fn(f64, f64) -> f64 + Sync {
    move |s: f64, c: f64| {
        if s >= 1.0 {
            0.0
        } else {
            amp * (1.0 - s * s).powi(2) * (1.0 + q * s * s * c * c)
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn h_is_even_in_gamma_and_the_current_odd(gamma in 0.0f64..2.0, r in 0.0f64..1.5, du in 0.0f64..0.5) {
        let a = skewed_ansatz();
        let u = a.e0() - du;
        let h = a.h(gamma, r, u).unwrap();
        prop_assert!(h >= 0.0);
        prop_assert!((h - a.h(-gamma, r, u).unwrap()).abs() <= 1e-14 * h.max(1e-300));
        let j = a.current_magnitude(gamma, r, u).unwrap();
        prop_assert!((j + a.current_magnitude(-gamma, r, u).unwrap()).abs() <= 1e-14 * j.abs().max(1e-300));
        prop_assert!(a.h_du(gamma, r, u).unwrap() <= 0.0);
    }

    #[test]
    fn h_vanishes_above_the_cutoff(gamma in 0.0f64..2.0, r in 0.0f64..1.5, du in 0.0f64..1.0) {
        let a = skewed_ansatz();
        prop_assert_eq!(a.h(gamma, r, a.e0() + du).unwrap(), 0.0);
        prop_assert_eq!(a.current_magnitude(gamma, r, a.e0() + du).unwrap(), 0.0);
    }

    #[test]
    fn potential_is_linear_in_the_density(a in 0.1f64..2.0, b in -1.0f64..1.0, q in 0.0f64..2.0,
                                          x in -1.5f64..1.5, y in -1.5f64..1.5, z in -1.5f64..1.5) {
        let g = grid();
        let r1 = AxiField::from_fn(g.clone(), bump(1.0, 0.0));
        let r2 = AxiField::from_fn(g.clone(), bump(1.0, q));
        let sum = AxiField::from_fn(g.clone(), {
            let (f1, f2) = (bump(a, 0.0), bump(b, q));
            move |s, c| f1(s, c) + f2(s, c)
        });
        let p = Vec3::new(x, y, z);
        let lhs = PotentialField::solve(&sum).value(&p);
        let rhs = a * PotentialField::solve(&r1).value(&p) + b * PotentialField::solve(&r2).value(&p);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn deformation_inverse_round_trips(c0 in -0.1f64..0.1, c2 in -0.1f64..0.1,
                                       x in -1.8f64..1.8, y in -1.8f64..1.8, z in -1.8f64..1.8) {
        let cg = CoefficientGrid::new(8, 24).unwrap();
        let field = DeformationField::from_fn(cg, |l, r| match l {
            0 => c0 * r * r,
            2 => c2 * r * r * (1.0 - 0.2 * r),
            _ => 0.0,
        });
        prop_assume!(field.is_admissible());
        let target = Vec3::new(x, y, z);
        prop_assume!(target.norm() <= 2.0);
        let pre = field.g_invert(&target).unwrap();
        let back = field.g_apply(&pre).unwrap();
        prop_assert!((back - target).norm() <= 1e-12);
    }

    #[test]
    fn csv_floats_round_trip(v in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO) {
        let parsed: f64 = format_float(v).parse().unwrap();
        prop_assert_eq!(parsed, v);
        let mut t = Table::new(["x"]);
        t.push(vec![v]);
        let back = Table::parse(&t.to_csv()).unwrap();
        prop_assert_eq!(back.rows[0][0], v);
    }

    #[test]
    fn config_round_trips(mu in -0.49f64..3.49, b in 0.01f64..0.99, a in 0.0f64..2.0, steps in 1usize..40) {
        let c = RunConfig {
            mu,
            psi: PsiSpec::SkewedRational { b, a },
            gamma_steps: steps,
            ..Default::default()
        };
        let back = RunConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        prop_assert_eq!(back, c);
    }
}
