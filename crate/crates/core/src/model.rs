//! Assembled steady states and the physics checks run on them.
//!
//! U^γ = V + C, where V is the potential of ρ^γ and C = U₀(0) − V(0) fixes
//! the gauge so that U^γ = U₀ ∘ g_ζ⁻¹ on the deformed support.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::PsiSpec;
use crate::error::{Error, Result};
use crate::field::{density_from_state, AxiField, FieldGrid, FieldResolution, PotentialField};
use crate::geometry::{axial_rotation, DeformationField, Vec3, DOMAIN_RADIUS};
use crate::io::{read_json, write_json, Table};
use crate::operator::{sector_reports, DeformationOperator, SectorReport};
use crate::profiles::{Ansatz, EnergyMomentum, HQuadrature, PolytropeProfile, RotationProfile};
use crate::spherical::{InvariantCheck, RadialState};

pub const SCHEMA: &str = "vp-axistar/1";
/// Quadrupole over monopole above which a state counts as non-spherical.
pub const NONSPHERICITY_THRESHOLD: f64 = 1e-8;
/// Quadrupole over monopole below which the γ = 0 state counts as spherical.
pub const SPHERICITY_THRESHOLD: f64 = 1e-10;
/// Thickness of the band around the free boundary left out of the Poisson
/// residual.
pub const BOUNDARY_SHELL: f64 = 0.05;
pub const POISSON_THRESHOLD: f64 = 1e-4;
pub const POISSON_STEP: f64 = 1e-3;
pub const GAUGE_THRESHOLD: f64 = 1e-6;
pub const TRUNCATION_THRESHOLD: f64 = 1e-4;
pub const CURRENT_THRESHOLD: f64 = 1e-12;
/// Orbit step as a fraction of the dynamical time M^{-1/2}.
pub const DT_FRACTION: f64 = 1e-3;

/// A point of the free boundary g_ζ(S²) in the x₁x₃ half plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub cos_theta: f64,
    pub radius: f64,
}

/// A steady state of the family with its diagnostics.
#[derive(Debug, Clone)]
pub struct AxisymmetricState {
    pub gamma: f64,
    pub deformation: DeformationField,
    pub density: AxiField,
    pub potential: PotentialField,
    pub constant_c: f64,
    pub mass: f64,
    /// (4π/(2l+1)) ∫ s^{l+2} ρ_l ds for l = 0, 2, …
    pub multipoles: Vec<f64>,
    pub boundary: Vec<BoundaryPoint>,
    pub checks: Vec<InvariantCheck>,
    base: Arc<RadialState>,
    ansatz: Ansatz,
    // |g_ζ⁻¹(y)| at every density sample
    preimages: Vec<f64>,
}

/// j^γ = |j| e_t sampled on the density grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentField {
    pub magnitude: Vec<f64>,
    /// |j|/ρ where ρ > 0, else 0.
    pub average_velocity: Vec<f64>,
}

impl CurrentField {
    pub fn max_magnitude(&self) -> f64 {
        self.magnitude.iter().fold(0.0, |a, b| a.max(b.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.max_magnitude() <= CURRENT_THRESHOLD
    }
}

/// e_t(x) = (−x₂, x₁, 0)/r(x), or zero on the axis.
pub fn tangential_direction(x: &Vec3) -> Vec3 {
    let r = x[0].hypot(x[1]);
    if r == 0.0 {
        Vec3::zeros()
    } else {
        Vec3::new(-x[1] / r, x[0] / r, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitOptions {
    pub n_orbits: usize,
    /// Length in dynamical times M^{-1/2}.
    pub t_final: f64,
    /// Step in dynamical times.
    pub dt: f64,
    pub seed: u64,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        Self {
            n_orbits: 16,
            t_final: 1.0,
            dt: DT_FRACTION,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitRecord {
    pub x0: [f64; 3],
    pub v0: [f64; 3],
    pub drift_e: f64,
    pub drift_p: f64,
    pub drift_f: f64,
    pub escaped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitReport {
    /// Step and length in code units.
    pub dt: f64,
    pub t_final: f64,
    pub orbits: Vec<OrbitRecord>,
    pub max_drift_e: f64,
    pub max_drift_p: f64,
    pub max_drift_f: f64,
    pub escaped: usize,
}

impl OrbitReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new([
            "orbit", "x1", "x2", "x3", "v1", "v2", "v3", "drift_e", "drift_p", "drift_f", "escaped",
        ]);
        for (k, o) in self.orbits.iter().enumerate() {
            t.push(vec![
                k as f64,
                o.x0[0],
                o.x0[1],
                o.x0[2],
                o.v0[0],
                o.v0[1],
                o.v0[2],
                o.drift_e,
                o.drift_p,
                o.drift_f,
                o.escaped as u8 as f64,
            ]);
        }
        t
    }
}

/// One Poisson residual sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonSample {
    pub r: f64,
    pub cos_theta: f64,
    pub residual: f64,
    pub in_shell: bool,
}

impl AxisymmetricState {
    /// Builds the state for a converged ζ at γ.
    pub fn assemble(op: &DeformationOperator, gamma: f64, field: &DeformationField) -> Result<Self> {
        let (density, _) = density_from_state(op.field_grid(), gamma, field, op.base(), op.ansatz())?;
        Self::from_parts(op.base().clone(), op.ansatz().clone(), gamma, field.clone(), density)
    }

    /// Builds the state around a given density (for instance one read back
    /// from disk) and runs the invariant checks.
    pub fn from_parts(
        base: Arc<RadialState>,
        ansatz: Ansatz,
        gamma: f64,
        deformation: DeformationField,
        density: AxiField,
    ) -> Result<Self> {
        deformation.check_admissible()?;
        let grid = density.grid().clone();
        let nh = grid.n_half();
        let preimages = (0..grid.n_samples())
            .map(|i| deformation.invert_radius(grid.radial()[i / nh], grid.cos_theta(i % nh)))
            .collect::<Result<Vec<_>>>()?;
        let potential = PotentialField::solve(&density);
        let constant_c = base.u0_at(0.0) - potential.value_at_origin();
        let mass = density.mass();
        let multipoles = density.multipoles();
        let boundary = boundary_curve(&deformation, 65);
        let mut state = Self {
            gamma,
            deformation,
            density,
            potential,
            constant_c,
            mass,
            multipoles,
            boundary,
            checks: Vec::new(),
            base,
            ansatz,
            preimages,
        };
        state.checks = state.invariant_checks();
        Ok(state)
    }

    pub fn base(&self) -> &Arc<RadialState> {
        &self.base
    }

    pub fn ansatz(&self) -> &Ansatz {
        &self.ansatz
    }

    pub fn e0(&self) -> f64 {
        self.ansatz.e0()
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failed_checks(&self) -> Vec<&InvariantCheck> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    /// U^γ(x).
    pub fn u(&self, x: &Vec3) -> f64 {
        self.potential.value(x) + self.constant_c
    }

    pub fn grad_u(&self, x: &Vec3) -> Vec3 {
        self.potential.grad(x)
    }

    /// U₀(g_ζ⁻¹(x)) inside the deformation domain, U^γ(x) beyond it.
    pub fn u_zeta(&self, x: &Vec3) -> f64 {
        match self.deformation.g_invert(x) {
            Ok(p) => self.base.u0_at(p.norm()),
            Err(_) => self.u(x),
        }
    }

    /// Radius of the support boundary along the ray of polar cosine c.
    pub fn boundary_radius(&self, c: f64) -> f64 {
        1.0 + self.deformation.eval_polar(1.0, c).0
    }

    /// ρ^γ(x) = h(γ, r(x), U₀(g_ζ⁻¹(x))).
    pub fn density_at(&self, x: &Vec3) -> f64 {
        let Ok(p) = self.deformation.g_invert(x) else {
            return 0.0;
        };
        let s = p.norm();
        if s >= 1.0 {
            return 0.0;
        }
        self.ansatz.h_unchecked(self.gamma, x[0].hypot(x[1]), self.base.u0_at(s))
    }

    /// f^γ(x, v) = φ(½|v|² + U^γ(x)) ψ(γ P).
    pub fn f_eval(&self, x: &Vec3, v: &Vec3) -> f64 {
        let em = EnergyMomentum::at([x[0], x[1], x[2]], [v[0], v[1], v[2]], self.u(x));
        self.ansatz.f(self.gamma, em)
    }

    /// j^γ(x).
    pub fn current_at(&self, x: &Vec3) -> Vec3 {
        let r = x[0].hypot(x[1]);
        let Ok(p) = self.deformation.g_invert(x) else {
            return Vec3::zeros();
        };
        if p.norm() >= 1.0 {
            return Vec3::zeros();
        }
        let m = self.ansatz.current_unchecked(self.gamma, r, self.base.u0_at(p.norm()));
        tangential_direction(x) * m
    }

    /// |j^γ| and |j^γ|/ρ^γ on the density samples.
    pub fn velocity_moments(&self) -> CurrentField {
        let grid = self.density.grid();
        let nh = grid.n_half();
        let mut magnitude = Vec::with_capacity(grid.n_samples());
        let mut average_velocity = Vec::with_capacity(grid.n_samples());
        for (i, &s) in self.preimages.iter().enumerate() {
            let rho_y = grid.radial()[i / nh];
            let c = grid.cos_theta(i % nh);
            let j = if s >= 1.0 {
                0.0
            } else {
                let cyl = rho_y * (1.0 - c * c).max(0.0).sqrt();
                self.ansatz.current_unchecked(self.gamma, cyl, self.base.u0_at(s))
            };
            let rho = self.density.values()[i];
            magnitude.push(j);
            average_velocity.push(if rho > 0.0 { j / rho } else { 0.0 });
        }
        CurrentField {
            magnitude,
            average_velocity,
        }
    }

    /// A point on the x₁-axis inside the support with velocities v = (0,0,η)
    /// and v′ = (0,η,0) of equal energy. Returns (x, f(x,v), f(x,v′)).
    pub fn nonsphericity_witness(&self) -> (Vec3, f64, f64) {
        let x = Vec3::new(0.5 * self.boundary_radius(0.0), 0.0, 0.0);
        let eta = 0.5 * (2.0 * (self.e0() - self.u(&x))).max(0.0).sqrt();
        (x, self.f_eval(&x, &Vec3::new(0.0, 0.0, eta)), self.f_eval(&x, &Vec3::new(0.0, eta, 0.0)))
    }

    /// Dynamical time M^{-1/2} (the support has unit radius).
    pub fn dynamical_time(&self) -> f64 {
        self.mass.powf(-0.5)
    }

    /// Leapfrog characteristics ẋ = v, v̇ = −∇U^γ started inside the
    /// support; reports the drift of E, P and f along each.
    pub fn stationarity_check(&self, opts: &OrbitOptions) -> OrbitReport {
        let t_dyn = self.dynamical_time();
        let dt = opts.dt * t_dyn;
        let steps = (opts.t_final / opts.dt).round().max(1.0) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        // Rejection sampling of f^γ: uniform proposals in the ball around
        // the support and the velocity ball below the escape speed.
        let r_out = self.boundary.iter().map(|b| b.radius).fold(0.0, f64::max);
        let v_out = (2.0 * (self.e0() - self.u(&Vec3::zeros()))).max(0.0).sqrt() * 1.05;
        let ball = |rng: &mut ChaCha8Rng| loop {
            let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if d.norm_squared() <= 1.0 {
                break d;
            }
        };
        let propose = |rng: &mut ChaCha8Rng| {
            let x = ball(rng) * r_out;
            let v = ball(rng) * v_out;
            (x, v, self.f_eval(&x, &v))
        };
        let f_bound = 1.25 * (0..4096).map(|_| propose(&mut rng).2).fold(0.0, f64::max);
        let mut starts = Vec::with_capacity(opts.n_orbits);
        while starts.len() < opts.n_orbits && f_bound > 0.0 {
            let (x, v, f) = propose(&mut rng);
            if f > 0.0 && rng.gen_range(0.0..f_bound) < f {
                starts.push((x, v));
            }
        }
        let orbits: Vec<OrbitRecord> = crate::numerics::par_map(&starts, |&(x0, v0)| self.integrate_orbit(x0, v0, dt, steps));
        let fold = |f: fn(&OrbitRecord) -> f64| orbits.iter().map(f).fold(0.0, f64::max);
        OrbitReport {
            dt,
            t_final: dt * steps as f64,
            max_drift_e: fold(|o| o.drift_e),
            max_drift_p: fold(|o| o.drift_p),
            max_drift_f: fold(|o| o.drift_f),
            escaped: orbits.iter().filter(|o| o.escaped).count(),
            orbits,
        }
    }

    fn integrate_orbit(&self, x0: Vec3, v0: Vec3, dt: f64, steps: usize) -> OrbitRecord {
        let energy = |x: &Vec3, v: &Vec3| 0.5 * v.norm_squared() + self.u(x);
        let ang = |x: &Vec3, v: &Vec3| x[0] * v[1] - x[1] * v[0];
        let (e0, p0, f0) = (energy(&x0, &v0), ang(&x0, &v0), self.f_eval(&x0, &v0));
        let (mut x, mut v) = (x0, v0);
        let mut acc = -self.grad_u(&x);
        let (mut de, mut dp, mut df): (f64, f64, f64) = (0.0, 0.0, 0.0);
        let mut escaped = false;
        for _ in 0..steps {
            v += acc * (0.5 * dt);
            x += v * dt;
            if x.norm() > DOMAIN_RADIUS {
                escaped = true;
                break;
            }
            acc = -self.grad_u(&x);
            v += acc * (0.5 * dt);
            de = de.max((energy(&x, &v) - e0).abs());
            dp = dp.max((ang(&x, &v) - p0).abs());
            df = df.max((self.f_eval(&x, &v) - f0).abs());
        }
        OrbitRecord {
            x0: [x0[0], x0[1], x0[2]],
            v0: [v0[0], v0[1], v0[2]],
            drift_e: de,
            drift_p: dp,
            drift_f: df,
            escaped,
        }
    }

    /// Fourth-order difference Laplacian of U^γ minus 4π h(γ, r, U^γ) at
    /// the density samples.
    pub fn poisson_residuals(&self, step: f64) -> Vec<PoissonSample> {
        let grid = self.density.grid();
        let nh = grid.n_half();
        let idx: Vec<usize> = (0..grid.n_samples()).collect();
        crate::numerics::par_map(&idx, |&i| {
            let (j, k) = (i / nh, i % nh);
            let x = grid.point(j, k);
            let c = grid.cos_theta(k);
            let u = self.u(&x);
            // fourth-order five-point second difference along each axis
            let mut lap = -90.0 * u;
            for a in 0..3 {
                let mut d = Vec3::zeros();
                d[a] = step;
                lap += 16.0 * (self.u(&(x + d)) + self.u(&(x - d)));
                lap -= self.u(&(x + 2.0 * d)) + self.u(&(x - 2.0 * d));
            }
            lap /= 12.0 * step * step;
            let rho = self.ansatz.h_unchecked(self.gamma, x[0].hypot(x[1]), u);
            PoissonSample {
                r: grid.radial()[j],
                cos_theta: c,
                residual: lap - 4.0 * PI * rho,
                in_shell: (grid.radial()[j] - self.boundary_radius(c)).abs() < BOUNDARY_SHELL,
            }
        })
    }

    /// sup |U^γ − U₀ ∘ g_ζ⁻¹| over the density samples.
    pub fn gauge_error(&self) -> f64 {
        let grid = self.density.grid();
        let nh = grid.n_half();
        (0..grid.n_samples())
            .map(|i| {
                let x = grid.point(i / nh, i % nh);
                (self.u(&x) - self.base.u0_at(self.preimages[i])).abs()
            })
            .fold(0.0, f64::max)
    }

    /// min (U^γ − E₀) over rays beyond the free boundary.
    pub fn exterior_margin(&self) -> f64 {
        let offsets = [0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 20.0];
        let mut worst = f64::INFINITY;
        for b in &self.boundary {
            let s = (1.0 - b.cos_theta * b.cos_theta).max(0.0).sqrt();
            for d in offsets {
                let x = Vec3::new(s, 0.0, b.cos_theta) * (b.radius + d);
                worst = worst.min(self.u(&x) - self.e0());
            }
        }
        worst
    }

    pub fn quadrupole_ratio(&self) -> f64 {
        self.multipoles.get(1).copied().unwrap_or(0.0).abs() / self.multipoles[0].abs()
    }

    fn symmetry_error(&self) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let scale = self.u(&Vec3::zeros()).abs();
        let mut worst: f64 = 0.0;
        for _ in 0..64 {
            let x = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let u = self.u(&x);
            let refl = Vec3::new(x[0], x[1], -x[2]);
            let rot = axial_rotation(rng.gen_range(0.0..2.0 * PI)) * x;
            worst = worst.max((self.u(&refl) - u).abs()).max((self.u(&rot) - u).abs());
        }
        worst / scale
    }

    fn invariant_checks(&self) -> Vec<InvariantCheck> {
        let e0 = self.e0();
        let mut checks = vec![
            InvariantCheck::at_most("U = U0 o g^-1 on B2", self.gauge_error(), GAUGE_THRESHOLD),
            InvariantCheck::at_least("U > E0 outside the support", self.exterior_margin(), f64::MIN_POSITIVE),
            InvariantCheck::at_least("C > E0", self.constant_c - e0, f64::MIN_POSITIVE),
            InvariantCheck::at_most("reflection and rotation symmetry", self.symmetry_error(), 1e-13),
        ];
        let poisson = self
            .poisson_residuals(POISSON_STEP)
            .iter()
            .filter(|p| !p.in_shell)
            .map(|p| p.residual.abs())
            .fold(0.0, f64::max);
        checks.push(InvariantCheck::at_most(
            "Poisson residual away from the free boundary",
            poisson,
            POISSON_THRESHOLD,
        ));
        let far = Vec3::new(0.0, 60.0, 80.0);
        let far_mass = -100.0 * (self.u(&far) - self.constant_c);
        checks.push(InvariantCheck::at_most(
            "mass matches far field",
            (far_mass - self.mass).abs() / self.mass,
            1e-4,
        ));
        if self.gamma == 0.0 {
            checks.push(InvariantCheck::at_most(
                "quadrupole/monopole at gamma = 0",
                self.quadrupole_ratio(),
                SPHERICITY_THRESHOLD,
            ));
        } else {
            checks.push(InvariantCheck::at_least(
                "quadrupole/monopole for gamma != 0",
                self.quadrupole_ratio(),
                NONSPHERICITY_THRESHOLD,
            ));
        }
        checks.push(InvariantCheck::at_most(
            "Legendre truncation tail",
            self.density.truncation_tail(),
            TRUNCATION_THRESHOLD,
        ));
        if self.ansatz.rotation.is_even() {
            checks.push(InvariantCheck::at_most(
                "j = 0 for even psi",
                self.velocity_moments().max_magnitude(),
                CURRENT_THRESHOLD,
            ));
        }
        checks
    }

    /// Plot-ready tables keyed by file name.
    pub fn plot_tables(&self) -> Vec<(String, Table)> {
        let radii: Vec<f64> = (0..=100).map(|i| 2.0 * i as f64 / 100.0).collect();
        let thetas: Vec<f64> = (0..=36).map(|i| PI * i as f64 / 36.0).collect();
        let mut rho = Table::new(["r", "theta", "rho"]);
        let mut pot = Table::new(["r", "theta", "U"]);
        for &t in &thetas {
            let dir = Vec3::new(t.sin(), 0.0, t.cos());
            for &r in &radii {
                let x = dir * r;
                rho.push(vec![r, t, self.density_at(&x)]);
                pot.push(vec![r, t, self.u(&x)]);
            }
        }
        let mut cuts = Table::new(["r", "rho_equatorial", "rho_polar", "U_equatorial", "U_polar"]);
        for &r in &radii {
            let eq = Vec3::new(r, 0.0, 0.0);
            let pol = Vec3::new(0.0, 0.0, r);
            cuts.push(vec![r, self.density_at(&eq), self.density_at(&pol), self.u(&eq), self.u(&pol)]);
        }
        let mut boundary = Table::new(["theta", "radius", "x1", "x3"]);
        for &t in &thetas {
            let radius = self.boundary_radius(t.cos());
            boundary.push(vec![t, radius, radius * t.sin(), radius * t.cos()]);
        }
        vec![
            ("density_grid.csv".into(), rho),
            ("potential_grid.csv".into(), pot),
            ("cuts.csv".into(), cuts),
            ("support_boundary.csv".into(), boundary),
        ]
    }

    /// sup over the density samples of |ρ_self − ρ_other|; both states must
    /// share the field grid.
    pub fn density_distance(&self, other: &Self) -> f64 {
        self.density
            .values()
            .iter()
            .zip(other.density.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn manifest(&self, psi: PsiSpec, orbits: bool) -> StateManifest {
        let res = self.density.grid().resolution();
        let q = self.ansatz.quadrature();
        StateManifest {
            schema: SCHEMA.into(),
            gamma: self.gamma,
            mu: self.base.mu,
            e0: self.e0(),
            mass: self.mass,
            constant_c: self.constant_c,
            psi,
            multipoles: self.multipoles.clone(),
            resolution: ResolutionSpec {
                l_max: self.deformation.grid().l_max(),
                nr_c: self.deformation.grid().nr_c(),
                breakpoints: res.breakpoints,
                panel_order: res.panel_order,
                polar_nodes: res.polar_nodes,
                l_pot: res.l_pot,
                quad_outer: q.outer,
                quad_inner: q.inner,
            },
            j_all_zero: self.velocity_moments().is_zero(),
            checks: self.checks.clone(),
            passed: self.passed(),
            files: StateFiles {
                base_state: "base_state.csv".into(),
                deformation: "zeta.csv".into(),
                density: "density.csv".into(),
                rho_moments: "rho_moments.csv".into(),
                u_moments: "u_moments.csv".into(),
                current: "current.csv".into(),
                orbits: orbits.then(|| "orbits.csv".into()),
            },
        }
    }

    /// Writes the state export into `dir` and returns its manifest.
    pub fn export(&self, dir: &Path, orbits: Option<&OrbitReport>) -> Result<StateManifest> {
        std::fs::create_dir_all(dir)?;
        let manifest = self.manifest(PsiSpec::from_profile(&self.ansatz.rotation), orbits.is_some());
        self.base.write(dir)?;
        self.deformation.write(dir, "zeta")?;
        let grid = self.density.grid();
        let nh = grid.n_half();
        let current = self.velocity_moments();
        let mut density = Table::new(["r", "cos_theta", "rho"]);
        let mut cur = Table::new(["r", "cos_theta", "j", "average_velocity"]);
        for i in 0..grid.n_samples() {
            let (r, c) = (grid.radial()[i / nh], grid.cos_theta(i % nh));
            density.push(vec![r, c, self.density.values()[i]]);
            cur.push(vec![r, c, current.magnitude[i], current.average_velocity[i]]);
        }
        density.write(&dir.join(&manifest.files.density))?;
        cur.write(&dir.join(&manifest.files.current))?;
        let nl = grid.sectors();
        let mut rho_m = Table::new(std::iter::once("r".to_string()).chain((0..nl).map(|k| format!("rho_{}", 2 * k))));
        let mut u_m = Table::new(std::iter::once("r".to_string()).chain((0..nl).map(|k| format!("U_{}", 2 * k))));
        for (j, &r) in grid.radial().iter().enumerate() {
            let mut row = vec![r];
            row.extend(self.density.moments().iter().map(|m| m[j]));
            rho_m.push(row);
            let sec = self.potential.sectors_at(&grid.stencil(r));
            let mut row = vec![r];
            row.extend(sec.iter().enumerate().map(|(k, s)| if k == 0 { s[0] + self.constant_c } else { s[0] }));
            u_m.push(row);
        }
        rho_m.write(&dir.join(&manifest.files.rho_moments))?;
        u_m.write(&dir.join(&manifest.files.u_moments))?;
        if let (Some(rep), Some(name)) = (orbits, &manifest.files.orbits) {
            rep.table().write(&dir.join(name))?;
        }
        write_json(&dir.join("manifest.json"), &manifest)?;
        Ok(manifest)
    }

    /// Reads an export back. The potential is rebuilt from the stored
    /// density samples, so a damaged density file shows up in the checks.
    pub fn load(dir: &Path) -> Result<(Self, StateManifest)> {
        let manifest: StateManifest = read_json(&dir.join("manifest.json"))?;
        if manifest.schema != SCHEMA {
            return Err(Error::Data(format!("unsupported schema {:?}", manifest.schema)));
        }
        let base = Arc::new(RadialState::read(dir)?);
        let deformation = DeformationField::read(dir, "zeta")?;
        let res = &manifest.resolution;
        let grid = FieldGrid::new(&FieldResolution {
            breakpoints: res.breakpoints.clone(),
            panel_order: res.panel_order,
            polar_nodes: res.polar_nodes,
            l_pot: res.l_pot,
        })?;
        let table = Table::read(&dir.join(&manifest.files.density))?;
        let (r, c, rho) = (table.column("r")?, table.column("cos_theta")?, table.column("rho")?);
        if rho.len() != grid.n_samples() {
            return Err(Error::Data(format!(
                "density file has {} samples, the grid needs {}",
                rho.len(),
                grid.n_samples()
            )));
        }
        let nh = grid.n_half();
        for i in 0..rho.len() {
            let (er, ec) = (grid.radial()[i / nh], grid.cos_theta(i % nh));
            if (r[i] - er).abs() > 1e-14 * er.max(1.0) || (c[i] - ec).abs() > 1e-14 {
                return Err(Error::Data(format!("density sample {i} is not on the field grid")));
            }
        }
        let density = AxiField::from_values(grid, rho)?;
        let rotation = manifest.psi.build()?;
        let ansatz = Ansatz::with_quadrature(
            PolytropeProfile::new(base.mu, base.e0)?,
            rotation,
            HQuadrature {
                outer: res.quad_outer,
                inner: res.quad_inner,
            },
        )?;
        let state = Self::from_parts(base, ansatz, manifest.gamma, deformation, density)?;
        Ok((state, manifest))
    }
}

/// Samples of the free boundary g_ζ(S²) at n polar angles in [0, π].
pub fn boundary_curve(field: &DeformationField, n: usize) -> Vec<BoundaryPoint> {
    (0..n)
        .map(|i| {
            let c = (PI * i as f64 / (n - 1) as f64).cos();
            BoundaryPoint {
                cos_theta: c,
                radius: 1.0 + field.eval_polar(1.0, c).0,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionSpec {
    pub l_max: usize,
    pub nr_c: usize,
    pub breakpoints: Vec<f64>,
    pub panel_order: usize,
    pub polar_nodes: usize,
    pub l_pot: usize,
    pub quad_outer: usize,
    pub quad_inner: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFiles {
    pub base_state: String,
    pub deformation: String,
    pub density: String,
    pub rho_moments: String,
    pub u_moments: String,
    pub current: String,
    pub orbits: Option<String>,
}

/// manifest.json of a state export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateManifest {
    pub schema: String,
    pub gamma: f64,
    pub mu: f64,
    pub e0: f64,
    pub mass: f64,
    pub constant_c: f64,
    pub psi: PsiSpec,
    pub multipoles: Vec<f64>,
    pub resolution: ResolutionSpec,
    pub j_all_zero: bool,
    pub checks: Vec<InvariantCheck>,
    pub passed: bool,
    pub files: StateFiles,
}

impl PsiSpec {
    pub fn from_profile(profile: &RotationProfile) -> Self {
        match profile {
            RotationProfile::EvenGaussian { a } => PsiSpec::EvenGaussian { a: *a },
            RotationProfile::SkewedRational { b, a } => PsiSpec::SkewedRational { b: *b, a: *a },
            RotationProfile::Table(t) => {
                let (p, psi) = t.rows();
                PsiSpec::CustomTable { p, psi }
            }
        }
    }
}

/// Everything `diagnose` reports about an exported state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub gamma: f64,
    pub checks: Vec<InvariantCheck>,
    pub sector_norms: Vec<SectorReport>,
    pub orbits: OrbitReport,
    /// Max E drift with the step halved.
    pub half_step_drift_e: f64,
    /// log₂ of the E drift ratio between the two steps.
    pub energy_order: f64,
    /// f drift at the configured step against its reference threshold;
    /// reported alongside the checks but not part of `passed`.
    pub f_drift: InvariantCheck,
    pub passed: bool,
}

pub const F_DRIFT_THRESHOLD: f64 = 1e-6;
pub const P_DRIFT_THRESHOLD: f64 = 1e-10;

/// Adds the sector analysis of K and the orbit drifts to the checks of a
/// state. Returns the report with the Poisson residual map.
pub fn diagnose(state: &AxisymmetricState, orbit_opts: &OrbitOptions) -> (DiagnosticReport, Table) {
    let mut checks = state.checks.clone();
    let sectors = sector_reports(state.base(), state.deformation.grid());
    for s in sectors.iter().filter(|s| s.l >= 2) {
        checks.push(InvariantCheck::at_most(&format!("|K_{}| <= 3/(2l+1)", s.l), s.norm, s.bound + 0.02));
    }
    for s in &sectors {
        checks.push(InvariantCheck::at_least(&format!("id - K_{} invertible", s.l), s.min_singular, 1e-3));
    }
    let orbits = state.stationarity_check(orbit_opts);
    let half = state.stationarity_check(&OrbitOptions {
        dt: 0.5 * orbit_opts.dt,
        ..*orbit_opts
    });
    let energy_order = (orbits.max_drift_e / half.max_drift_e).log2();
    checks.push(InvariantCheck::at_most("P drift along orbits", orbits.max_drift_p, P_DRIFT_THRESHOLD));
    checks.push(InvariantCheck::at_least("order of the E drift in dt", energy_order, 1.8));
    let f_drift = InvariantCheck::at_most("f drift along orbits", orbits.max_drift_f, F_DRIFT_THRESHOLD);
    let mut map = Table::new(["r", "cos_theta", "residual", "in_shell"]);
    for p in state.poisson_residuals(POISSON_STEP) {
        map.push(vec![p.r, p.cos_theta, p.residual, p.in_shell as u8 as f64]);
    }
    let passed = checks.iter().all(|c| c.pass);
    (
        DiagnosticReport {
            gamma: state.gamma,
            checks,
            sector_norms: sectors,
            orbits,
            half_step_drift_e: half.max_drift_e,
            energy_order,
            f_drift,
            passed,
        },
        map,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{Discretization, NewtonOptions};
    use crate::spherical::{solve_base_state, DEFAULT_NR, DEFAULT_TOL};
    use std::sync::OnceLock;

    fn base() -> Arc<RadialState> {
        static BASE: OnceLock<Arc<RadialState>> = OnceLock::new();
        BASE.get_or_init(|| Arc::new(solve_base_state(1.0, DEFAULT_NR, DEFAULT_TOL).unwrap())).clone()
    }

    fn operator(rotation: RotationProfile) -> DeformationOperator {
        let b = base();
        let ansatz = Ansatz::new(PolytropeProfile::new(b.mu, b.e0).unwrap(), rotation).unwrap();
        DeformationOperator::new(b, ansatz, &Discretization::default()).unwrap()
    }

    fn solved(rotation: RotationProfile, gamma: f64) -> AxisymmetricState {
        let op = operator(rotation);
        let rep = op.newton_solve(gamma, &op.zero_field(), &NewtonOptions::default()).unwrap();
        AxisymmetricState::assemble(&op, gamma, &rep.field).unwrap()
    }

    fn skewed_state() -> &'static AxisymmetricState {
        static S: OnceLock<AxisymmetricState> = OnceLock::new();
        S.get_or_init(|| solved(RotationProfile::skewed_rational(0.5, 0.5).unwrap(), 0.6))
    }

    fn check<'a>(s: &'a AxisymmetricState, name: &str) -> &'a InvariantCheck {
        s.checks.iter().find(|c| c.name.starts_with(name)).unwrap()
    }

    #[test]
    fn base_state_assembles_spherically() {
        let op = operator(RotationProfile::skewed_rational(0.5, 0.5).unwrap());
        let s = AxisymmetricState::assemble(&op, 0.0, &op.zero_field()).unwrap();
        assert!(s.passed(), "{:?}", s.failed_checks());
        assert!(s.quadrupole_ratio() <= SPHERICITY_THRESHOLD);
        assert!((s.mass - base().mass).abs() <= 1e-9 * s.mass);
        let x = Vec3::new(0.3, -0.2, 0.4);
        assert!((s.u(&x) - base().u0_at(x.norm())).abs() <= 1e-9);
        assert!((s.density_at(&x) - base().rho0_at(x.norm())).abs() <= 1e-9);
        assert!(s.velocity_moments().is_zero());
    }

    #[test]
    fn skewed_state_rotates_and_is_not_spherical() {
        let s = skewed_state();
        assert!(s.passed(), "{:?}", s.failed_checks());
        assert!(s.quadrupole_ratio() >= NONSPHERICITY_THRESHOLD);
        let j = s.velocity_moments();
        assert!(j.max_magnitude() > 0.0);
        let x = Vec3::new(0.3, 0.4, 0.1);
        let jx = s.current_at(&x);
        assert!(jx.norm() > 0.0);
        assert!(jx.dot(&x).abs() <= 1e-15 && jx[2] == 0.0);
        assert_eq!(s.current_at(&Vec3::new(0.0, 0.0, 0.4)), Vec3::zeros());
        let (_, f_vert, f_tang) = s.nonsphericity_witness();
        assert!((f_vert - f_tang).abs() > 1e-6, "{f_vert} {f_tang}");
    }

    #[test]
    fn average_velocity_vanishes_towards_the_boundary() {
        let s = skewed_state();
        let rb = s.boundary_radius(0.0);
        let v = |t: f64| {
            let x = Vec3::new(t * rb, 0.0, 0.0);
            s.current_at(&x).norm() / s.density_at(&x)
        };
        assert!(v(0.999) < v(0.99) && v(0.99) < v(0.9));
        assert!(v(0.9999) < 0.2 * v(0.9));
    }

    #[test]
    fn even_profile_carries_no_current() {
        let s = solved(RotationProfile::even_gaussian(1.0).unwrap(), 0.8);
        assert!(s.passed(), "{:?}", s.failed_checks());
        assert!(check(&s, "j = 0").pass);
        assert!(s.quadrupole_ratio() >= NONSPHERICITY_THRESHOLD);
        // the support is no longer a ball
        assert!(s.boundary_radius(0.0) != s.boundary_radius(1.0));
    }

    #[test]
    fn orbits_conserve_momentum_and_energy_to_second_order() {
        let s = skewed_state();
        let opts = OrbitOptions {
            n_orbits: 6,
            t_final: 0.5,
            ..Default::default()
        };
        let a = s.stationarity_check(&opts);
        let b = s.stationarity_check(&OrbitOptions { dt: 0.5 * opts.dt, ..opts });
        assert_eq!(a.escaped, 0);
        assert!(a.max_drift_p <= P_DRIFT_THRESHOLD, "{}", a.max_drift_p);
        let order = (a.max_drift_e / b.max_drift_e).log2();
        assert!(order >= 1.8, "{order}");
        assert_eq!(a.orbits[0].x0, s.stationarity_check(&opts).orbits[0].x0);
    }

    #[test]
    fn export_round_trips_and_is_deterministic() {
        let s = skewed_state();
        let orbits = s.stationarity_check(&OrbitOptions {
            n_orbits: 2,
            t_final: 0.05,
            ..Default::default()
        });
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = s.export(a.path(), Some(&orbits)).unwrap();
        s.export(b.path(), Some(&orbits)).unwrap();
        for name in ["manifest.json", "density.csv", "zeta.csv", "u_moments.csv", "orbits.csv"] {
            let x = std::fs::read(a.path().join(name)).unwrap();
            assert_eq!(x, std::fs::read(b.path().join(name)).unwrap(), "{name}");
        }
        assert_eq!(m.schema, SCHEMA);
        let (back, m2) = AxisymmetricState::load(a.path()).unwrap();
        assert_eq!(m, m2);
        assert_eq!(back.density.values(), s.density.values());
        assert_eq!(back.constant_c, s.constant_c);
        assert!(back.passed());
    }

    #[test]
    fn damaged_density_fails_the_checks() {
        let s = skewed_state();
        let dir = tempfile::tempdir().unwrap();
        s.export(dir.path(), None).unwrap();
        let path = dir.path().join("density.csv");
        let mut t = Table::read(&path).unwrap();
        let n = t.rows.len();
        t.rows[n / 3][2] *= 1.5;
        t.write(&path).unwrap();
        let (back, _) = AxisymmetricState::load(dir.path()).unwrap();
        assert!(!back.passed());
    }

    #[test]
    fn tangential_direction_is_unit_and_horizontal() {
        let e = tangential_direction(&Vec3::new(3.0, 4.0, 7.0));
        assert!((e.norm() - 1.0).abs() < 1e-15);
        assert_eq!(e, Vec3::new(-0.8, 0.6, 0.0));
        assert_eq!(tangential_direction(&Vec3::new(0.0, 0.0, 1.0)), Vec3::zeros());
    }
}
