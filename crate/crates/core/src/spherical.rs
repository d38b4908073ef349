//! The spherically symmetric polytrope that every axisymmetric family
//! branches from.
//!
//! Writing y = E₀ − U₀, the radial Poisson equation inside the support is
//! the Lane–Emden equation y″ + 2y′/r = −4π c_μ y₊^n with n = μ + 3/2. It is
//! shot from y(0) = 1 and rescaled so that the first zero sits at r = 1.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json, Table};
use crate::numerics::ode::{dopri_step, Dopri};
use crate::numerics::quadrature::{gauss_legendre, gauss_legendre_on};
use crate::numerics::spline::QuinticHermite;
use crate::profiles::{spherical_density_constant, validate_mu};

pub const DEFAULT_NR: usize = 256;
pub const DEFAULT_R_OUT: f64 = 4.0;
pub const DEFAULT_TOL: f64 = 1e-12;

/// Raw Lane–Emden solution before rescaling.
#[derive(Debug, Clone, Copy)]
struct Shot {
    radius: f64,
    slope_at_radius: f64,
}

/// Radial grid on [0, r_out] with Chebyshev clustering at 0 and 1 inside
/// the support and at 1 outside. Three quarters of the points lie in [0, 1].
pub fn radial_grid(nr: usize, r_out: f64) -> Vec<f64> {
    let n_in = (3 * nr / 4).max(8);
    let n_out = nr.saturating_sub(n_in).max(1);
    let mut r: Vec<f64> = (0..n_in)
        .map(|j| 0.5 * (1.0 - (PI * j as f64 / (n_in - 1) as f64).cos()))
        .collect();
    r[0] = 0.0;
    r[n_in - 1] = 1.0;
    for j in 1..=n_out {
        let s = 1.0 - (0.5 * PI * j as f64 / n_out as f64).cos();
        r.push(1.0 + (r_out - 1.0) * s);
    }
    let last = r.len() - 1;
    r[last] = r_out;
    r
}

struct LaneEmden {
    a: f64,
    n: f64,
}

impl LaneEmden {
    fn rhs(&self, r: f64, y: &[f64; 2]) -> [f64; 2] {
        let yp = y[0].max(0.0).powf(self.n);
        [y[1], -self.a * yp - 2.0 * y[1] / r]
    }

    /// Start radius for the series solution and the state there.
    fn start(&self) -> (f64, [f64; 2]) {
        let r = 1e-3 / self.a.sqrt();
        let (a, n) = (self.a, self.n);
        let y = 1.0 - a * r * r / 6.0 + n * a * a * r.powi(4) / 120.0;
        let yp = -a * r / 3.0 + n * a * a * r.powi(3) / 30.0;
        (r, [y, yp])
    }

    fn series(&self, r: f64) -> [f64; 2] {
        let (a, n) = (self.a, self.n);
        [
            1.0 - a * r * r / 6.0 + n * a * a * r.powi(4) / 120.0,
            -a * r / 3.0 + n * a * a * r.powi(3) / 30.0,
        ]
    }

    fn shoot(&self, tol: f64) -> Result<Shot> {
        let f = |r: f64, y: &[f64; 2]| self.rhs(r, y);
        let (r0, y0) = self.start();
        let solver = Dopri::new(tol);
        let traj = solver.integrate(&f, r0, y0, 1e3, 1e-3, |_, y| y[0] < 0.0)?;
        if traj.y[0] >= 0.0 {
            return Err(Error::Numerical(
                "Lane-Emden solution has no zero: support is not compact".into(),
            ));
        }
        // Newton on the length of a single step from the last positive state
        let (tp, yp) = (traj.t_prev, traj.y_prev);
        let mut h = (traj.t - tp) * yp[0] / (yp[0] - traj.y[0]);
        let mut state = dopri_step(&f, tp, &yp, h, tol).0;
        for _ in 0..60 {
            let dh = state[0] / state[1];
            h -= dh;
            state = dopri_step(&f, tp, &yp, h, tol).0;
            if dh.abs() <= 1e-16 * (tp + h) {
                break;
            }
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Numerical("failed to locate the Lane-Emden zero".into()));
        }
        Ok(Shot {
            radius: tp + h,
            slope_at_radius: state[1],
        })
    }
}

/// Spherically symmetric base state normalized to support radius 1 and
/// U₀ → 0 at infinity.
#[derive(Debug, Clone)]
pub struct RadialState {
    pub mu: f64,
    pub e0: f64,
    pub mass: f64,
    pub tol: f64,
    pub r: Vec<f64>,
    pub rho0: Vec<f64>,
    pub u0: Vec<f64>,
    pub u0_prime: Vec<f64>,
    c_mu: f64,
    interior: QuinticHermite,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RadialStateHeader {
    pub mu: f64,
    pub e0: f64,
    pub mass: f64,
    pub nr: usize,
    pub tol: f64,
}

/// One named invariant with its measured value and the threshold applied.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InvariantCheck {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl InvariantCheck {
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            threshold,
            pass: value <= threshold,
        }
    }

    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            threshold,
            pass: value >= threshold,
        }
    }
}

pub fn solve_base_state(mu: f64, nr: usize, tol: f64) -> Result<RadialState> {
    solve_base_state_on(mu, &radial_grid(nr, DEFAULT_R_OUT), tol)
}

/// Solves on a caller-supplied grid, which must contain 0 and 1 and end at
/// or beyond 1.
pub fn solve_base_state_on(mu: f64, grid: &[f64], tol: f64) -> Result<RadialState> {
    validate_mu(mu)?;
    if !(tol > 0.0 && tol < 1e-3) {
        return Err(Error::InvalidParameter(format!("tolerance must lie in (0, 1e-3), got {tol}")));
    }
    if grid.len() < 8 || grid[0] != 0.0 || !grid.windows(2).all(|w| w[0] < w[1]) || !grid.contains(&1.0) {
        return Err(Error::InvalidParameter(
            "radial grid must be increasing, start at 0 and contain r = 1".into(),
        ));
    }
    if mu < 1.0 {
        log::warn!("mu = {mu} < 1: the base density is not C^1 at the free boundary");
    }
    let c_mu = spherical_density_constant(mu);
    let n = mu + 1.5;
    let le = LaneEmden { a: 4.0 * PI * c_mu, n };
    let shot = le.shoot(tol)?;
    let big_r = shot.radius;
    let k = big_r.powf(2.0 / (n - 1.0));
    let mass = -k * big_r * shot.slope_at_radius;
    let e0 = -mass;

    // second pass: march to every interior grid point
    let f = |r: f64, y: &[f64; 2]| le.rhs(r, y);
    let solver = Dopri::new(tol);
    let (r_start, y_start) = le.start();
    let mut t = r_start;
    let mut y = y_start;
    let mut r = Vec::with_capacity(grid.len());
    let mut rho0 = Vec::with_capacity(grid.len());
    let mut u0 = Vec::with_capacity(grid.len());
    let mut u0p = Vec::with_capacity(grid.len());
    let mut u0pp = Vec::new();
    for &rho in grid {
        if rho > 1.0 {
            r.push(rho);
            rho0.push(0.0);
            u0.push(-mass / rho);
            u0p.push(mass / (rho * rho));
            continue;
        }
        let target = big_r * rho;
        let raw = if rho == 1.0 {
            [0.0, shot.slope_at_radius]
        } else if target <= r_start {
            le.series(target)
        } else {
            let h0 = (target - t).max(1e-6);
            let traj = solver.integrate(&f, t, y, target, h0, |_, _| false)?;
            t = traj.t;
            y = traj.y;
            traj.y
        };
        let ys = k * raw[0].max(0.0);
        let dys = k * big_r * raw[1];
        let dens = c_mu * ys.powf(n);
        let up = -dys;
        r.push(rho);
        rho0.push(dens);
        u0.push(e0 - ys);
        u0p.push(up);
        u0pp.push(if rho == 0.0 {
            4.0 * PI * dens / 3.0
        } else {
            4.0 * PI * dens - 2.0 * up / rho
        });
    }
    let n_in = u0pp.len();
    let interior = QuinticHermite::new(r[..n_in].to_vec(), u0[..n_in].to_vec(), u0p[..n_in].to_vec(), u0pp);
    Ok(RadialState {
        mu,
        e0,
        mass,
        tol,
        r,
        rho0,
        u0,
        u0_prime: u0p,
        c_mu,
        interior,
    })
}

impl RadialState {
    pub fn nr(&self) -> usize {
        self.r.len()
    }

    pub fn c_mu(&self) -> f64 {
        self.c_mu
    }

    pub fn index(&self) -> f64 {
        self.mu + 1.5
    }

    pub fn r_out(&self) -> f64 {
        self.r[self.r.len() - 1]
    }

    /// U₀, U₀′, U₀″ at radius s ≥ 0.
    pub fn potential(&self, s: f64) -> (f64, f64, f64) {
        let s = s.abs();
        if s >= 1.0 {
            let m = self.mass;
            (-m / s, m / (s * s), -2.0 * m / (s * s * s))
        } else {
            self.interior.eval(s)
        }
    }

    pub fn u0_at(&self, s: f64) -> f64 {
        self.potential(s).0
    }

    pub fn u0_prime_at(&self, s: f64) -> f64 {
        self.potential(s).1
    }

    /// U₀(r) − U₀(0). Near the centre this is 4π ∫₀^r t ρ₀(t)(1 − t/r) dt,
    /// which keeps full relative accuracy where a difference of two O(1)
    /// potentials would not.
    pub fn potential_increment(&self, r: f64) -> f64 {
        let r = r.abs();
        if r == 0.0 {
            return 0.0;
        }
        if r > 0.5 {
            return self.u0_at(r) - self.u0_at(0.0);
        }
        4.0 * PI * gauss_legendre_on(20, 0.0, r).integrate(|t| t * self.rho0_at(t) * (1.0 - t / r))
    }

    /// ρ₀ = c_μ (E₀ − U₀)₊^n, consistent with the interpolated potential.
    pub fn rho0_at(&self, s: f64) -> f64 {
        if s.abs() >= 1.0 {
            return 0.0;
        }
        let y = self.e0 - self.u0_at(s);
        if y > 0.0 {
            self.c_mu * y.powf(self.index())
        } else {
            0.0
        }
    }

    /// ρ₀′(s).
    pub fn rho0_prime_at(&self, s: f64) -> f64 {
        if s.abs() >= 1.0 {
            return 0.0;
        }
        let (u, up, _) = self.potential(s);
        let y = self.e0 - u;
        if y > 0.0 {
            let n = self.index();
            -n * self.c_mu * y.powf(n - 1.0) * up
        } else {
            0.0
        }
    }

    /// (4π/r²) ∫₀^r s² ρ₀(s) ds by composite Gauss quadrature on the grid
    /// cells, evaluated independently of the stored derivative samples.
    pub fn enclosed_field(&self, radius: f64) -> f64 {
        if radius <= 0.0 {
            return 0.0;
        }
        let gl = gauss_legendre(10);
        let top = radius.min(1.0);
        let mut total = 0.0;
        for w in self.r.windows(2) {
            let (a, b) = (w[0], w[1].min(top));
            if a >= top {
                break;
            }
            total += gl.mapped(a, b).integrate(|s| s * s * self.rho0_at(s));
        }
        4.0 * PI * total / (radius * radius)
    }

    pub fn header(&self) -> RadialStateHeader {
        RadialStateHeader {
            mu: self.mu,
            e0: self.e0,
            mass: self.mass,
            nr: self.nr(),
            tol: self.tol,
        }
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(["r", "rho0", "u0", "u0_prime"]);
        for i in 0..self.nr() {
            t.push(vec![self.r[i], self.rho0[i], self.u0[i], self.u0_prime[i]]);
        }
        t
    }

    /// Writes `base_state.csv` and `base_state.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.table().write(&dir.join("base_state.csv"))?;
        write_json(&dir.join("base_state.json"), &self.header())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let header: RadialStateHeader = read_json(&dir.join("base_state.json"))?;
        let table = Table::read(&dir.join("base_state.csv"))?;
        Self::from_parts(header, &table)
    }

    /// Rebuilds the state from its serialized samples. The interpolant uses
    /// the stored density for its curvature data.
    pub fn from_parts(header: RadialStateHeader, table: &Table) -> Result<Self> {
        validate_mu(header.mu)?;
        let r = table.column("r")?;
        let rho0 = table.column("rho0")?;
        let u0 = table.column("u0")?;
        let u0_prime = table.column("u0_prime")?;
        if r.len() != header.nr || r.len() < 8 {
            return Err(Error::Data(format!("expected {} radial rows, found {}", header.nr, r.len())));
        }
        if r[0] != 0.0 || !r.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Data("radial column must start at 0 and increase".into()));
        }
        let n_in = r
            .iter()
            .position(|&x| x == 1.0)
            .ok_or_else(|| Error::Data("radial column must contain r = 1".into()))?
            + 1;
        let u0pp: Vec<f64> = (0..n_in)
            .map(|i| {
                if r[i] == 0.0 {
                    4.0 * PI * rho0[i] / 3.0
                } else {
                    4.0 * PI * rho0[i] - 2.0 * u0_prime[i] / r[i]
                }
            })
            .collect();
        let interior = QuinticHermite::new(r[..n_in].to_vec(), u0[..n_in].to_vec(), u0_prime[..n_in].to_vec(), u0pp);
        Ok(Self {
            mu: header.mu,
            e0: header.e0,
            mass: header.mass,
            tol: header.tol,
            r,
            rho0,
            u0,
            u0_prime,
            c_mu: spherical_density_constant(header.mu),
            interior,
        })
    }

    /// ΔU₀ − 4πρ₀ at interior grid nodes in [lo, hi]. U₀″ is obtained by
    /// differentiating the sextic through seven neighbouring U₀′ samples, so
    /// the residual sees the stored density and gradient independently.
    pub fn poisson_residuals(&self, lo: f64, hi: f64) -> Vec<(f64, f64)> {
        let n = self.nr();
        (3..n - 3)
            .filter(|&i| self.r[i] >= lo && self.r[i] <= hi)
            .map(|i| {
                let xs = &self.r[i - 3..=i + 3];
                let ys = &self.u0_prime[i - 3..=i + 3];
                let d = lagrange_derivative(xs, ys, self.r[i]);
                let lap = d + 2.0 * self.u0_prime[i] / self.r[i];
                (self.r[i], lap - 4.0 * PI * self.rho0[i])
            })
            .collect()
    }

    /// Checks every structural property of the base state.
    pub fn invariant_checks(&self) -> Vec<InvariantCheck> {
        let mut out = Vec::new();
        let n_in = self.r.iter().position(|&x| x == 1.0).map_or(0, |i| i + 1);
        let u1 = self.u0[n_in - 1];
        out.push(InvariantCheck::at_most("U0(1)=E0", (u1 - self.e0).abs(), 1e-8));

        let identity = (1..self.nr())
            .map(|i| {
                let exact = self.enclosed_field(self.r[i]);
                (self.u0_prime[i] - exact).abs() / exact.abs()
            })
            .fold(0.0, f64::max);
        out.push(InvariantCheck::at_most("U0' integral identity", identity, 1e-8));

        let increases = self.rho0.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        out.push(InvariantCheck::at_most("rho0 nonincreasing", increases, 0.0));
        out.push(InvariantCheck::at_least("rho0(0) > 0", self.rho0[0], f64::MIN_POSITIVE));
        let outside = self.r[n_in..]
            .iter()
            .zip(&self.rho0[n_in..])
            .map(|(_, d)| d.abs())
            .fold(0.0, f64::max);
        out.push(InvariantCheck::at_most("rho0 = 0 outside B1", outside, 0.0));

        let exterior = self.r[n_in..]
            .iter()
            .zip(&self.u0[n_in..])
            .map(|(r, u)| (u + self.mass / r).abs())
            .fold(0.0, f64::max);
        out.push(InvariantCheck::at_most("U0 = -M/r outside B1", exterior, 1e-12 * self.mass));
        let u_increasing = self.u0.windows(2).all(|w| w[1] > w[0]);
        out.push(InvariantCheck::at_least(
            "U0 strictly increasing",
            if u_increasing { 1.0 } else { 0.0 },
            1.0,
        ));

        // one-sided difference quotient U0'(r1)/r1 at the first nonzero node
        let curvature = self.u0_prime[1] / self.r[1];
        let expected = 4.0 * PI * self.rho0[0] / 3.0;
        out.push(InvariantCheck::at_most(
            "U0''(0) = 4pi rho0(0)/3",
            (curvature - expected).abs() / expected,
            1e-4,
        ));

        let consistency = (0..self.nr())
            .map(|i| {
                let y = self.e0 - self.u0[i];
                let h = if y > 0.0 { self.c_mu * y.powf(self.index()) } else { 0.0 };
                (self.rho0[i] - h).abs()
            })
            .fold(0.0, f64::max);
        out.push(InvariantCheck::at_most(
            "rho0 = h(0, U0)",
            consistency / self.rho0[0],
            1e-7,
        ));

        let poisson = self
            .poisson_residuals(0.05, 0.95)
            .iter()
            .map(|(_, v)| v.abs())
            .fold(0.0, f64::max);
        out.push(InvariantCheck::at_most("Poisson residual on [0.05, 0.95]", poisson, 1e-5));
        out
    }
}

/// Derivative at x of the interpolating polynomial through (xs, ys).
fn lagrange_derivative(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    let mut total = 0.0;
    for j in 0..n {
        let mut denom = 1.0;
        for m in 0..n {
            if m != j {
                denom *= xs[j] - xs[m];
            }
        }
        let mut num = 0.0;
        for k in 0..n {
            if k == j {
                continue;
            }
            let mut prod = 1.0;
            for m in 0..n {
                if m != j && m != k {
                    prod *= x - xs[m];
                }
            }
            num += prod;
        }
        total += ys[j] * num / denom;
    }
    total
}
