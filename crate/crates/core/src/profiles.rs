//! The microscopic ansatz f = φ(E) ψ(γP) and the density integral
//! h(γ, r, u) it induces, together with the partial derivatives of h.
//!
//! With E = E₀ − (E₀ − u) t and s = w σ, w = √(2(E − u)), every integral
//! becomes a Gauss–Jacobi rule in t (weight t^μ (1−t)^{±1/2}) wrapped around
//! a symmetric Gauss–Legendre rule in σ.

use std::f64::consts::{PI, SQRT_2};
use std::path::Path;

use statrs::function::beta::beta;

use crate::error::{Error, Result};
use crate::numerics::quadrature::{gauss_jacobi_two_sided, gauss_legendre, QuadratureRule};
use crate::numerics::spline::CubicSpline;

pub const MU_MIN: f64 = -0.5;
pub const MU_MAX: f64 = 3.5;

/// φ(E) = (E₀ − E)₊^μ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolytropeProfile {
    pub mu: f64,
    pub e0: f64,
}

impl PolytropeProfile {
    pub fn new(mu: f64, e0: f64) -> Result<Self> {
        validate_mu(mu)?;
        if !e0.is_finite() {
            return Err(Error::InvalidParameter(format!("cutoff energy must be finite, got {e0}")));
        }
        Ok(Self { mu, e0 })
    }

    pub fn phi(&self, e: f64) -> f64 {
        if e < self.e0 {
            (self.e0 - e).powf(self.mu)
        } else {
            0.0
        }
    }

    /// Polytropic index n = μ + 3/2 of the macroscopic equation of state.
    pub fn index(&self) -> f64 {
        self.mu + 1.5
    }
}

pub fn validate_mu(mu: f64) -> Result<()> {
    if mu > MU_MIN && mu < MU_MAX {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "mu must lie in ({MU_MIN}, {MU_MAX}), got {mu}"
        )))
    }
}

/// c_μ = 4√2 π B(μ+1, 3/2), so that h(0, r, u) = c_μ (E₀ − u)₊^{μ+3/2}.
pub fn spherical_density_constant(mu: f64) -> f64 {
    4.0 * SQRT_2 * PI * beta(mu + 1.0, 1.5)
}

/// Particle energy and axial angular momentum at a phase-space point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyMomentum {
    pub e: f64,
    pub p: f64,
}

impl EnergyMomentum {
    pub fn at(x: [f64; 3], v: [f64; 3], potential: f64) -> Self {
        let v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        Self {
            e: 0.5 * v2 + potential,
            p: x[0] * v[1] - x[1] * v[0],
        }
    }
}

/// Angular-momentum profile ψ.
#[derive(Debug, Clone, PartialEq)]
pub enum RotationProfile {
    /// ψ(P) = exp(−aP²).
    EvenGaussian { a: f64 },
    /// ψ(P) = (1 + bP³/(1+P⁴)) exp(−aP²). With a = 0 this is the plain
    /// skewed rational profile, whose even part is identically one.
    SkewedRational { b: f64, a: f64 },
    /// Natural cubic spline through tabulated (P, ψ) pairs, held constant
    /// beyond the table.
    Table(TableProfile),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableProfile {
    spline: CubicSpline,
}

impl TableProfile {
    /// The (P, ψ) rows the table was built from.
    pub fn rows(&self) -> (Vec<f64>, Vec<f64>) {
        (self.spline.knots().to_vec(), self.spline.values().to_vec())
    }

    pub fn p_range(&self) -> (f64, f64) {
        let k = self.spline.knots();
        (k[0], k[k.len() - 1])
    }
}

impl RotationProfile {
    pub fn even_gaussian(a: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidParameter(format!("gaussian width a must be positive, got {a}")));
        }
        Ok(Self::EvenGaussian { a })
    }

    pub fn skewed_rational(b: f64, a: f64) -> Result<Self> {
        if !(b > 0.0 && b < 1.0) {
            return Err(Error::InvalidParameter(format!("skew b must lie in (0, 1), got {b}")));
        }
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::InvalidParameter(format!("damping a must be nonnegative, got {a}")));
        }
        let profile = Self::SkewedRational { b, a };
        profile.check_axioms((-20.0, 20.0))?;
        Ok(profile)
    }

    /// Builds a tabulated profile and rejects it unless the axioms hold on
    /// the table and on a refined sample of the interpolant.
    pub fn from_table(p: Vec<f64>, psi: Vec<f64>) -> Result<Self> {
        if p.len() != psi.len() || p.len() < 4 {
            return Err(Error::Data("rotation table needs at least four (P, psi) rows".into()));
        }
        if !p.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Data("rotation table P column must be strictly increasing".into()));
        }
        if p.iter().chain(&psi).any(|v| !v.is_finite()) {
            return Err(Error::Data("rotation table contains non-finite entries".into()));
        }
        let Some(zero) = p.iter().position(|&x| x == 0.0) else {
            return Err(Error::Data("rotation table must contain the row P = 0".into()));
        };
        if (psi[zero] - 1.0).abs() > 1e-12 {
            return Err(Error::Data(format!("rotation table has psi(0) = {}, expected 1", psi[zero])));
        }
        let range = (p[0], p[p.len() - 1]);
        let profile = Self::Table(TableProfile {
            spline: CubicSpline::new(p, psi),
        });
        profile.check_axioms(range)?;
        Ok(profile)
    }

    /// Reads a two-column CSV (P, psi). Blank lines, `#` comments and a
    /// non-numeric header row are skipped.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut p = Vec::new();
        let mut psi = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 2 {
                return Err(Error::Data(format!("line {}: expected two columns", lineno + 1)));
            }
            match (cols[0].parse::<f64>(), cols[1].parse::<f64>()) {
                (Ok(a), Ok(b)) => {
                    p.push(a);
                    psi.push(b);
                }
                _ if p.is_empty() => continue,
                _ => return Err(Error::Data(format!("line {}: unparsable row {line:?}", lineno + 1))),
            }
        }
        Self::from_table(p, psi)
    }

    pub fn is_even(&self) -> bool {
        matches!(self, Self::EvenGaussian { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::EvenGaussian { .. } => "even-gaussian",
            Self::SkewedRational { .. } => "skewed-rational",
            Self::Table(_) => "custom-table",
        }
    }

    /// ψ(P), ψ′(P), ψ″(P).
    pub fn eval(&self, p: f64) -> (f64, f64, f64) {
        match self {
            Self::EvenGaussian { a } => {
                let e = (-a * p * p).exp();
                (e, -2.0 * a * p * e, (4.0 * a * a * p * p - 2.0 * a) * e)
            }
            Self::SkewedRational { b, a } => {
                let p2 = p * p;
                let p3 = p2 * p;
                let d = 1.0 + p2 * p2;
                let q = 1.0 + b * p3 / d;
                let dq = b * (3.0 * p2 - p3 * p3) / (d * d);
                let d2q = b * (6.0 * p - 24.0 * p3 * p2 + 2.0 * p3 * p3 * p3) / (d * d * d);
                let e = (-a * p2).exp();
                let de = -2.0 * a * p * e;
                let d2e = (4.0 * a * a * p2 - 2.0 * a) * e;
                (q * e, dq * e + q * de, d2q * e + 2.0 * dq * de + q * d2e)
            }
            Self::Table(t) => {
                let (lo, hi) = t.p_range();
                if p < lo {
                    (t.spline.value(lo), 0.0, 0.0)
                } else if p > hi {
                    (t.spline.value(hi), 0.0, 0.0)
                } else {
                    t.spline.eval(p)
                }
            }
        }
    }

    pub fn psi(&self, p: f64) -> f64 {
        match self {
            Self::EvenGaussian { a } => (-a * p * p).exp(),
            Self::SkewedRational { b, a } => {
                let p2 = p * p;
                (1.0 + b * p2 * p / (1.0 + p2 * p2)) * (-a * p2).exp()
            }
            Self::Table(_) => self.eval(p).0,
        }
    }

    pub fn psi_deriv(&self, p: f64) -> f64 {
        self.eval(p).1
    }

    pub fn psi_second_deriv(&self, p: f64) -> f64 {
        self.eval(p).2
    }

    fn check_axioms(&self, range: (f64, f64)) -> Result<()> {
        let (psi0, dpsi0, _) = self.eval(0.0);
        if (psi0 - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("psi(0) = {psi0}, expected 1")));
        }
        // spline tables only approximate a flat top
        let slope_tol = if matches!(self, Self::Table(_)) { 1e-3 } else { 1e-12 };
        if dpsi0.abs() > slope_tol {
            return Err(Error::InvalidParameter(format!("psi'(0) = {dpsi0}, expected 0")));
        }
        let n = 4000;
        for i in 0..=n {
            let p = range.0 + (range.1 - range.0) * i as f64 / n as f64;
            let v = self.psi(p);
            if v < 0.0 {
                return Err(Error::InvalidParameter(format!("psi({p}) = {v} is negative")));
            }
            if p.abs() > 1e-3 && (v - 1.0).abs() < 1e-12 {
                return Err(Error::InvalidParameter(format!("psi({p}) = 1 away from P = 0")));
            }
        }
        // a sign change of psi - 1 between samples of one side signals a crossing
        for side in [-1.0, 1.0] {
            let end = if side > 0.0 { range.1 } else { -range.0 };
            if end <= 0.0 {
                continue;
            }
            let mut last = 0.0f64;
            for i in 1..=n {
                let p = side * end * i as f64 / n as f64;
                let d = self.psi(p) - 1.0;
                if last != 0.0 && d.signum() != last.signum() {
                    return Err(Error::InvalidParameter(format!("psi crosses 1 near P = {p}")));
                }
                last = d;
            }
        }
        Ok(())
    }
}

/// Quadrature orders for the h integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HQuadrature {
    pub outer: usize,
    pub inner: usize,
}

impl Default for HQuadrature {
    fn default() -> Self {
        Self { outer: 24, inner: 24 }
    }
}

/// φ and ψ together with the prepared rules for h and its derivatives.
#[derive(Debug, Clone)]
pub struct Ansatz {
    pub polytrope: PolytropeProfile,
    pub rotation: RotationProfile,
    c_mu: f64,
    // weight t^μ (1−t)^{1/2}
    outer_half: QuadratureRule,
    // weight t^μ (1−t)^{−1/2}
    outer_inv_half: QuadratureRule,
    // positive half of a symmetric rule on [−1, 1]
    sigma: Vec<(f64, f64)>,
    quadrature: HQuadrature,
}

impl Ansatz {
    pub fn new(polytrope: PolytropeProfile, rotation: RotationProfile) -> Result<Self> {
        Self::with_quadrature(polytrope, rotation, HQuadrature::default())
    }

    pub fn with_quadrature(polytrope: PolytropeProfile, rotation: RotationProfile, q: HQuadrature) -> Result<Self> {
        validate_mu(polytrope.mu)?;
        if q.outer == 0 || q.inner < 2 {
            return Err(Error::InvalidParameter("h quadrature orders too small".into()));
        }
        let mu = polytrope.mu;
        let outer_half = gauss_jacobi_two_sided(q.outer, mu, 0.5)?;
        let outer_inv_half = gauss_jacobi_two_sided(q.outer, mu, -0.5)?;
        let inner_n = q.inner + q.inner % 2;
        let gl = gauss_legendre(inner_n);
        let sigma = gl
            .nodes
            .iter()
            .zip(&gl.weights)
            .filter(|(x, _)| **x > 0.0)
            .map(|(&x, &w)| (x, w))
            .collect();
        Ok(Self {
            polytrope,
            rotation,
            c_mu: spherical_density_constant(mu),
            outer_half,
            outer_inv_half,
            sigma,
            quadrature: q,
        })
    }

    pub fn mu(&self) -> f64 {
        self.polytrope.mu
    }

    pub fn quadrature(&self) -> HQuadrature {
        self.quadrature
    }

    pub fn e0(&self) -> f64 {
        self.polytrope.e0
    }

    pub fn c_mu(&self) -> f64 {
        self.c_mu
    }

    /// Same profiles with a different cutoff energy.
    pub fn with_e0(&self, e0: f64) -> Self {
        let mut a = self.clone();
        a.polytrope.e0 = e0;
        a
    }

    pub fn phi(&self, e: f64) -> f64 {
        self.polytrope.phi(e)
    }

    pub fn psi(&self, p: f64) -> f64 {
        self.rotation.psi(p)
    }

    /// f = φ(E) ψ(γP).
    pub fn f(&self, gamma: f64, em: EnergyMomentum) -> f64 {
        let phi = self.phi(em.e);
        if phi == 0.0 {
            0.0
        } else {
            phi * self.psi(gamma * em.p)
        }
    }

    fn check_r(r: f64) -> Result<()> {
        if r >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("cylindrical radius must be nonnegative, got {r}")))
        }
    }

    /// ∫_{−1}^{1} ψ(c σ) dσ.
    fn psi_even_mean(&self, c: f64) -> f64 {
        self.sigma
            .iter()
            .map(|&(s, w)| w * (self.rotation.psi(c * s) + self.rotation.psi(-c * s)))
            .sum()
    }

    /// ∫_{−1}^{1} σ ψ(c σ) dσ.
    fn psi_odd_moment(&self, c: f64) -> f64 {
        self.sigma
            .iter()
            .map(|&(s, w)| w * s * (self.rotation.psi(c * s) - self.rotation.psi(-c * s)))
            .sum()
    }

    /// ∫_{−1}^{1} σ ψ′(c σ) dσ.
    fn dpsi_odd_moment(&self, c: f64) -> f64 {
        self.sigma
            .iter()
            .map(|&(s, w)| w * s * (self.rotation.psi_deriv(c * s) - self.rotation.psi_deriv(-c * s)))
            .sum()
    }

    /// h(γ, r, u) = 2π ∫_u^{E₀} φ(E) ∫_{−w}^{w} ψ(γ r s) ds dE.
    pub fn h(&self, gamma: f64, r: f64, u: f64) -> Result<f64> {
        Self::check_r(r)?;
        Ok(self.h_unchecked(gamma, r, u))
    }

    pub(crate) fn h_unchecked(&self, gamma: f64, r: f64, u: f64) -> f64 {
        let delta = self.e0() - u;
        if delta <= 0.0 {
            return 0.0;
        }
        let mu = self.mu();
        let c = gamma * r;
        if c == 0.0 {
            return self.c_mu * delta.powf(mu + 1.5);
        }
        let sd = (2.0 * delta).sqrt();
        let sum: f64 = self
            .outer_half
            .nodes
            .iter()
            .zip(&self.outer_half.weights)
            .map(|(&t, &wt)| wt * self.psi_even_mean(c * sd * (1.0 - t).sqrt()))
            .sum();
        2.0 * PI * sd * delta.powf(mu + 1.0) * sum
    }

    /// ∂h/∂u, always ≤ 0.
    pub fn h_du(&self, gamma: f64, r: f64, u: f64) -> Result<f64> {
        Self::check_r(r)?;
        Ok(self.h_du_unchecked(gamma, r, u))
    }

    pub(crate) fn h_du_unchecked(&self, gamma: f64, r: f64, u: f64) -> f64 {
        let delta = self.e0() - u;
        if delta <= 0.0 {
            return 0.0;
        }
        let mu = self.mu();
        let c = gamma * r;
        if c == 0.0 {
            return -self.c_mu * (mu + 1.5) * delta.powf(mu + 0.5);
        }
        let sd = (2.0 * delta).sqrt();
        let sum: f64 = self
            .outer_inv_half
            .nodes
            .iter()
            .zip(&self.outer_inv_half.weights)
            .map(|(&t, &wt)| {
                let a = c * sd * (1.0 - t).sqrt();
                wt * (self.rotation.psi(a) + self.rotation.psi(-a))
            })
            .sum();
        -2.0 * PI * delta.powf(mu + 1.0) / sd * sum
    }

    /// ∂h/∂r = 2πγ ∫ φ(E) ∫ s ψ′(γ r s) ds dE.
    pub fn h_dr(&self, gamma: f64, r: f64, u: f64) -> Result<f64> {
        Self::check_r(r)?;
        Ok(self.h_dr_unchecked(gamma, r, u))
    }

    pub(crate) fn h_dr_unchecked(&self, gamma: f64, r: f64, u: f64) -> f64 {
        let delta = self.e0() - u;
        if delta <= 0.0 || gamma == 0.0 {
            return 0.0;
        }
        let mu = self.mu();
        let sd = (2.0 * delta).sqrt();
        let c = gamma * r;
        let sum: f64 = self
            .outer_half
            .nodes
            .iter()
            .zip(&self.outer_half.weights)
            .map(|(&t, &wt)| {
                let w = sd * (1.0 - t).sqrt();
                wt * w * self.dpsi_odd_moment(c * w)
            })
            .sum();
        2.0 * PI * gamma * sd * delta.powf(mu + 1.0) * sum
    }

    /// Magnitude of the mass current along e_t:
    /// 2π ∫ φ(E) ∫ s ψ(γ r s) ds dE.
    pub fn current_magnitude(&self, gamma: f64, r: f64, u: f64) -> Result<f64> {
        Self::check_r(r)?;
        Ok(self.current_unchecked(gamma, r, u))
    }

    pub(crate) fn current_unchecked(&self, gamma: f64, r: f64, u: f64) -> f64 {
        let delta = self.e0() - u;
        let c = gamma * r;
        if delta <= 0.0 || c == 0.0 || self.rotation.is_even() {
            return 0.0;
        }
        let mu = self.mu();
        let sd = (2.0 * delta).sqrt();
        let sum: f64 = self
            .outer_half
            .nodes
            .iter()
            .zip(&self.outer_half.weights)
            .map(|(&t, &wt)| {
                let w = sd * (1.0 - t).sqrt();
                wt * w * self.psi_odd_moment(c * w)
            })
            .sum();
        2.0 * PI * sd * delta.powf(mu + 1.0) * sum
    }
}
