//! Deformation fields ζ and the ray maps g_ζ(x) = x + ζ(x) x/|x|.
//!
//! ζ is stored as even Legendre sectors ζ(x) = Σ_l ζ_l(|x|) P_l(cos θ), each
//! radial profile a natural cubic spline through (0, 0) and the values at the
//! coefficient knots in (0, 3].

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json, Table};
use crate::numerics::legendre::{legendre_table, LegendreBasis};
use crate::numerics::spline::{CubicSpline, SplineBasis};

pub const DOMAIN_RADIUS: f64 = 3.0;
/// ‖ζ‖_X < 1/6 with a 10% margin for the finite sample.
pub const ADMISSIBILITY_GATE: f64 = 0.9 / 6.0;
pub const DEFAULT_L: usize = 8;
pub const DEFAULT_NR_C: usize = 64;

pub type Vec3 = Vector3<f64>;

/// Radial knots and Legendre degrees shared by a family of fields.
#[derive(Debug)]
pub struct CoefficientGrid {
    l_max: usize,
    // knots including the pinned origin
    knots: Vec<f64>,
    basis: SplineBasis,
}

impl CoefficientGrid {
    /// Knots clustered at 0 and 1: two thirds of them in (0, 1], the rest
    /// in (1, 3].
    pub fn new(l_max: usize, nr_c: usize) -> Result<Arc<Self>> {
        if nr_c < 6 {
            return Err(Error::InvalidParameter(format!("need at least 6 coefficient knots, got {nr_c}")));
        }
        let n1 = (2 * nr_c).div_ceil(3);
        let n2 = nr_c - n1;
        let mut knots = vec![0.0];
        for j in 1..=n1 {
            knots.push(0.5 * (1.0 - (PI * j as f64 / n1 as f64).cos()));
        }
        for j in 1..=n2 {
            let s = 1.0 - (0.5 * PI * j as f64 / n2 as f64).cos();
            knots.push(1.0 + (DOMAIN_RADIUS - 1.0) * s);
        }
        knots[n1] = 1.0;
        knots[nr_c] = DOMAIN_RADIUS;
        Self::from_knots(l_max, knots[1..].to_vec())
    }

    /// Grid on explicit knots in (0, 3], which must end at 3.
    pub fn from_knots(l_max: usize, knots: Vec<f64>) -> Result<Arc<Self>> {
        if l_max % 2 == 1 {
            return Err(Error::InvalidParameter(format!("maximum degree must be even, got {l_max}")));
        }
        if knots.is_empty()
            || knots[0] <= 0.0
            || !knots.windows(2).all(|w| w[0] < w[1])
            || (knots[knots.len() - 1] - DOMAIN_RADIUS).abs() > 1e-12
        {
            return Err(Error::InvalidParameter(
                "coefficient knots must increase within (0, 3] and end at 3".into(),
            ));
        }
        let mut all = Vec::with_capacity(knots.len() + 1);
        all.push(0.0);
        all.extend(knots);
        let basis = SplineBasis::new(all.clone());
        Ok(Arc::new(Self {
            l_max,
            knots: all,
            basis,
        }))
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn sectors(&self) -> usize {
        self.l_max / 2 + 1
    }

    /// Legendre degree of sector index k.
    pub fn degree(&self, k: usize) -> usize {
        2 * k
    }

    pub fn nr_c(&self) -> usize {
        self.knots.len() - 1
    }

    /// Knots r_1 < … < r_{nr_c} (the origin excluded).
    pub fn knots(&self) -> &[f64] {
        &self.knots[1..]
    }

    /// Number of unknowns (sectors × knots).
    pub fn dim(&self) -> usize {
        self.sectors() * self.nr_c()
    }

    /// Cardinal spline values and slopes at r for the free knots.
    pub fn weights(&self, r: f64) -> (Vec<f64>, Vec<f64>) {
        let (mut v, mut d) = self.basis.weights(r);
        v.remove(0);
        d.remove(0);
        (v, d)
    }
}

/// An element of the deformation space.
#[derive(Debug, Clone)]
pub struct DeformationField {
    grid: Arc<CoefficientGrid>,
    // coeffs[k][i] = ζ_{2k}(r_{i+1})
    coeffs: Vec<Vec<f64>>,
    splines: Vec<CubicSpline>,
}

impl PartialEq for DeformationField {
    fn eq(&self, other: &Self) -> bool {
        self.grid.knots == other.grid.knots && self.coeffs == other.coeffs
    }
}

impl DeformationField {
    pub fn zero(grid: Arc<CoefficientGrid>) -> Self {
        let coeffs = vec![vec![0.0; grid.nr_c()]; grid.sectors()];
        Self::from_coeffs(grid, coeffs).expect("zero field is well formed")
    }

    pub fn from_coeffs(grid: Arc<CoefficientGrid>, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        if coeffs.len() != grid.sectors() || coeffs.iter().any(|c| c.len() != grid.nr_c()) {
            return Err(Error::InvalidParameter(format!(
                "coefficient matrix must be {} x {}",
                grid.sectors(),
                grid.nr_c()
            )));
        }
        if coeffs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite deformation coefficient".into()));
        }
        let splines = coeffs
            .iter()
            .map(|c| {
                let mut vals = Vec::with_capacity(c.len() + 1);
                vals.push(0.0);
                vals.extend_from_slice(c);
                CubicSpline::new(grid.knots.clone(), vals)
            })
            .collect();
        Ok(Self { grid, coeffs, splines })
    }

    /// Samples every sector of `f(l, r)` at the knots.
    pub fn from_fn(grid: Arc<CoefficientGrid>, f: impl Fn(usize, f64) -> f64) -> Self {
        let coeffs = (0..grid.sectors())
            .map(|k| grid.knots().iter().map(|&r| f(grid.degree(k), r)).collect())
            .collect();
        Self::from_coeffs(grid, coeffs).expect("sampled field is well formed")
    }

    /// Flattened coefficient vector (sector-major).
    pub fn from_vector(grid: Arc<CoefficientGrid>, v: &[f64]) -> Result<Self> {
        if v.len() != grid.dim() {
            return Err(Error::InvalidParameter(format!("expected {} coefficients, got {}", grid.dim(), v.len())));
        }
        let coeffs = v.chunks(grid.nr_c()).map(<[f64]>::to_vec).collect();
        Self::from_coeffs(grid, coeffs)
    }

    pub fn to_vector(&self) -> Vec<f64> {
        self.coeffs.iter().flatten().copied().collect()
    }

    pub fn grid(&self) -> &Arc<CoefficientGrid> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().flatten().all(|&v| v == 0.0)
    }

    /// a·self + b·other.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| a * p + b * q).collect())
            .collect();
        Self::from_coeffs(self.grid.clone(), coeffs).expect("combination of finite fields")
    }

    /// Radial profile ζ_l(r) and its derivative for sector index k.
    pub fn sector(&self, k: usize, r: f64) -> (f64, f64) {
        let (v, d, _) = self.splines[k].eval(r);
        (v, d)
    }

    /// ζ as a function of (r, cos θ), with ∂_r ζ and ∂_c ζ.
    pub fn eval_polar(&self, r: f64, c: f64) -> (f64, f64, f64) {
        let (p, dp, _) = legendre_table(self.grid.l_max, c);
        let mut z = 0.0;
        let mut zr = 0.0;
        let mut zc = 0.0;
        for (k, s) in self.splines.iter().enumerate() {
            let l = self.grid.degree(k);
            let (v, d, _) = s.eval(r);
            z += v * p[l];
            zr += d * p[l];
            zc += v * dp[l];
        }
        (z, zr, zc)
    }

    fn check_point(x: &Vec3) -> Result<()> {
        if x.norm() > DOMAIN_RADIUS * (1.0 + 1e-12) {
            Err(Error::OutsideDomain([x[0], x[1], x[2]]))
        } else {
            Ok(())
        }
    }

    pub fn zeta(&self, x: &Vec3) -> Result<f64> {
        Self::check_point(x)?;
        let r = x.norm();
        if r == 0.0 {
            return Ok(0.0);
        }
        Ok(self.eval_polar(r, x[2] / r).0)
    }

    /// ∇ζ(x). At the origin the limit along the x₃-axis is returned.
    pub fn zeta_grad(&self, x: &Vec3) -> Result<Vec3> {
        Self::check_point(x)?;
        let r = x.norm();
        if r == 0.0 {
            return Ok(self.ray_limit_gradient(&Vec3::z()));
        }
        Ok(self.grad_unchecked(x))
    }

    fn grad_unchecked(&self, x: &Vec3) -> Vec3 {
        let r = x.norm();
        let xh = x / r;
        let c = xh[2];
        let (z, zr, zc) = self.eval_polar(r, c);
        let _ = z;
        xh * zr + (Vec3::z() - xh * c) * (zc / r)
    }

    /// lim_{t→0+} ∇ζ(t x̂) for a unit direction x̂.
    pub fn ray_limit_gradient(&self, dir: &Vec3) -> Vec3 {
        let xh = dir.normalize();
        let c = xh[2];
        let (p, dp, _) = legendre_table(self.grid.l_max, c);
        let mut radial = 0.0;
        let mut polar = 0.0;
        for (k, s) in self.splines.iter().enumerate() {
            let l = self.grid.degree(k);
            let slope = s.eval(0.0).1;
            radial += slope * p[l];
            polar += slope * dp[l];
        }
        xh * radial + (Vec3::z() - xh * c) * polar
    }

    /// sup |∇ζ| over knots and midpoints × Gauss nodes in cos θ (with the
    /// poles) plus the ray limits at the origin.
    pub fn x_norm_estimate(&self) -> f64 {
        self.x_norm_with_density(1)
    }

    /// Same estimate with `refine` sub-intervals per knot interval.
    pub fn x_norm_with_density(&self, refine: usize) -> f64 {
        let refine = refine.max(1);
        let knots = &self.grid.knots;
        let mut radii = Vec::new();
        for w in knots.windows(2) {
            for j in 1..=2 * refine {
                radii.push(w[0] + (w[1] - w[0]) * j as f64 / (2 * refine) as f64);
            }
        }
        let polar = LegendreBasis::new(self.grid.l_max, 32 * refine, true).expect("polar rule");
        let mut cs: Vec<f64> = polar.nodes().to_vec();
        cs.push(1.0);
        cs.push(0.0);
        let mut best: f64 = 0.0;
        for &c in &cs {
            let s = (1.0 - c * c).max(0.0).sqrt();
            let dir = Vec3::new(s, 0.0, c);
            best = best.max(self.ray_limit_gradient(&dir).norm());
            for &r in &radii {
                best = best.max(self.grad_unchecked(&(dir * r)).norm());
            }
        }
        best
    }

    pub fn is_admissible(&self) -> bool {
        self.x_norm_estimate() < ADMISSIBILITY_GATE
    }

    pub fn check_admissible(&self) -> Result<f64> {
        let norm = self.x_norm_estimate();
        if norm < ADMISSIBILITY_GATE {
            Ok(norm)
        } else {
            Err(Error::Inadmissible {
                norm,
                gate: ADMISSIBILITY_GATE,
            })
        }
    }

    /// g_ζ(x) = x + ζ(x) x/|x|.
    pub fn g_apply(&self, x: &Vec3) -> Result<Vec3> {
        let r = x.norm();
        if r == 0.0 {
            return Ok(*x);
        }
        let z = self.zeta(x)?;
        Ok(x * (1.0 + z / r))
    }

    /// Dg_ζ(x) = I + x̂ (∇ζ)ᵀ + (ζ/r)(I − x̂ x̂ᵀ), rows indexing g.
    pub fn g_jacobian(&self, x: &Vec3) -> Result<Matrix3<f64>> {
        Self::check_point(x)?;
        let r = x.norm();
        if r == 0.0 {
            let grad = self.ray_limit_gradient(&Vec3::z());
            return Ok(Matrix3::identity() + Vec3::z() * grad.transpose());
        }
        let xh = x / r;
        let (z, zr, zc) = self.eval_polar(r, xh[2]);
        let grad = xh * zr + (Vec3::z() - xh * xh[2]) * (zc / r);
        let proj = Matrix3::identity() - xh * xh.transpose();
        Ok(Matrix3::identity() + xh * grad.transpose() + proj * (z / r))
    }

    /// Solves s + ζ(s x̂) = |t| along x̂ = t/|t| and returns s x̂.
    pub fn g_invert(&self, target: &Vec3) -> Result<Vec3> {
        let rho = target.norm();
        if rho == 0.0 {
            return Ok(*target);
        }
        let xh = target / rho;
        let s = self.invert_radius(rho, xh[2])?;
        Ok(xh * s)
    }

    /// Preimage radius s with s + ζ(s, c) = ρ on the ray of polar cosine c.
    pub fn invert_radius(&self, rho: f64, c: f64) -> Result<f64> {
        let (p, _, _) = legendre_table(self.grid.l_max, c);
        let ray = |s: f64| -> (f64, f64) {
            let mut v = 0.0;
            let mut d = 0.0;
            for (k, sp) in self.splines.iter().enumerate() {
                let (a, b, _) = sp.eval(s);
                let pl = p[self.grid.degree(k)];
                v += a * pl;
                d += b * pl;
            }
            (s + v - rho, 1.0 + d)
        };
        let top = DOMAIN_RADIUS;
        let (f_top, _) = ray(top);
        if f_top < -1e-12 * rho.max(1.0) {
            let sn = (1.0 - c * c).max(0.0).sqrt();
            return Err(Error::OutsideDomain([rho * sn, 0.0, rho * c]));
        }
        let mut lo = 0.0;
        let mut hi = top;
        let mut s = (rho / 1.0).min(top);
        let tol = 1e-15 * rho.max(1e-3);
        for _ in 0..100 {
            let (f, d) = ray(s);
            if f.abs() <= tol {
                return Ok(s);
            }
            if f > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let mut next = s - f / d;
            if !(next > lo && next < hi) || d <= 0.0 {
                next = 0.5 * (lo + hi);
            }
            if (next - s).abs() <= 1e-16 * s.max(1e-300) {
                return Ok(next);
            }
            s = next;
        }
        let (f, d) = ray(s);
        if d <= 0.0 {
            return Err(Error::Inadmissible {
                norm: 1.0 - d,
                gate: ADMISSIBILITY_GATE,
            });
        }
        if f.abs() <= 1e-13 * rho.max(1.0) {
            Ok(s)
        } else {
            Err(Error::Numerical(format!("ray inversion stalled at residual {f:e}")))
        }
    }

    pub fn header(&self) -> DeformationHeader {
        DeformationHeader {
            l_max: self.grid.l_max,
            nr_c: self.grid.nr_c(),
            interpolation: "natural-cubic-spline".into(),
            knots: self.grid.knots().to_vec(),
        }
    }

    pub fn table(&self) -> Table {
        let mut cols = vec!["r".to_string()];
        for k in 0..self.grid.sectors() {
            cols.push(format!("zeta_{}", self.grid.degree(k)));
        }
        let mut t = Table::new(cols);
        for (i, &r) in self.grid.knots().iter().enumerate() {
            let mut row = vec![r];
            row.extend(self.coeffs.iter().map(|c| c[i]));
            t.push(row);
        }
        t
    }

    /// Writes `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join(format!("{stem}.json")), &self.header())?;
        self.table().write(&dir.join(format!("{stem}.csv")))
    }

    pub fn read(dir: &Path, stem: &str) -> Result<Self> {
        let header: DeformationHeader = read_json(&dir.join(format!("{stem}.json")))?;
        let table = Table::read(&dir.join(format!("{stem}.csv")))?;
        let grid = CoefficientGrid::from_knots(header.l_max, header.knots.clone())?;
        let r = table.column("r")?;
        if r != header.knots {
            return Err(Error::Data("deformation CSV radii differ from the header knots".into()));
        }
        let coeffs = (0..grid.sectors())
            .map(|k| table.column(&format!("zeta_{}", grid.degree(k))))
            .collect::<Result<Vec<_>>>()?;
        Self::from_coeffs(grid, coeffs)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DeformationHeader {
    pub l_max: usize,
    pub nr_c: usize,
    pub interpolation: String,
    pub knots: Vec<f64>,
}

/// Rotation by angle `a` about the x₃-axis.
pub fn axial_rotation(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn equatorial_reflection() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> Arc<CoefficientGrid> {
        CoefficientGrid::new(DEFAULT_L, DEFAULT_NR_C).unwrap()
    }

    fn random_field(rng: &mut ChaCha8Rng, scale: f64) -> DeformationField {
        let g = grid();
        let amps: Vec<f64> = (0..g.sectors()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = DeformationField::from_fn(g, |l, r| {
            let a = amps[l / 2] / (1.0 + l as f64);
            0.5 * scale * a * r * r * (-(r - 0.7) * (r - 0.7)).exp()
        });
        assert!(f.is_admissible(), "norm {}", f.x_norm_estimate());
        f
    }

    fn random_point(rng: &mut ChaCha8Rng, radius: f64) -> Vec3 {
        loop {
            let p = Vec3::new(
                rng.gen_range(-radius..radius),
                rng.gen_range(-radius..radius),
                rng.gen_range(-radius..radius),
            );
            if p.norm() <= radius {
                return p;
            }
        }
    }

    #[test]
    fn grid_layout() {
        let g = grid();
        assert_eq!(g.nr_c(), 64);
        assert_eq!(g.sectors(), 5);
        assert_eq!(g.dim(), 320);
        assert!(g.knots().contains(&1.0));
        assert_eq!(*g.knots().last().unwrap(), 3.0);
        assert!(CoefficientGrid::new(7, 64).is_err());
    }

    #[test]
    fn zero_field_is_identity() {
        let f = DeformationField::zero(grid());
        let x = Vec3::new(0.3, -0.2, 0.9);
        assert_eq!(f.zeta(&x).unwrap(), 0.0);
        assert_eq!(f.g_apply(&x).unwrap(), x);
        assert_eq!(f.g_invert(&x).unwrap(), x);
        assert_eq!(f.g_jacobian(&x).unwrap(), Matrix3::identity());
        assert_eq!(f.x_norm_estimate(), 0.0);
    }

    #[test]
    fn radial_scaling_field() {
        let eps = 0.05;
        let f = DeformationField::from_fn(grid(), |l, r| if l == 0 { eps * r } else { 0.0 });
        let x = Vec3::new(0.4, 0.1, -0.8);
        assert_abs_diff_eq!(f.zeta(&x).unwrap(), eps * x.norm(), epsilon = 1e-14);
        let grad = f.zeta_grad(&x).unwrap();
        assert!((grad - x.normalize() * eps).norm() < 1e-13);
        assert!((f.g_apply(&x).unwrap() - x * (1.0 + eps)).norm() < 1e-14);
        assert!((f.g_jacobian(&x).unwrap() - Matrix3::identity() * (1.0 + eps)).norm() < 1e-13);
        assert!((f.g_invert(&x).unwrap() - x / (1.0 + eps)).norm() < 1e-14);
        assert_abs_diff_eq!(f.x_norm_estimate(), eps, epsilon = 1e-12);
    }

    #[test]
    fn quadrupole_on_axis() {
        let eps = 0.01;
        // knots are dense enough that the spline reproduces r² closely
        let f = DeformationField::from_fn(grid(), |l, r| if l == 2 { eps * r * r } else { 0.0 });
        let s = 0.6;
        let v = f.zeta(&Vec3::new(0.0, 0.0, s)).unwrap();
        assert_abs_diff_eq!(v, eps * s * s, epsilon = 1e-6 * eps);
        let n1 = f.x_norm_estimate();
        let n10 = f.x_norm_with_density(10);
        assert!((n10 - n1).abs() <= 0.01 * n10, "{n1} vs {n10}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_field(&mut rng, 0.1);
        let h = 1e-6;
        for _ in 0..50 {
            let x = random_point(&mut rng, 2.5);
            let g = f.zeta_grad(&x).unwrap();
            for i in 0..3 {
                let mut e = Vec3::zeros();
                e[i] = h;
                let fd = (f.zeta(&(x + e)).unwrap() - f.zeta(&(x - e)).unwrap()) / (2.0 * h);
                assert_abs_diff_eq!(g[i], fd, epsilon = 1e-7);
            }
            let jac = f.g_jacobian(&x).unwrap();
            for i in 0..3 {
                let mut e = Vec3::zeros();
                e[i] = h;
                let col = (f.g_apply(&(x + e)).unwrap() - f.g_apply(&(x - e)).unwrap()) / (2.0 * h);
                assert!((jac.column(i) - col).norm() < 1e-7);
            }
            assert!((jac - Matrix3::identity()).abs().max() < 0.5);
        }
    }

    #[test]
    fn inversion_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = random_field(&mut rng, 0.1);
        for _ in 0..1000 {
            let t = random_point(&mut rng, 2.0);
            let x = f.g_invert(&t).unwrap();
            assert!((f.g_apply(&x).unwrap() - t).norm() <= 1e-12);
            let r = x.norm();
            let gr = t.norm();
            assert!(0.5 * r <= gr && gr <= 1.5 * r);
        }
    }

    #[test]
    fn ray_ordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_field(&mut rng, 0.1);
        for _ in 0..20 {
            let d = random_point(&mut rng, 1.0).normalize();
            let mut prev = 0.0;
            for i in 1..=300 {
                let s = 3.0 * i as f64 / 300.0;
                let g = f.g_apply(&(d * s)).unwrap().norm();
                assert!(g > prev);
                prev = g;
            }
        }
    }

    #[test]
    fn equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = random_field(&mut rng, 0.1);
        for _ in 0..100 {
            let x = random_point(&mut rng, 2.0);
            for a in [axial_rotation(rng.gen_range(0.0..6.3)), equatorial_reflection()] {
                let lhs = f.g_apply(&(a * x)).unwrap();
                let rhs = a * f.g_apply(&x).unwrap();
                assert!((lhs - rhs).norm() <= 1e-12);
                let lhs = f.g_invert(&(a * x)).unwrap();
                let rhs = a * f.g_invert(&x).unwrap();
                assert!((lhs - rhs).norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn inverse_lipschitz_in_zeta() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_field(&mut rng, 0.1);
        let b = random_field(&mut rng, 0.1);
        let dist = a.combine(1.0, &b, -1.0).x_norm_with_density(4);
        for _ in 0..200 {
            let x = random_point(&mut rng, 2.0);
            let d = (a.g_invert(&x).unwrap() - b.g_invert(&x).unwrap()).norm();
            assert!(d <= 4.0 * dist * x.norm() + 1e-14);
        }
    }

    #[test]
    fn outside_domain_rejected() {
        let f = DeformationField::zero(grid());
        assert!(f.zeta(&Vec3::new(0.0, 0.0, 3.5)).is_err());
        assert!(f.g_invert(&Vec3::new(0.0, 3.2, 0.0)).is_err());
    }

    #[test]
    fn inadmissible_field_flagged() {
        let f = DeformationField::from_fn(grid(), |l, r| if l == 0 { 0.3 * r } else { 0.0 });
        assert!(matches!(f.check_admissible(), Err(Error::Inadmissible { .. })));
    }

    #[test]
    fn serialization_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_field(&mut rng, 0.1);
        let dir = tempfile::tempdir().unwrap();
        f.write(dir.path(), "zeta").unwrap();
        let back = DeformationField::read(dir.path(), "zeta").unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn vector_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_field(&mut rng, 0.1);
        let v = f.to_vector();
        assert_eq!(DeformationField::from_vector(f.grid().clone(), &v).unwrap(), f);
    }
}
