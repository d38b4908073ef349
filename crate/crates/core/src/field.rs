//! Axisymmetric, equatorially symmetric scalar fields on B₂ and their
//! Newtonian potentials.
//!
//! Samples live on composite Gauss–Legendre panels in r times a Gauss rule in
//! cos θ (only the upper half is stored). Potentials use the multipole form
//!
//!   V_l(R) = −4π/(2l+1) [R^{−(l+1)} ∫₀^R s^{l+2} σ_l + R^l ∫_R^2 s^{1−l} σ_l],
//!
//! where the partial integrals inside a panel run over the polynomial that
//! interpolates σ_l at the panel nodes. V_l′ and V_l″ are exact derivatives
//! of that representation.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::geometry::{DeformationField, Vec3};
use crate::numerics::legendre::{legendre_table, LegendreBasis};
use crate::numerics::quadrature::gauss_legendre;
use crate::numerics::par_map;
use crate::profiles::Ansatz;
use crate::spherical::RadialState;

pub const FIELD_RADIUS: f64 = 2.0;
pub const DEFAULT_BREAKPOINTS: [f64; 17] = [
    0.0, 0.15, 0.3, 0.45, 0.6, 0.72, 0.82, 0.9, 0.95, 1.0, 1.05, 1.1, 1.2, 1.35, 1.5, 1.75, 2.0,
];
pub const DEFAULT_PANEL_ORDER: usize = 12;
pub const DEFAULT_POLAR_NODES: usize = 32;
pub const DEFAULT_L_POT: usize = 16;
const SUB_ORDER: usize = 16;
/// Radii below this are evaluated through the limits at the origin.
const ORIGIN_RADIUS: f64 = 1e-12;

/// Tensor grid shared by densities and potentials.
#[derive(Debug)]
pub struct FieldGrid {
    l_pot: usize,
    breakpoints: Vec<f64>,
    order: usize,
    ref_nodes: Vec<f64>,
    bary: Vec<f64>,
    sub_nodes: Vec<f64>,
    sub_weights: Vec<f64>,
    radial: Vec<f64>,
    radial_weights: Vec<f64>,
    polar: LegendreBasis,
    // indices of the polar nodes with c > 0, increasing
    upper: Vec<usize>,
}

/// Resolution of the field grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldResolution {
    pub breakpoints: Vec<f64>,
    pub panel_order: usize,
    pub polar_nodes: usize,
    pub l_pot: usize,
}

impl Default for FieldResolution {
    fn default() -> Self {
        Self {
            breakpoints: DEFAULT_BREAKPOINTS.to_vec(),
            panel_order: DEFAULT_PANEL_ORDER,
            polar_nodes: DEFAULT_POLAR_NODES,
            l_pot: DEFAULT_L_POT,
        }
    }
}

impl FieldResolution {
    /// Every panel split in two and the polar rule doubled.
    pub fn refined(&self) -> Self {
        let mut bp = vec![self.breakpoints[0]];
        for w in self.breakpoints.windows(2) {
            bp.push(0.5 * (w[0] + w[1]));
            bp.push(w[1]);
        }
        Self {
            breakpoints: bp,
            panel_order: self.panel_order,
            polar_nodes: 2 * self.polar_nodes,
            l_pot: self.l_pot,
        }
    }
}

impl FieldGrid {
    pub fn new(res: &FieldResolution) -> Result<Arc<Self>> {
        let bp = &res.breakpoints;
        if bp.len() < 2 || bp[0] != 0.0 || (bp[bp.len() - 1] - FIELD_RADIUS).abs() > 0.0 || !bp.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidParameter("panel breakpoints must increase from 0 to 2".into()));
        }
        if res.polar_nodes % 2 == 1 {
            return Err(Error::InvalidParameter("polar node count must be even".into()));
        }
        if res.panel_order < 2 {
            return Err(Error::InvalidParameter("panel order must be at least 2".into()));
        }
        let polar = LegendreBasis::new(res.l_pot, res.polar_nodes, true)?;
        let gl = gauss_legendre(res.panel_order);
        let sub = gauss_legendre(SUB_ORDER);
        let q = res.panel_order;
        let mut bary: Vec<f64> = (0..q)
            .map(|j| {
                let mut p = 1.0;
                for m in 0..q {
                    if m != j {
                        p *= gl.nodes[j] - gl.nodes[m];
                    }
                }
                1.0 / p
            })
            .collect();
        let scale = bary.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        bary.iter_mut().for_each(|b| *b /= scale);
        let mut radial = Vec::new();
        let mut radial_weights = Vec::new();
        for w in bp.windows(2) {
            let m = gl.mapped(w[0], w[1]);
            radial.extend(m.nodes);
            radial_weights.extend(m.weights);
        }
        let upper = (0..res.polar_nodes).filter(|&k| polar.nodes()[k] > 0.0).collect();
        Ok(Arc::new(Self {
            l_pot: res.l_pot,
            breakpoints: bp.clone(),
            order: q,
            ref_nodes: gl.nodes,
            bary,
            sub_nodes: sub.nodes,
            sub_weights: sub.weights,
            radial,
            radial_weights,
            polar,
            upper,
        }))
    }

    pub fn default_grid() -> Arc<Self> {
        Self::new(&FieldResolution::default()).expect("default field grid")
    }

    pub fn l_pot(&self) -> usize {
        self.l_pot
    }

    pub fn resolution(&self) -> FieldResolution {
        FieldResolution {
            breakpoints: self.breakpoints.clone(),
            panel_order: self.order,
            polar_nodes: self.polar.node_count(),
            l_pot: self.l_pot,
        }
    }

    pub fn sectors(&self) -> usize {
        self.l_pot / 2 + 1
    }

    pub fn panels(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn radial(&self) -> &[f64] {
        &self.radial
    }

    pub fn radial_weights(&self) -> &[f64] {
        &self.radial_weights
    }

    pub fn n_radial(&self) -> usize {
        self.radial.len()
    }

    pub fn polar(&self) -> &LegendreBasis {
        &self.polar
    }

    /// Number of stored polar samples per radius (the upper half).
    pub fn n_half(&self) -> usize {
        self.upper.len()
    }

    /// cos θ of stored polar index k.
    pub fn cos_theta(&self, k: usize) -> f64 {
        self.polar.nodes()[self.upper[k]]
    }

    pub fn n_samples(&self) -> usize {
        self.n_radial() * self.n_half()
    }

    /// Sample point (x₁ ≥ 0, x₂ = 0) of radial index j and polar index k.
    pub fn point(&self, j: usize, k: usize) -> Vec3 {
        let s = self.radial[j];
        let c = self.cos_theta(k);
        Vec3::new(s * (1.0 - c * c).sqrt(), 0.0, s * c)
    }

    fn panel_of(&self, r: f64) -> usize {
        let bp = &self.breakpoints;
        match bp.binary_search_by(|b| b.partial_cmp(&r).unwrap()) {
            Ok(i) => i.min(self.panels() - 1),
            Err(i) => i - 1,
        }
    }

    /// Lagrange weights at reference coordinate t of the panel polynomial.
    fn lagrange(&self, t: f64, out: &mut [f64]) {
        let mut total = 0.0;
        for j in 0..self.order {
            let d = t - self.ref_nodes[j];
            if d == 0.0 {
                out.iter_mut().for_each(|v| *v = 0.0);
                out[j] = 1.0;
                return;
            }
            out[j] = self.bary[j] / d;
            total += out[j];
        }
        out.iter_mut().for_each(|v| *v /= total);
    }

    /// Legendre moments σ_l at the radial nodes from upper-half samples.
    pub fn project(&self, values: &[f64]) -> Vec<Vec<f64>> {
        let nh = self.n_half();
        let nl = self.sectors();
        let mut moments = vec![vec![0.0; self.n_radial()]; nl];
        let w = self.polar.weights();
        for j in 0..self.n_radial() {
            let row = &values[j * nh..(j + 1) * nh];
            for (s, m) in moments.iter_mut().enumerate() {
                let l = 2 * s;
                let mut acc = 0.0;
                for (k, &v) in row.iter().enumerate() {
                    let idx = self.upper[k];
                    acc += w[idx] * self.polar.p(l, idx) * v;
                }
                // both hemispheres contribute equally for even l
                m[j] = (2 * l + 1) as f64 * acc;
            }
        }
        moments
    }

    /// Precomputed weights for evaluating any potential on this grid at
    /// radius R.
    pub fn stencil(&self, r: f64) -> RadialStencil {
        if r < ORIGIN_RADIUS {
            return RadialStencil::Origin;
        }
        if r >= FIELD_RADIUS {
            return RadialStencil::Exterior { r };
        }
        let p = self.panel_of(r);
        let (a, b) = (self.breakpoints[p], self.breakpoints[p + 1]);
        let q = self.order;
        let nl = self.sectors();
        let to_ref = |s: f64| (2.0 * s - a - b) / (b - a);
        let mut interp = vec![0.0; q];
        self.lagrange(to_ref(r), &mut interp);
        let mut below = vec![0.0; nl * q];
        let mut above = vec![0.0; nl * q];
        let mut first = vec![0.0; q];
        let mut lw = vec![0.0; q];
        for (part, lo, hi) in [(0, a, r), (1, r, b)] {
            if hi <= lo {
                continue;
            }
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for (&x, &w) in self.sub_nodes.iter().zip(&self.sub_weights) {
                let s = mid + half * x;
                let ws = w * half;
                self.lagrange(to_ref(s), &mut lw);
                if part == 0 {
                    for j in 0..q {
                        first[j] += ws * s * lw[j];
                    }
                }
                for li in 0..nl {
                    let l = 2 * li as i32;
                    let f = if part == 0 { ws * s.powi(l + 2) } else { ws * s.powi(1 - l) };
                    let dst = if part == 0 { &mut below } else { &mut above };
                    let row = &mut dst[li * q..(li + 1) * q];
                    for j in 0..q {
                        row[j] += f * lw[j];
                    }
                }
            }
        }
        RadialStencil::Inside {
            r,
            panel: p,
            interp,
            below,
            above,
            first,
        }
    }
}

/// Evaluation weights at one radius; see [`FieldGrid::stencil`].
#[derive(Debug, Clone)]
pub enum RadialStencil {
    Origin,
    Inside {
        r: f64,
        panel: usize,
        interp: Vec<f64>,
        // [sector][panel node]
        below: Vec<f64>,
        above: Vec<f64>,
        // ∫_{a_p}^R s L_j(s) ds, for V(x) − V(0) in the monopole sector
        first: Vec<f64>,
    },
    Exterior {
        r: f64,
    },
}

/// Samples on the field grid plus their Legendre moments.
#[derive(Debug, Clone)]
pub struct AxiField {
    grid: Arc<FieldGrid>,
    values: Vec<f64>,
    moments: Vec<Vec<f64>>,
}

impl AxiField {
    pub fn from_values(grid: Arc<FieldGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_samples() {
            return Err(Error::Resolution(format!(
                "expected {} samples, got {}",
                grid.n_samples(),
                values.len()
            )));
        }
        let moments = grid.project(&values);
        Ok(Self { grid, values, moments })
    }

    /// Samples f(radius, cos θ).
    pub fn from_fn(grid: Arc<FieldGrid>, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        let nh = grid.n_half();
        let idx: Vec<usize> = (0..grid.n_samples()).collect();
        let values = par_map(&idx, |&i| f(grid.radial[i / nh], grid.cos_theta(i % nh)));
        Self::from_values(grid, values).expect("sized by construction")
    }

    pub fn grid(&self) -> &Arc<FieldGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, j: usize, k: usize) -> f64 {
        self.values[j * self.grid.n_half() + k]
    }

    pub fn moments(&self) -> &[Vec<f64>] {
        &self.moments
    }

    /// ∫ σ dx over B₂.
    pub fn mass(&self) -> f64 {
        4.0 * PI
            * self
                .grid
                .radial
                .iter()
                .zip(&self.grid.radial_weights)
                .zip(&self.moments[0])
                .map(|((s, w), m)| w * s * s * m)
                .sum::<f64>()
    }

    /// (4π/(2l+1)) ∫ s^{l+2} σ_l ds for every even l.
    pub fn multipoles(&self) -> Vec<f64> {
        (0..self.grid.sectors())
            .map(|li| {
                let l = 2 * li as i32;
                4.0 * PI / (2 * l + 1) as f64
                    * self
                        .grid
                        .radial
                        .iter()
                        .zip(&self.grid.radial_weights)
                        .zip(&self.moments[li])
                        .map(|((s, w), m)| w * s.powi(l + 2) * m)
                        .sum::<f64>()
            })
            .collect()
    }

    /// Largest deviation between the samples and the truncated Legendre
    /// series rebuilt from the moments.
    pub fn reconstruction_error(&self) -> f64 {
        let nh = self.grid.n_half();
        let mut worst: f64 = 0.0;
        for j in 0..self.grid.n_radial() {
            for k in 0..nh {
                let idx = self.grid.upper[k];
                let rebuilt: f64 = (0..self.grid.sectors())
                    .map(|li| self.moments[li][j] * self.grid.polar.p(2 * li, idx))
                    .sum();
                worst = worst.max((rebuilt - self.values[j * nh + k]).abs());
            }
        }
        worst
    }

    /// sup_r |σ_L| / sup_r |σ_0| for the highest retained degree.
    pub fn truncation_tail(&self) -> f64 {
        let sup = |m: &Vec<f64>| m.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let top = sup(&self.moments[self.grid.sectors() - 1]);
        let base = sup(&self.moments[0]);
        if base == 0.0 {
            0.0
        } else {
            top / base
        }
    }
}

/// Per-sample data of a deformed state needed by the Fréchet derivative.
#[derive(Debug, Clone)]
pub struct DensitySample {
    /// |g_ζ⁻¹(y)|
    pub preimage: f64,
    /// ∂_u h · U₀′(s) / (1 + ∂_s ζ) at the sample, so that the derivative
    /// density for a direction ξ is this factor times ξ(g_ζ⁻¹(y)).
    pub sigma_factor: f64,
}

/// ρ_ζ(y) = h(γ, r(y), U₀(g_ζ⁻¹(y))) on the grid, with the preimage data.
pub fn density_from_state(
    grid: &Arc<FieldGrid>,
    gamma: f64,
    field: &DeformationField,
    base: &RadialState,
    ansatz: &Ansatz,
) -> Result<(AxiField, Vec<DensitySample>)> {
    field.check_admissible()?;
    let nh = grid.n_half();
    let idx: Vec<usize> = (0..grid.n_samples()).collect();
    let zero = field.is_zero();
    let results = par_map(&idx, |&i| -> Result<(f64, DensitySample)> {
        let rho_y = grid.radial[i / nh];
        let c = grid.cos_theta(i % nh);
        let s = if zero { rho_y } else { field.invert_radius(rho_y, c)? };
        if s >= 1.0 {
            return Ok((
                0.0,
                DensitySample {
                    preimage: s,
                    sigma_factor: 0.0,
                },
            ));
        }
        let cyl = rho_y * (1.0 - c * c).max(0.0).sqrt();
        let (u, up, _) = base.potential(s);
        let h = ansatz.h_unchecked(gamma, cyl, u);
        let hu = ansatz.h_du_unchecked(gamma, cyl, u);
        let zs = if zero { 0.0 } else { field.eval_polar(s, c).1 };
        Ok((
            h,
            DensitySample {
                preimage: s,
                sigma_factor: hu * up / (1.0 + zs),
            },
        ))
    });
    let mut values = Vec::with_capacity(idx.len());
    let mut samples = Vec::with_capacity(idx.len());
    for r in results {
        let (v, s) = r?;
        values.push(v);
        samples.push(s);
    }
    Ok((AxiField::from_values(grid.clone(), values)?, samples))
}

/// V, ∇V and the Hessian at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialEval {
    pub value: f64,
    pub grad: Vec3,
    pub hessian: Matrix3<f64>,
}

/// Newtonian potential V(x) = −∫ σ(y)/|x − y| dy of an [`AxiField`].
#[derive(Debug, Clone)]
pub struct PotentialField {
    grid: Arc<FieldGrid>,
    moments: Vec<Vec<f64>>,
    // cum_below[l][p] = ∫₀^{a_p} s^{l+2} σ_l, cum_above[l][p] = ∫_{b_p}^2 s^{1−l} σ_l
    cum_below: Vec<Vec<f64>>,
    cum_above: Vec<Vec<f64>>,
    total_below: Vec<f64>,
    // ∫₀^{a_p} s σ_0 and its total
    cum_first: Vec<f64>,
    total_first: f64,
    mass: f64,
}

impl PotentialField {
    pub fn solve(density: &AxiField) -> Self {
        Self::from_moments(density.grid.clone(), density.moments.clone())
    }

    pub fn from_moments(grid: Arc<FieldGrid>, moments: Vec<Vec<f64>>) -> Self {
        let np = grid.panels();
        let q = grid.order;
        let nl = grid.sectors();
        let mut cum_below = vec![vec![0.0; np]; nl];
        let mut cum_above = vec![vec![0.0; np]; nl];
        let mut total_below = vec![0.0; nl];
        for li in 0..nl {
            let l = 2 * li as i32;
            let panel_sum = |p: usize, pow: i32| -> f64 {
                (p * q..(p + 1) * q)
                    .map(|j| grid.radial_weights[j] * grid.radial[j].powi(pow) * moments[li][j])
                    .sum()
            };
            let mut acc = 0.0;
            for p in 0..np {
                cum_below[li][p] = acc;
                acc += panel_sum(p, l + 2);
            }
            total_below[li] = acc;
            let mut acc = 0.0;
            for p in (0..np).rev() {
                cum_above[li][p] = acc;
                acc += panel_sum(p, 1 - l);
            }
        }
        let mut cum_first = vec![0.0; np];
        let mut acc = 0.0;
        for (p, c) in cum_first.iter_mut().enumerate() {
            *c = acc;
            acc += (p * q..(p + 1) * q)
                .map(|j| grid.radial_weights[j] * grid.radial[j] * moments[0][j])
                .sum::<f64>();
        }
        let mass = 4.0 * PI * total_below[0];
        Self {
            grid,
            moments,
            cum_below,
            cum_above,
            total_below,
            cum_first,
            total_first: acc,
            mass,
        }
    }

    pub fn grid(&self) -> &Arc<FieldGrid> {
        &self.grid
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn moments(&self) -> &[Vec<f64>] {
        &self.moments
    }

    /// ∫₀² s^{1−l} σ_l ds.
    fn full_above(&self, li: usize) -> f64 {
        self.cum_above[li][0]
            + (0..self.grid.order)
                .map(|j| {
                    let l = 2 * li as i32;
                    self.grid.radial_weights[j] * self.grid.radial[j].powi(1 - l) * self.moments[li][j]
                })
                .sum::<f64>()
    }

    /// (V_l, V_l′, V_l″) for every retained sector.
    pub fn sectors_at(&self, st: &RadialStencil) -> Vec<[f64; 3]> {
        let nl = self.grid.sectors();
        match st {
            RadialStencil::Origin => {
                let mut out = vec![[0.0; 3]; nl];
                let sigma0 = self.origin_density();
                out[0] = [-4.0 * PI * self.full_above(0), 0.0, 4.0 * PI * sigma0 / 3.0];
                if nl > 1 {
                    out[1][2] = -8.0 * PI / 5.0 * self.full_above(1);
                }
                out
            }
            RadialStencil::Exterior { r } => (0..nl)
                .map(|li| {
                    let l = (2 * li) as f64;
                    let c = -4.0 * PI / (2.0 * l + 1.0);
                    let ib = self.total_below[li];
                    let rp = r.powf(-(l + 1.0));
                    [c * rp * ib, -c * (l + 1.0) * rp / r * ib, c * (l + 1.0) * (l + 2.0) * rp / (r * r) * ib]
                })
                .collect(),
            RadialStencil::Inside {
                r,
                panel,
                interp,
                below,
                above,
                ..
            } => {
                let q = self.grid.order;
                let base = panel * q;
                (0..nl)
                    .map(|li| {
                        let m = &self.moments[li][base..base + q];
                        let ib = self.cum_below[li][*panel]
                            + below[li * q..(li + 1) * q].iter().zip(m).map(|(a, b)| a * b).sum::<f64>();
                        let ia = self.cum_above[li][*panel]
                            + above[li * q..(li + 1) * q].iter().zip(m).map(|(a, b)| a * b).sum::<f64>();
                        let sigma: f64 = interp.iter().zip(m).map(|(a, b)| a * b).sum();
                        let l = (2 * li) as f64;
                        let c = -4.0 * PI / (2.0 * l + 1.0);
                        let rl = r.powi(2 * li as i32);
                        let rm = 1.0 / (rl * r);
                        let v = c * (rm * ib + rl * ia);
                        let dv = c * (-(l + 1.0) * rm / r * ib + l * rl / r * ia);
                        let d2v = c * ((l + 1.0) * (l + 2.0) * rm / (r * r) * ib + l * (l - 1.0) * rl / (r * r) * ia)
                            + 4.0 * PI * sigma;
                        [v, dv, d2v]
                    })
                    .collect()
            }
        }
    }

    fn origin_density(&self) -> f64 {
        // the first panel polynomial evaluated at s = 0
        let q = self.grid.order;
        let mut w = vec![0.0; q];
        let (a, b) = (self.grid.breakpoints[0], self.grid.breakpoints[1]);
        self.grid.lagrange((-a - b) / (b - a), &mut w);
        w.iter().zip(&self.moments[0][..q]).map(|(a, b)| a * b).sum()
    }

    /// V, ∇V and the Hessian at x.
    pub fn evaluate(&self, x: &Vec3) -> PotentialEval {
        let st = self.grid.stencil(x.norm());
        self.evaluate_with(&st, x)
    }

    /// Same as [`evaluate`](Self::evaluate) with a stencil built for |x|.
    pub fn evaluate_with(&self, st: &RadialStencil, x: &Vec3) -> PotentialEval {
        let sec = self.sectors_at(st);
        combine_sectors(&sec, x, self.grid.l_pot)
    }

    pub fn value(&self, x: &Vec3) -> f64 {
        let st = self.grid.stencil(x.norm());
        let r = x.norm();
        let sec = self.sectors_at(&st);
        if r < ORIGIN_RADIUS {
            return sec[0][0];
        }
        let (p, _, _) = legendre_table(self.grid.l_pot, x[2] / r);
        sec.iter().enumerate().map(|(li, s)| s[0] * p[2 * li]).sum()
    }

    /// V values only, from a prepared stencil and polar cosine.
    pub fn value_with(&self, st: &RadialStencil, p: &[f64]) -> f64 {
        let sec = self.sectors_at(st);
        if let RadialStencil::Origin = st {
            return sec[0][0];
        }
        sec.iter().enumerate().map(|(li, s)| s[0] * p[2 * li]).sum()
    }

    /// V(x) − V(0) from a stencil for |x| and the Legendre table at x̂.
    ///
    /// The monopole part is −4π ∫₀^R s σ_0 (s/R − 1) ds, which stays
    /// accurate near the origin.
    pub fn increment_with(&self, st: &RadialStencil, p: &[f64]) -> f64 {
        match st {
            RadialStencil::Origin => 0.0,
            RadialStencil::Exterior { r } => {
                let mono = -4.0 * PI * (self.total_below[0] / r - self.total_first);
                let sec = self.sectors_at(st);
                mono + sec.iter().enumerate().skip(1).map(|(li, s)| s[0] * p[2 * li]).sum::<f64>()
            }
            RadialStencil::Inside {
                r,
                panel,
                below,
                first,
                ..
            } => {
                let q = self.grid.order;
                let m = &self.moments[0][panel * q..(panel + 1) * q];
                let ib = self.cum_below[0][*panel] + below[..q].iter().zip(m).map(|(a, b)| a * b).sum::<f64>();
                let j = self.cum_first[*panel] + first.iter().zip(m).map(|(a, b)| a * b).sum::<f64>();
                let mono = -4.0 * PI * (ib / r - j);
                let sec = self.sectors_at(st);
                mono + sec.iter().enumerate().skip(1).map(|(li, s)| s[0] * p[2 * li]).sum::<f64>()
            }
        }
    }

    pub fn increment(&self, x: &Vec3) -> f64 {
        let r = x.norm();
        let st = self.grid.stencil(r);
        let c = if r > 0.0 { x[2] / r } else { 1.0 };
        let (p, _, _) = legendre_table(self.grid.l_pot, c);
        self.increment_with(&st, &p)
    }

    pub fn grad(&self, x: &Vec3) -> Vec3 {
        self.evaluate(x).grad
    }

    pub fn hessian(&self, x: &Vec3) -> Matrix3<f64> {
        self.evaluate(x).hessian
    }

    /// V at the origin.
    pub fn value_at_origin(&self) -> f64 {
        -4.0 * PI * self.full_above(0)
    }
}

/// Assembles V, ∇V and the Hessian from sector values at x.
pub fn combine_sectors(sec: &[[f64; 3]], x: &Vec3, l_pot: usize) -> PotentialEval {
    let r = x.norm();
    if r < ORIGIN_RADIUS {
        let a = sec[0][2];
        let b = if sec.len() > 1 { 0.5 * sec[1][2] } else { 0.0 };
        let hessian = Matrix3::from_diagonal(&Vec3::new(a - b, a - b, a + 2.0 * b));
        return PotentialEval {
            value: sec[0][0],
            grad: Vec3::zeros(),
            hessian,
        };
    }
    let xh = x / r;
    let c = xh[2];
    let (p, dp, d2p) = legendre_table(l_pot, c);
    let (mut f, mut fr, mut fc, mut frr, mut frc, mut fcc) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (li, s) in sec.iter().enumerate() {
        let l = 2 * li;
        f += s[0] * p[l];
        fr += s[1] * p[l];
        fc += s[0] * dp[l];
        frr += s[2] * p[l];
        frc += s[1] * dp[l];
        fcc += s[0] * d2p[l];
    }
    let gc = (Vec3::z() - xh * c) / r;
    let grad = xh * fr + gc * fc;
    let proj = Matrix3::identity() - xh * xh.transpose();
    let sym = xh * gc.transpose() + gc * xh.transpose();
    let hess_c = -sym / r - proj * (c / (r * r));
    let hessian = xh * xh.transpose() * frr + sym * frc + gc * gc.transpose() * fcc + proj * (fr / r) + hess_c * fc;
    PotentialEval {
        value: f,
        grad,
        hessian,
    }
}
