//! The deformation operator T(γ, ζ), its derivative in ζ, the sector
//! operator K at the base state, and Newton continuation in γ.
//!
//! T is sampled at the coefficient knots times the upper half of a Gauss
//! rule in cos θ and projected onto the even Legendre sectors. The discrete
//! equations are T_l(r_m) = 0 for every sector and knot, one per unknown
//! ζ_l(r_m).

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{density_from_state, AxiField, DensitySample, FieldGrid, FieldResolution, PotentialEval, PotentialField, RadialStencil};
use crate::geometry::{CoefficientGrid, DeformationField, Vec3, DEFAULT_L, DEFAULT_NR_C};
use crate::numerics::legendre::{legendre_table, LegendreBasis};
use crate::numerics::quadrature::gauss_legendre;
use crate::numerics::par_map;
use crate::profiles::Ansatz;
use crate::spherical::RadialState;

/// Radius of the extra samples standing in for the ray limit at 0.
const RAY_RADIUS: f64 = 1e-6;
pub const DEFAULT_NEWTON_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 20;

/// Resolution of the discrete operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretization {
    pub l_max: usize,
    pub nr_c: usize,
    pub polar_nodes: usize,
    pub field: FieldResolution,
}

impl Default for Discretization {
    fn default() -> Self {
        Self {
            l_max: DEFAULT_L,
            nr_c: DEFAULT_NR_C,
            polar_nodes: 32,
            field: FieldResolution::default(),
        }
    }
}

/// T (or its derivative along a direction) on the collocation set.
#[derive(Debug, Clone)]
pub struct OperatorOutput {
    /// Samples at (knot m, upper polar node k), index m · n_half + k.
    pub values: Vec<f64>,
    /// T_l(r_m) for every even l ≤ L, indexed [l/2][m].
    pub moments: Vec<Vec<f64>>,
    /// ∇T(x)/|x| at the collocation points followed by the ray samples.
    pub scaled_gradients: Vec<Vec3>,
    /// sup |∇T(x)|/|x| over the collocation points and the ray samples.
    pub y_norm_estimate: f64,
    /// max |T_l(r_m)| / r_m², the quantity Newton drives to zero.
    pub residual: f64,
}

impl OperatorOutput {
    /// The projected output as a field on the coefficient grid.
    pub fn to_field(&self, grid: &Arc<CoefficientGrid>) -> DeformationField {
        DeformationField::from_coeffs(grid.clone(), self.moments.clone()).expect("sized by construction")
    }

    /// Discrete Y-distance sup |∇(self − other)(x)|/|x|.
    pub fn y_distance(&self, other: &OperatorOutput) -> f64 {
        self.scaled_gradients
            .iter()
            .zip(&other.scaled_gradients)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Every output vanishes at the origin.
    pub fn value_at_origin(&self) -> f64 {
        0.0
    }
}

/// Dense ∂_ζT in the knot-value basis: entry [(l, m), (k, i)] is the
/// derivative of T_l(r_m) with respect to ζ_k(r_i).
#[derive(Debug, Clone)]
pub struct JacobianMatrix {
    pub matrix: DMatrix<f64>,
    pub l_max: usize,
    pub nr_c: usize,
    knots: Vec<f64>,
}

impl JacobianMatrix {
    pub fn sectors(&self) -> usize {
        self.l_max / 2 + 1
    }

    pub fn block(&self, row: usize, col: usize) -> DMatrix<f64> {
        let n = self.nr_c;
        self.matrix.view((row * n, col * n), (n, n)).into_owned()
    }

    /// Rows divided by r_m², columns multiplied by r_i.
    pub fn scaled(&self) -> DMatrix<f64> {
        let n = self.nr_c;
        let mut m = self.matrix.clone();
        for (idx, mut row) in m.row_iter_mut().enumerate() {
            let r = self.knots[idx % n];
            row /= r * r;
        }
        for (idx, mut col) in m.column_iter_mut().enumerate() {
            col *= self.knots[idx % n];
        }
        m
    }

    /// Largest off-diagonal block norm over the smallest diagonal one,
    /// both in the scaled frame.
    pub fn off_sector_ratio(&self) -> f64 {
        let s = self.scaled();
        let n = self.nr_c;
        let nl = self.sectors();
        let block = |a: usize, b: usize| s.view((a * n, b * n), (n, n)).norm();
        let mut diag = f64::INFINITY;
        let mut off: f64 = 0.0;
        for a in 0..nl {
            for b in 0..nl {
                if a == b {
                    diag = diag.min(block(a, b));
                } else {
                    off = off.max(block(a, b));
                }
            }
        }
        off / diag
    }

    /// Condition number of each scaled diagonal block.
    pub fn sector_conditions(&self) -> Vec<f64> {
        let s = self.scaled();
        let n = self.nr_c;
        (0..self.sectors())
            .map(|a| {
                let sv = s.view((a * n, a * n), (n, n)).into_owned().singular_values();
                sv.max() / sv.min()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct PolarRow {
    c: f64,
    weight: f64,
}

/// One collocation (or ray) sample and the state-dependent data there.
#[derive(Debug, Clone)]
struct PointState {
    x: Vec3,
    y: Vec3,
    r: f64,
    polar: usize,
    stencil: RadialStencil,
    jac: Matrix3<f64>,
    v: PotentialEval,
}

/// Everything at (γ, ζ) that T, ∂_ζT and the Jacobian share.
struct StateEval {
    potential: PotentialField,
    samples: Vec<DensitySample>,
    points: Vec<PointState>,
    rays: Vec<PointState>,
}

/// T(γ, ·) for a fixed base state and ansatz.
#[derive(Debug, Clone)]
pub struct DeformationOperator {
    base: Arc<RadialState>,
    ansatz: Ansatz,
    coef: Arc<CoefficientGrid>,
    field: Arc<FieldGrid>,
    polar: Vec<PolarRow>,
    // P_l(c_k) up to the potential degree, per upper polar node
    ptab: Vec<Vec<f64>>,
}

impl DeformationOperator {
    pub fn new(base: Arc<RadialState>, ansatz: Ansatz, disc: &Discretization) -> Result<Self> {
        if (ansatz.mu() - base.mu).abs() > 1e-12 || (ansatz.e0() - base.e0).abs() > 1e-12 * base.e0.abs() {
            return Err(Error::InvalidParameter("ansatz and base state disagree on mu or E0".into()));
        }
        if disc.polar_nodes % 2 == 1 || disc.polar_nodes <= disc.l_max {
            return Err(Error::InvalidParameter(format!(
                "need an even number of polar nodes above L = {}, got {}",
                disc.l_max, disc.polar_nodes
            )));
        }
        let coef = CoefficientGrid::new(disc.l_max, disc.nr_c)?;
        let field = FieldGrid::new(&disc.field)?;
        let basis = LegendreBasis::new(disc.l_max, disc.polar_nodes, true)?;
        let polar: Vec<PolarRow> = (0..basis.node_count())
            .filter(|&k| basis.nodes()[k] > 0.0)
            .map(|k| PolarRow {
                c: basis.nodes()[k],
                weight: basis.weights()[k],
            })
            .collect();
        let ptab = polar.iter().map(|p| legendre_table(field.l_pot().max(disc.l_max), p.c).0).collect();
        Ok(Self {
            base,
            ansatz,
            coef,
            field,
            polar,
            ptab,
        })
    }

    pub fn base(&self) -> &Arc<RadialState> {
        &self.base
    }

    pub fn ansatz(&self) -> &Ansatz {
        &self.ansatz
    }

    pub fn coefficient_grid(&self) -> &Arc<CoefficientGrid> {
        &self.coef
    }

    pub fn field_grid(&self) -> &Arc<FieldGrid> {
        &self.field
    }

    pub fn zero_field(&self) -> DeformationField {
        DeformationField::zero(self.coef.clone())
    }

    fn n_half(&self) -> usize {
        self.polar.len()
    }

    fn direction(&self, k: usize) -> Vec3 {
        let c = self.polar[k].c;
        Vec3::new((1.0 - c * c).sqrt(), 0.0, c)
    }

    fn project(&self, values: &[f64]) -> Vec<Vec<f64>> {
        let nh = self.n_half();
        let knots = self.coef.knots();
        (0..self.coef.sectors())
            .map(|li| {
                let l = 2 * li;
                (0..knots.len())
                    .map(|m| {
                        (2 * l + 1) as f64
                            * (0..nh)
                                .map(|k| self.polar[k].weight * self.ptab[k][l] * values[m * nh + k])
                                .sum::<f64>()
                    })
                    .collect()
            })
            .collect()
    }

    fn residual_of(&self, moments: &[Vec<f64>]) -> f64 {
        let knots = self.coef.knots();
        moments
            .iter()
            .flat_map(|row| row.iter().zip(knots).map(|(t, r)| t.abs() / (r * r)))
            .fold(0.0, f64::max)
    }

    fn evaluate_state(&self, gamma: f64, zeta: &DeformationField) -> Result<StateEval> {
        if !Arc::ptr_eq(zeta.grid(), &self.coef) && zeta.grid().knots() != self.coef.knots() {
            return Err(Error::Resolution("deformation field lives on a different coefficient grid".into()));
        }
        let (density, samples) = density_from_state(&self.field, gamma, zeta, &self.base, &self.ansatz)?;
        let potential = PotentialField::solve(&density);
        let nh = self.n_half();
        let knots = self.coef.knots();
        let mut locs: Vec<(f64, usize)> = Vec::with_capacity(knots.len() * nh + nh);
        for &r in knots {
            for k in 0..nh {
                locs.push((r, k));
            }
        }
        for k in 0..nh {
            locs.push((RAY_RADIUS, k));
        }
        let states = par_map(&locs, |&(r, k)| -> Result<PointState> {
            let x = self.direction(k) * r;
            let y = zeta.g_apply(&x)?;
            let jac = zeta.g_jacobian(&x)?;
            let stencil = self.field.stencil(y.norm());
            let v = potential.evaluate_with(&stencil, &y);
            Ok(PointState {
                x,
                y,
                r,
                polar: k,
                stencil,
                jac,
                v,
            })
        });
        let mut points = states.into_iter().collect::<Result<Vec<_>>>()?;
        let rays = points.split_off(knots.len() * nh);
        Ok(StateEval {
            potential,
            samples,
            points,
            rays,
        })
    }

    fn t_gradient(&self, p: &PointState) -> Vec3 {
        let xh = p.x / p.r;
        xh * self.base.u0_prime_at(p.r) - p.jac.transpose() * p.v.grad
    }

    fn finish(&self, values: Vec<f64>, scaled_gradients: Vec<Vec3>) -> OperatorOutput {
        let moments = self.project(&values);
        let residual = self.residual_of(&moments);
        let y_norm_estimate = scaled_gradients.iter().map(|g| g.norm()).fold(0.0, f64::max);
        OperatorOutput {
            values,
            moments,
            scaled_gradients,
            y_norm_estimate,
            residual,
        }
    }

    /// T(γ, ζ)(x) = [U₀(x) − U₀(0)] − [V(g_ζ(x)) − V(0)] with V the
    /// potential of ρ_ζ.
    pub fn apply_t(&self, gamma: f64, zeta: &DeformationField) -> Result<OperatorOutput> {
        let st = self.evaluate_state(gamma, zeta)?;
        Ok(self.t_from_state(&st))
    }

    fn t_from_state(&self, st: &StateEval) -> OperatorOutput {
        let values = st
            .points
            .iter()
            .map(|p| self.base.potential_increment(p.r) - st.potential.increment_with(&p.stencil, &self.ptab[p.polar]))
            .collect();
        let grads = st.points.iter().chain(&st.rays).map(|p| self.t_gradient(p) / p.r).collect();
        self.finish(values, grads)
    }

    /// ∂_ζT(γ, ζ)ξ.
    pub fn apply_dt(&self, gamma: f64, zeta: &DeformationField, xi: &DeformationField) -> Result<OperatorOutput> {
        let st = self.evaluate_state(gamma, zeta)?;
        let nh = self.field.n_half();
        let sigma: Vec<f64> = st
            .samples
            .iter()
            .enumerate()
            .map(|(j, s)| {
                if s.sigma_factor == 0.0 {
                    0.0
                } else {
                    s.sigma_factor * xi.eval_polar(s.preimage, self.field.cos_theta(j % nh)).0
                }
            })
            .collect();
        let w = PotentialField::solve(&AxiField::from_values(self.field.clone(), sigma)?);
        let eval = |p: &PointState| -> (f64, Vec3) {
            let xh = p.x / p.r;
            let c = xh[2];
            let (xv, xr, xc) = xi.eval_polar(p.r, c);
            let grad_xi = xh * xr + (Vec3::z() - xh * c) * (xc / p.r);
            let radial = p.v.grad.dot(&xh);
            let value = w.increment_with(&p.stencil, &self.ptab[p.polar]) - xv * radial;
            let wg = w.evaluate_with(&p.stencil, &p.y).grad;
            let proj = Matrix3::identity() - xh * xh.transpose();
            let d_radial = p.jac.transpose() * (p.v.hessian * xh) + proj * p.v.grad / p.r;
            let grad = p.jac.transpose() * wg - grad_xi * radial - d_radial * xv;
            (value, grad)
        };
        let evals: Vec<(f64, Vec3)> = st.points.iter().chain(&st.rays).map(|p| eval(p)).collect();
        let values = evals[..st.points.len()].iter().map(|e| e.0).collect();
        let grads = evals.iter().zip(st.points.iter().chain(&st.rays)).map(|(e, p)| e.1 / p.r).collect();
        Ok(self.finish(values, grads))
    }

    /// Dense ∂_ζT(γ, ζ) in the knot-value basis.
    pub fn assemble_jacobian(&self, gamma: f64, zeta: &DeformationField) -> Result<JacobianMatrix> {
        let st = self.evaluate_state(gamma, zeta)?;
        Ok(self.jacobian_from_state(&st))
    }

    fn jacobian_from_state(&self, st: &StateEval) -> JacobianMatrix {
        let n = self.coef.nr_c();
        let nl = self.coef.sectors();
        let nh_field = self.field.n_half();
        let nh = self.n_half();
        // cardinal weights at the preimages of the support samples
        let support: Vec<(usize, f64, Vec<f64>)> = st
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.sigma_factor != 0.0)
            .map(|(j, s)| (j, s.sigma_factor, self.coef.weights(s.preimage).0))
            .collect();
        let field_p: Vec<Vec<f64>> = (0..nh_field)
            .map(|k| legendre_table(self.coef.l_max(), self.field.cos_theta(k)).0)
            .collect();
        let radial: Vec<f64> = st.points.iter().map(|p| p.v.grad.dot(&(p.x / p.r))).collect();
        let cols: Vec<usize> = (0..nl * n).collect();
        let columns = par_map(&cols, |&col| {
            let (k, i) = (col / n, col % n);
            let l = 2 * k;
            let mut sigma = vec![0.0; self.field.n_samples()];
            for (j, f, b) in &support {
                sigma[*j] = f * b[i] * field_p[j % nh_field][l];
            }
            let w = PotentialField::solve(&AxiField::from_values(self.field.clone(), sigma).expect("sized"));
            let values: Vec<f64> = st
                .points
                .iter()
                .enumerate()
                .map(|(idx, p)| {
                    let mut v = w.increment_with(&p.stencil, &self.ptab[p.polar]);
                    if idx / nh == i {
                        v -= self.ptab[p.polar][l] * radial[idx];
                    }
                    v
                })
                .collect();
            self.project(&values)
        });
        let mut matrix = DMatrix::zeros(nl * n, nl * n);
        for (col, moments) in columns.into_iter().enumerate() {
            for (li, row) in moments.iter().enumerate() {
                for (m, v) in row.iter().enumerate() {
                    matrix[(li * n + m, col)] = *v;
                }
            }
        }
        JacobianMatrix {
            matrix,
            l_max: self.coef.l_max(),
            nr_c: n,
            knots: self.coef.knots().to_vec(),
        }
    }

    /// Damped Newton iteration on T(γ, ·) = 0.
    pub fn newton_solve(&self, gamma: f64, initial: &DeformationField, opts: &NewtonOptions) -> Result<NewtonReport> {
        if !(opts.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("Newton tolerance must be positive, got {}", opts.tol)));
        }
        initial.check_admissible()?;
        let knots = self.coef.knots().to_vec();
        let n = knots.len();
        let mut zeta = initial.clone();
        let mut st = self.evaluate_state(gamma, &zeta)?;
        let mut out = self.t_from_state(&st);
        let mut history = vec![out.residual];
        let mut iterations = 0;
        while out.residual > opts.tol {
            if iterations >= opts.max_iter {
                return Err(Error::NoConvergence {
                    iterations,
                    residual: out.residual,
                });
            }
            let jac = self.jacobian_from_state(&st);
            let scaled = jac.scaled();
            let rhs = DVector::from_iterator(
                n * self.coef.sectors(),
                out.moments.iter().flat_map(|row| row.iter().zip(&knots).map(|(t, r)| -t / (r * r))),
            );
            let step = scaled
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Numerical("singular Newton matrix".into()))?;
            let delta: Vec<f64> = step.iter().enumerate().map(|(idx, u)| u * knots[idx % n]).collect();
            let delta = DeformationField::from_vector(self.coef.clone(), &delta)?;
            let mut lambda = 1.0;
            let mut last_err: Option<Error> = None;
            loop {
                if lambda < opts.min_damping {
                    return Err(last_err.unwrap_or(Error::NoConvergence {
                        iterations,
                        residual: out.residual,
                    }));
                }
                let cand = zeta.combine(1.0, &delta, lambda);
                match self.evaluate_state(gamma, &cand) {
                    Ok(cs) => {
                        let co = self.t_from_state(&cs);
                        if co.residual < out.residual {
                            zeta = cand;
                            st = cs;
                            out = co;
                            break;
                        }
                        last_err = None;
                    }
                    Err(e @ (Error::Inadmissible { .. } | Error::OutsideDomain(_))) => last_err = Some(e),
                    Err(e) => return Err(e),
                }
                lambda *= 0.5;
            }
            iterations += 1;
            history.push(out.residual);
            log::debug!("gamma {gamma}: iteration {iterations}, residual {:e}, damping {lambda}", out.residual);
        }
        let x_norm = zeta.x_norm_estimate();
        Ok(NewtonReport {
            field: zeta,
            iterations,
            residual: out.residual,
            y_norm: out.y_norm_estimate,
            x_norm,
            history,
        })
    }

    /// Marches γ from 0 to `gamma_max` in `steps` equal steps. Failure of a
    /// step ends the family there; the family itself is still returned.
    pub fn continue_in_gamma(&self, gamma_max: f64, steps: usize, opts: &ContinuationOptions) -> Result<Continuation> {
        if steps == 0 {
            return Err(Error::InvalidParameter("need at least one continuation step".into()));
        }
        if !gamma_max.is_finite() {
            return Err(Error::InvalidParameter("gamma_max must be finite".into()));
        }
        let gammas: Vec<f64> = if gamma_max == 0.0 {
            vec![0.0]
        } else {
            (0..=steps).map(|k| gamma_max * k as f64 / steps as f64).collect()
        };
        let mut entries: Vec<ContinuationEntry> = Vec::new();
        let mut stop_reason = None;
        for &gamma in &gammas {
            let guess = match entries.len() {
                0 => self.zero_field(),
                1 => entries[0].field.clone(),
                k => {
                    let (a, b) = (&entries[k - 2], &entries[k - 1]);
                    let t = (gamma - b.gamma) / (b.gamma - a.gamma);
                    let secant = b.field.combine(1.0 + t, &a.field, -t);
                    if opts.secant && secant.is_admissible() {
                        secant
                    } else {
                        b.field.clone()
                    }
                }
            };
            match self.newton_solve(gamma, &guess, &opts.newton) {
                Ok(rep) => {
                    let sector_conditions = if opts.sector_diagnostics {
                        self.assemble_jacobian(gamma, &rep.field)?.sector_conditions()
                    } else {
                        Vec::new()
                    };
                    log::info!(
                        "gamma {gamma}: {} iterations, residual {:e}, |zeta|_X {:e}",
                        rep.iterations,
                        rep.residual,
                        rep.x_norm
                    );
                    entries.push(ContinuationEntry {
                        gamma,
                        field: rep.field,
                        iterations: rep.iterations,
                        residual: rep.residual,
                        y_norm: rep.y_norm,
                        x_norm: rep.x_norm,
                        history: rep.history,
                        sector_conditions,
                    });
                }
                Err(e) => {
                    if entries.is_empty() {
                        return Err(e);
                    }
                    log::warn!("continuation stopped at gamma {gamma}: {e}");
                    stop_reason = Some(format!("gamma {gamma}: {e}"));
                    break;
                }
            }
        }
        let reached = entries.last().map(|e| e.gamma).unwrap_or(0.0);
        Ok(Continuation {
            gamma_max,
            steps,
            reached_gamma: reached,
            truncated: stop_reason.is_some(),
            stop_reason,
            entries,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Smallest step fraction tried before giving up.
    pub min_damping: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_NEWTON_TOL,
            max_iter: DEFAULT_MAX_ITER,
            min_damping: 1.0 / 64.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub field: DeformationField,
    pub iterations: usize,
    pub residual: f64,
    pub y_norm: f64,
    pub x_norm: f64,
    /// Residual before the first and after every iteration.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationOptions {
    pub newton: NewtonOptions,
    pub secant: bool,
    pub sector_diagnostics: bool,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            newton: NewtonOptions::default(),
            secant: true,
            sector_diagnostics: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContinuationEntry {
    pub gamma: f64,
    pub field: DeformationField,
    pub iterations: usize,
    pub residual: f64,
    pub y_norm: f64,
    pub x_norm: f64,
    pub history: Vec<f64>,
    pub sector_conditions: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Continuation {
    pub gamma_max: f64,
    pub steps: usize,
    pub reached_gamma: f64,
    pub truncated: bool,
    pub stop_reason: Option<String>,
    pub entries: Vec<ContinuationEntry>,
}

/// Serializable summary of a continuation run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub gamma_max: f64,
    pub steps: usize,
    pub reached_gamma: f64,
    pub truncated: bool,
    pub stop_reason: Option<String>,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub gamma: f64,
    pub iterations: usize,
    pub residual: f64,
    pub y_norm: f64,
    pub x_norm: f64,
    pub residual_history: Vec<f64>,
    pub sector_conditions: Vec<f64>,
    pub directory: String,
}

impl Continuation {
    pub fn manifest(&self) -> RunManifest {
        RunManifest {
            gamma_max: self.gamma_max,
            steps: self.steps,
            reached_gamma: self.reached_gamma,
            truncated: self.truncated,
            stop_reason: self.stop_reason.clone(),
            entries: self
                .entries
                .iter()
                .enumerate()
                .map(|(k, e)| ManifestEntry {
                    gamma: e.gamma,
                    iterations: e.iterations,
                    residual: e.residual,
                    y_norm: e.y_norm,
                    x_norm: e.x_norm,
                    residual_history: e.history.clone(),
                    sector_conditions: e.sector_conditions.clone(),
                    directory: step_directory(k),
                })
                .collect(),
        }
    }
}

/// Directory name of continuation step k.
pub fn step_directory(k: usize) -> String {
    format!("step_{k:03}")
}

// ---------------------------------------------------------------------------
// The operator K at the base state

const K_ORDER: usize = 10;

/// Quadrature nodes and weights on [0, min(top, 1)] split at the knots, at
/// 1 and at r.
fn k_rule(knots: &[f64], r: f64, top: f64) -> Vec<(f64, f64)> {
    let top = top.min(1.0);
    let mut cuts: Vec<f64> = std::iter::once(0.0)
        .chain(knots.iter().copied().filter(|&k| k < top))
        .chain([r].into_iter().filter(|&x| x > 0.0 && x < top))
        .chain(std::iter::once(top))
        .collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let gl = gauss_legendre(K_ORDER);
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let m = gl.mapped(w[0], w[1]);
        out.extend(m.nodes.into_iter().zip(m.weights));
    }
    out
}

/// (Kξ)_l(r) for one sector through the general kernel r_<^l / r_>^{l+1}.
pub fn k_sector_value(base: &RadialState, l: usize, r: f64, knots: &[f64], xi: impl Fn(f64) -> f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let total: f64 = k_rule(knots, r, 1.0)
        .into_iter()
        .map(|(s, w)| {
            let (lo, hi) = if s < r { (s, r) } else { (r, s) };
            let mut kern = lo.powi(l as i32) / hi.powi(l as i32 + 1);
            if l == 0 {
                kern -= 1.0 / s;
            }
            w * base.rho0_prime_at(s) * kern * s * s * xi(s)
        })
        .sum();
    -4.0 * PI / (2 * l + 1) as f64 / base.u0_prime_at(r) * total
}

/// (Kξ)_0(r) through the Volterra form −4π/(r U₀′(r)) ∫₀^r ρ₀′ s (s − r) ξ ds.
pub fn k_volterra_value(base: &RadialState, r: f64, knots: &[f64], xi: impl Fn(f64) -> f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let total: f64 = k_rule(knots, r, r)
        .into_iter()
        .map(|(s, w)| w * base.rho0_prime_at(s) * s * (s - r) * xi(s))
        .sum();
    -4.0 * PI / (r * base.u0_prime_at(r)) * total
}

/// Kξ sector by sector, sampled at the knots of ξ's grid.
pub fn apply_k(base: &RadialState, xi: &DeformationField) -> DeformationField {
    let grid = xi.grid();
    let knots = grid.knots();
    let coeffs = (0..grid.sectors())
        .map(|k| {
            knots
                .iter()
                .map(|&r| k_sector_value(base, grid.degree(k), r, knots, |s| xi.sector(k, s).0))
                .collect()
        })
        .collect();
    DeformationField::from_coeffs(grid.clone(), coeffs).expect("sized by construction")
}

/// Matrix of K on sector l in the knot-value basis of `grid`.
pub fn k_sector_matrix(base: &RadialState, grid: &CoefficientGrid, l: usize) -> DMatrix<f64> {
    let knots = grid.knots();
    let n = knots.len();
    let mut m = DMatrix::zeros(n, n);
    for (row, &r) in knots.iter().enumerate() {
        let scale = -4.0 * PI / (2 * l + 1) as f64 / base.u0_prime_at(r);
        for (s, w) in k_rule(knots, r, 1.0) {
            let (lo, hi) = if s < r { (s, r) } else { (r, s) };
            let mut kern = lo.powi(l as i32) / hi.powi(l as i32 + 1);
            if l == 0 {
                kern -= 1.0 / s;
            }
            let f = scale * w * base.rho0_prime_at(s) * kern * s * s;
            if f == 0.0 {
                continue;
            }
            let b = grid.weights(s).0;
            for (col, bv) in b.iter().enumerate() {
                m[(row, col)] += f * bv;
            }
        }
    }
    m
}

/// Norm and invertibility data of K on one sector.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SectorReport {
    pub l: usize,
    /// Induced max-norm of the knot-value matrix of K_l.
    pub norm: f64,
    /// 3/(2l+1).
    pub bound: f64,
    /// Smallest singular value of id − K_l.
    pub min_singular: f64,
}

pub fn sector_report(base: &RadialState, grid: &CoefficientGrid, l: usize) -> SectorReport {
    let k = k_sector_matrix(base, grid, l);
    let norm = k.row_iter().map(|row| row.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let n = k.nrows();
    let ik = DMatrix::identity(n, n) - k;
    SectorReport {
        l,
        norm,
        bound: 3.0 / (2 * l + 1) as f64,
        min_singular: ik.singular_values().min(),
    }
}

pub fn sector_reports(base: &RadialState, grid: &CoefficientGrid) -> Vec<SectorReport> {
    (0..grid.sectors()).map(|k| sector_report(base, grid, grid.degree(k))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::{PolytropeProfile, RotationProfile};
    use crate::spherical::{solve_base_state, DEFAULT_NR, DEFAULT_TOL};
    use rand::Rng;
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

    fn skewed() -> DeformationOperator {
        operator(RotationProfile::skewed_rational(0.5, 0.5).unwrap())
    }

    #[test]
    fn base_state_is_a_discrete_root() {
        let op = skewed();
        let out = op.apply_t(0.0, &op.zero_field()).unwrap();
        assert!(out.y_norm_estimate <= 1e-6, "{}", out.y_norm_estimate);
        assert!(out.residual <= 1e-10, "{}", out.residual);
        assert_eq!(out.value_at_origin(), 0.0);
    }

    #[test]
    fn k_volterra_agrees_with_general_kernel() {
        let b = base();
        let grid = CoefficientGrid::new(8, 64).unwrap();
        let xi = |s: f64| s * (1.0 - 0.3 * s);
        for &r in grid.knots() {
            let a = k_sector_value(&b, 0, r, grid.knots(), xi);
            let v = k_volterra_value(&b, r, grid.knots(), xi);
            assert!((a - v).abs() <= 1e-8 * a.abs().max(1e-8), "r={r}: {a} vs {v}");
        }
    }

    #[test]
    fn sector_norms_respect_bound() {
        let b = base();
        let grid = CoefficientGrid::new(8, 64).unwrap();
        for rep in sector_reports(&b, &grid) {
            if rep.l >= 2 {
                assert!(rep.norm <= rep.bound + 0.02, "{rep:?}");
            }
            assert!(rep.min_singular > 1e-3, "{rep:?}");
        }
    }

    fn random_field(op: &DeformationOperator, rng: &mut impl rand::Rng, scale: f64) -> DeformationField {
        let a: Vec<f64> = (0..op.coefficient_grid().sectors()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..op.coefficient_grid().sectors()).map(|_| rng.gen_range(0.5..2.0)).collect();
        DeformationField::from_fn(op.coefficient_grid().clone(), |l, r| {
            let k = l / 2;
            scale * a[k] * r * r * (-(w[k] * (r - 0.6)).powi(2)).exp() / (1.0 + k as f64)
        })
    }

    fn gradient_norm_of_difference(a: &OperatorOutput, b: &OperatorOutput) -> f64 {
        a.moments
            .iter()
            .zip(&b.moments)
            .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn derivative_matches_central_differences() {
        use rand::SeedableRng;
        let op = skewed();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2 {
            let gamma = rng.gen_range(0.0..1.5);
            let zeta = random_field(&op, &mut rng, 0.05);
            let xi = random_field(&op, &mut rng, 1.0);
            let t = 1e-5;
            let plus = op.apply_t(gamma, &zeta.combine(1.0, &xi, t)).unwrap();
            let minus = op.apply_t(gamma, &zeta.combine(1.0, &xi, -t)).unwrap();
            let d = op.apply_dt(gamma, &zeta, &xi).unwrap();
            let fd_moments: Vec<Vec<f64>> = plus
                .moments
                .iter()
                .zip(&minus.moments)
                .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q) / (2.0 * t)).collect())
                .collect();
            let fd = OperatorOutput {
                values: vec![],
                moments: fd_moments,
                scaled_gradients: plus
                    .scaled_gradients
                    .iter()
                    .zip(&minus.scaled_gradients)
                    .map(|(a, b)| (a - b) / (2.0 * t))
                    .collect(),
                y_norm_estimate: 0.0,
                residual: 0.0,
            };
            let scale = d.moments.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs()));
            let err = gradient_norm_of_difference(&d, &fd) / scale;
            let yerr = d.y_distance(&fd) / d.y_norm_estimate;
            println!("gamma {gamma:.3}: relative moment error {err:e}, relative y error {yerr:e}");
            assert!(err <= 1e-5, "{err}");
            assert!(yerr <= 1e-4, "{yerr}");
        }
    }

    #[test]
    fn derivative_at_base_is_minus_u0_prime_times_id_minus_k() {
        let op = skewed();
        let grid = op.coefficient_grid().clone();
        let xi = DeformationField::from_fn(grid.clone(), |l, r| match l {
            0 => r * (1.0 - 0.2 * r),
            4 => 0.3 * r * r * (-(r - 1.0) * (r - 1.0)).exp(),
            _ => 0.0,
        });
        let d = op.apply_dt(0.0, &op.zero_field(), &xi).unwrap();
        let k = apply_k(op.base(), &xi);
        for rep in sector_reports(op.base(), &grid) {
            println!("{rep:?}");
        }
        let mut worst: f64 = 0.0;
        for sec in 0..grid.sectors() {
            for (m, &r) in grid.knots().iter().enumerate() {
                let expect = -op.base().u0_prime_at(r) * (xi.coeffs()[sec][m] - k.coeffs()[sec][m]);
                worst = worst.max((d.moments[sec][m] - expect).abs() / (r * r));
            }
        }
        println!("L0 vs K path: {worst:e}");
        assert!(worst <= 1e-6, "{worst}");
    }

    #[test]
    fn jacobian_at_base_decouples_sectors() {
        let op = skewed();
        let j = op.assemble_jacobian(0.0, &op.zero_field()).unwrap();
        let ratio = j.off_sector_ratio();
        println!("off-sector ratio {ratio:e}, conditions {:?}", j.sector_conditions());
        assert!(ratio <= 1e-8, "{ratio}");
        // the columns are apply_dt on cardinal directions
        let xi = DeformationField::from_fn(op.coefficient_grid().clone(), |l, r| if l == 2 { r * r * (1.0 - r / 3.0) } else { 0.0 });
        let d = op.apply_dt(0.0, &op.zero_field(), &xi).unwrap();
        let jv = &j.matrix * DVector::from_vec(xi.to_vector());
        let dv: Vec<f64> = d.moments.iter().flatten().copied().collect();
        for (a, b) in jv.iter().zip(&dv) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn newton_at_base_is_immediate() {
        let op = skewed();
        let rep = op.newton_solve(0.0, &op.zero_field(), &NewtonOptions::default()).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(rep.field.is_zero());
    }

    #[test]
    fn newton_returns_to_base_from_perturbation() {
        use rand::SeedableRng;
        let op = skewed();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let start = random_field(&op, &mut rng, 0.05);
        let rep = op.newton_solve(0.0, &start, &NewtonOptions::default()).unwrap();
        println!("iterations {}, |zeta|_X {:e}, history {:?}", rep.iterations, rep.x_norm, rep.history);
        assert!(rep.x_norm <= 1e-8, "{}", rep.x_norm);
    }

    #[test]
    fn newton_converges_quadratically() {
        let op = skewed();
        let rep = op.newton_solve(0.8, &op.zero_field(), &NewtonOptions { tol: 1e-13, ..Default::default() }).unwrap();
        println!("history {:?}", rep.history);
        let h = &rep.history;
        assert!(h.len() >= 3);
        // once the residual is small, each step roughly squares it
        let k = h.iter().position(|&r| r < 1e-3).unwrap();
        if k + 1 < h.len() && h[k + 1] > 1e-12 {
            assert!(h[k + 1] <= 1e3 * h[k] * h[k], "{h:?}");
        }
    }

    #[test]
    fn monopole_dilation_scales_linearly() {
        let op = skewed();
        let grid = op.coefficient_grid().clone();
        let run = |eps: f64| {
            let f = DeformationField::from_fn(grid.clone(), |l, r| if l == 0 { eps * r } else { 0.0 });
            op.apply_t(0.0, &f).unwrap()
        };
        let a = run(1e-3);
        let b = run(5e-4);
        let sup = |o: &OperatorOutput, k: usize| o.moments[k].iter().fold(0.0f64, |x, y| x.max(y.abs()));
        assert!(sup(&a, 0) > 1e3 * sup(&a, 1));
        let ratio = sup(&a, 0) / sup(&b, 0);
        assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn zero_direction_gives_zero() {
        let op = skewed();
        let d = op.apply_dt(0.3, &op.zero_field(), &op.zero_field()).unwrap();
        assert!(d.values.iter().all(|v| *v == 0.0));
        assert_eq!(d.y_norm_estimate, 0.0);
    }
}
