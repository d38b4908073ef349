//! Legendre polynomials and projections in cos θ.
//!
//! With axial symmetry only the m = 0 harmonics survive, so the angular
//! structure of every field reduces to a Legendre series in cos θ.

use super::quadrature::{gauss_legendre, QuadratureRule};
use crate::error::{Error, Result};

/// P_l(x) by the three-term recurrence.
pub fn legendre_eval(l: usize, x: f64) -> f64 {
    if l == 0 {
        return 1.0;
    }
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=l {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Values, first and second derivatives of P_0..=P_max at x.
///
/// Derivatives use P'_{l+1} = P'_{l-1} + (2l+1) P_l, which stays finite at
/// x = ±1.
pub fn legendre_table(max_degree: usize, x: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = max_degree + 1;
    let mut p = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let mut d2p = vec![0.0; n];
    p[0] = 1.0;
    if n > 1 {
        p[1] = x;
        dp[1] = 1.0;
    }
    for l in 1..max_degree {
        let lf = l as f64;
        p[l + 1] = ((2.0 * lf + 1.0) * x * p[l] - lf * p[l - 1]) / (lf + 1.0);
        dp[l + 1] = dp[l - 1] + (2.0 * lf + 1.0) * p[l];
        d2p[l + 1] = d2p[l - 1] + (2.0 * lf + 1.0) * dp[l];
    }
    (p, dp, d2p)
}

/// Gauss–Legendre sampling in cos θ together with the Legendre table at the
/// nodes.
#[derive(Debug, Clone)]
pub struct LegendreBasis {
    max_degree: usize,
    even_only: bool,
    rule: QuadratureRule,
    // table[l][k] = P_l(node_k)
    table: Vec<Vec<f64>>,
}

impl LegendreBasis {
    pub fn new(max_degree: usize, node_count: usize, even_only: bool) -> Result<Self> {
        if node_count < max_degree + 1 {
            return Err(Error::Resolution(format!(
                "{node_count} polar nodes cannot resolve degree {max_degree}"
            )));
        }
        if even_only && max_degree % 2 == 1 {
            return Err(Error::InvalidParameter(format!(
                "even-only basis needs an even maximum degree, got {max_degree}"
            )));
        }
        let rule = gauss_legendre(node_count);
        let table = (0..=max_degree)
            .map(|l| rule.nodes.iter().map(|&x| legendre_eval(l, x)).collect())
            .collect();
        Ok(Self {
            max_degree,
            even_only,
            rule,
            table,
        })
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn even_only(&self) -> bool {
        self.even_only
    }

    pub fn nodes(&self) -> &[f64] {
        &self.rule.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.rule.weights
    }

    pub fn node_count(&self) -> usize {
        self.rule.nodes.len()
    }

    /// Degrees carried by the basis.
    pub fn degrees(&self) -> impl Iterator<Item = usize> + '_ {
        let step = if self.even_only { 2 } else { 1 };
        (0..=self.max_degree).step_by(step)
    }

    pub fn p(&self, l: usize, k: usize) -> f64 {
        self.table[l][k]
    }

    /// Coefficients c_l with Σ c_l P_l matching the samples in the quadrature
    /// inner product. Odd coefficients are zero for an even-only basis.
    pub fn project(&self, samples: &[f64]) -> Result<Vec<f64>> {
        if samples.len() != self.node_count() {
            return Err(Error::Resolution(format!(
                "expected {} samples, got {}",
                self.node_count(),
                samples.len()
            )));
        }
        let mut coeffs = vec![0.0; self.max_degree + 1];
        for l in self.degrees() {
            let norm = 0.5 * (2 * l + 1) as f64;
            let s: f64 = samples
                .iter()
                .zip(&self.rule.weights)
                .zip(&self.table[l])
                .map(|((&f, &w), &p)| f * w * p)
                .sum();
            coeffs[l] = norm * s;
        }
        Ok(coeffs)
    }

    /// Values of Σ c_l P_l at the nodes.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        (0..self.node_count())
            .map(|k| {
                coeffs
                    .iter()
                    .enumerate()
                    .take(self.max_degree + 1)
                    .map(|(l, &c)| c * self.table[l][k])
                    .sum()
            })
            .collect()
    }
}

/// Projection with an explicit sample list, for callers that do not hold a
/// basis.
pub fn legendre_project(samples: &[f64], max_degree: usize, even_only: bool) -> Result<Vec<f64>> {
    if samples.len() < max_degree + 1 {
        return Err(Error::Resolution(format!(
            "{} samples cannot resolve degree {max_degree}",
            samples.len()
        )));
    }
    LegendreBasis::new(max_degree, samples.len(), even_only)?.project(samples)
}

/// Σ c_l P_l(x).
pub fn legendre_series(coeffs: &[f64], x: f64) -> f64 {
    if coeffs.is_empty() {
        return 0.0;
    }
    let (p, _, _) = legendre_table(coeffs.len() - 1, x);
    coeffs.iter().zip(&p).map(|(c, p)| c * p).sum()
}
