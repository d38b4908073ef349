//! Fixed-order Gauss rules.
//!
//! Nodes are found by Newton iteration on the three-term recurrences with
//! the usual asymptotic starting values, so the rules are reproducible
//! without an eigenvalue solver.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const NEWTON_MAX_ITER: usize = 100;

/// Nodes and positive weights of an interpolatory rule.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Affine image of a rule on [-1, 1] onto [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> QuadratureRule {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        QuadratureRule {
            nodes: self.nodes.iter().map(|&x| mid + half * x).collect(),
            weights: self.weights.iter().map(|&w| half * w).collect(),
        }
    }
}

/// Legendre polynomial P_n and its derivative at x.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// n-point Gauss–Legendre rule on [-1, 1], nodes increasing.
pub fn gauss_legendre(n: usize) -> QuadratureRule {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        // Tricomi initial guess
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..NEWTON_MAX_ITER {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() <= 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    QuadratureRule { nodes, weights }
}

/// Gauss–Legendre rule mapped onto [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> QuadratureRule {
    gauss_legendre(n).mapped(a, b)
}

/// Evaluates P_n^{(alpha,beta)}(z) and P_{n-1}^{(alpha,beta)}(z).
fn jacobi_pair(n: usize, alpha: f64, beta: f64, z: f64) -> (f64, f64, f64) {
    let ab = alpha + beta;
    let mut temp = 2.0 + ab;
    let mut p1 = (alpha - beta + temp * z) / 2.0;
    let mut p2 = 1.0;
    for j in 2..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        temp = 2.0 * jf + ab;
        let a = 2.0 * jf * (jf + ab) * (temp - 2.0);
        let b = (temp - 1.0) * (alpha * alpha - beta * beta + temp * (temp - 2.0) * z);
        let c = 2.0 * (jf - 1.0 + alpha) * (jf - 1.0 + beta) * temp;
        p1 = (b * p2 - c * p3) / a;
    }
    if n == 1 {
        temp = 2.0 + ab;
    }
    (p1, p2, temp)
}

/// Gauss–Jacobi rule on [-1, 1] for the weight (1-x)^alpha (1+x)^beta.
/// Nodes are returned in increasing order.
fn gauss_jacobi_symmetric(n: usize, alpha: f64, beta: f64) -> Result<QuadratureRule> {
    if alpha <= -1.0 || beta <= -1.0 {
        return Err(Error::InvalidParameter(format!(
            "Jacobi exponents must exceed -1 (got alpha={alpha}, beta={beta})"
        )));
    }
    assert!(n >= 1, "Gauss-Jacobi rule needs at least one node");
    let nf = n as f64;
    let ab = alpha + beta;
    // x[0] is the largest node, following the classical ordering of the guesses
    let mut x = vec![0.0f64; n];
    let mut w = vec![0.0f64; n];
    let mut z = 0.0f64;
    for i in 0..n {
        let idx = i + 1;
        if idx == 1 {
            let an = alpha / nf;
            let bn = beta / nf;
            let r1 = (1.0 + alpha) * (2.78 / (4.0 + nf * nf) + 0.768 * an / nf);
            let r2 = 1.0 + 1.48 * an + 0.96 * bn + 0.452 * an * an + 0.83 * an * bn;
            z = 1.0 - r1 / r2;
        } else if idx == 2 {
            let r1 = (4.1 + alpha) / ((1.0 + alpha) * (1.0 + 0.156 * alpha));
            let r2 = 1.0 + 0.06 * (nf - 8.0) * (1.0 + 0.12 * alpha) / nf;
            let r3 = 1.0 + 0.012 * beta * (1.0 + 0.25 * alpha.abs()) / nf;
            z -= (1.0 - z) * r1 * r2 * r3;
        } else if idx == 3 {
            let r1 = (1.67 + 0.28 * alpha) / (1.0 + 0.37 * alpha);
            let r2 = 1.0 + 0.22 * (nf - 8.0) / nf;
            let r3 = 1.0 + 8.0 * beta / ((6.28 + beta) * nf * nf);
            z -= (x[0] - z) * r1 * r2 * r3;
        } else if idx == n - 1 {
            let r1 = (1.0 + 0.235 * beta) / (0.766 + 0.119 * beta);
            let r2 = 1.0 / (1.0 + 0.639 * (nf - 4.0) / (1.0 + 0.71 * (nf - 4.0)));
            let r3 = 1.0 / (1.0 + 20.0 * alpha / ((7.5 + alpha) * nf * nf));
            z += (z - x[n - 4]) * r1 * r2 * r3;
        } else if idx == n {
            let r1 = (1.0 + 0.37 * beta) / (1.67 + 0.28 * beta);
            let r2 = 1.0 / (1.0 + 0.22 * (nf - 8.0) / nf);
            let r3 = 1.0 / (1.0 + 8.0 * alpha / ((6.28 + alpha) * nf * nf));
            z += (z - x[n - 3]) * r1 * r2 * r3;
        } else {
            z = 3.0 * x[i - 1] - 3.0 * x[i - 2] + x[i - 3];
        }
        let mut pp = 1.0;
        let mut p2 = 1.0;
        let mut temp = 2.0 + ab;
        for _ in 0..NEWTON_MAX_ITER {
            let (p1, q2, t) = jacobi_pair(n, alpha, beta, z);
            p2 = q2;
            temp = t;
            pp = (nf * (alpha - beta - temp * z) * p1 + 2.0 * (nf + alpha) * (nf + beta) * p2)
                / (temp * (1.0 - z * z));
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                let (p1b, q2b, tb) = jacobi_pair(n, alpha, beta, z);
                p2 = q2b;
                temp = tb;
                pp = (nf * (alpha - beta - temp * z) * p1b
                    + 2.0 * (nf + alpha) * (nf + beta) * p2)
                    / (temp * (1.0 - z * z));
                break;
            }
        }
        x[i] = z;
        let log_c = ln_gamma(alpha + nf) + ln_gamma(beta + nf)
            - ln_gamma(nf + 1.0)
            - ln_gamma(nf + ab + 1.0);
        w[i] = log_c.exp() * temp * 2f64.powf(ab) / (pp * p2);
    }
    x.reverse();
    w.reverse();
    let ok = x.windows(2).all(|p| p[0] < p[1])
        && w.iter().all(|&v| v > 0.0 && v.is_finite())
        && x.iter().all(|v| v.abs() < 1.0);
    if !ok {
        return Err(Error::Numerical(format!(
            "Gauss-Jacobi node search failed for n={n}, alpha={alpha}, beta={beta}"
        )));
    }
    Ok(QuadratureRule { nodes: x, weights: w })
}

/// n-point rule on [0, 1] for the weight t^alpha.
pub fn gauss_jacobi(n: usize, alpha: f64) -> Result<QuadratureRule> {
    gauss_jacobi_two_sided(n, alpha, 0.0)
}

/// n-point rule on [0, 1] for the weight t^alpha (1-t)^beta.
pub fn gauss_jacobi_two_sided(n: usize, alpha: f64, beta: f64) -> Result<QuadratureRule> {
    if alpha <= -1.0 || beta <= -1.0 {
        return Err(Error::InvalidParameter(format!(
            "weight exponents must exceed -1 (got {alpha}, {beta})"
        )));
    }
    // t = (1+x)/2 turns t^a (1-t)^b into 2^{-a-b} (1+x)^a (1-x)^b
    let rule = gauss_jacobi_symmetric(n, beta, alpha)?;
    let scale = 0.5f64.powf(alpha + beta + 1.0);
    Ok(QuadratureRule {
        nodes: rule.nodes.iter().map(|&x| 0.5 * (1.0 + x)).collect(),
        weights: rule.weights.iter().map(|&w| w * scale).collect(),
    })
}
