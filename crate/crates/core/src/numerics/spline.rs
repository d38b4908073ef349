//! Interpolants: natural cubic splines (linear in the data, used for the
//! deformation unknowns) and quintic Hermite pieces (used for the base
//! state, whose derivatives are known exactly from the ODE).

fn locate(knots: &[f64], x: f64) -> usize {
    let n = knots.len();
    if x <= knots[0] {
        return 0;
    }
    if x >= knots[n - 1] {
        return n - 2;
    }
    match knots.binary_search_by(|k| k.partial_cmp(&x).unwrap()) {
        Ok(i) => i.min(n - 2),
        Err(i) => i - 1,
    }
}

/// Solves the natural-spline system for the knot second derivatives.
fn natural_second_derivatives(knots: &[f64], values: &[f64]) -> Vec<f64> {
    let n = knots.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the interior equations
    let inner = n - 2;
    let mut diag = vec![0.0; inner];
    let mut upper = vec![0.0; inner];
    let mut rhs = vec![0.0; inner];
    for i in 1..n - 1 {
        let h0 = knots[i] - knots[i - 1];
        let h1 = knots[i + 1] - knots[i];
        diag[i - 1] = 2.0 * (h0 + h1);
        upper[i - 1] = h1;
        rhs[i - 1] = 6.0 * ((values[i + 1] - values[i]) / h1 - (values[i] - values[i - 1]) / h0);
    }
    for i in 1..inner {
        let lower = knots[i + 1] - knots[i];
        let w = lower / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    let mut sol = vec![0.0; inner];
    sol[inner - 1] = rhs[inner - 1] / diag[inner - 1];
    for i in (0..inner - 1).rev() {
        sol[i] = (rhs[i] - upper[i] * sol[i + 1]) / diag[i];
    }
    m[1..n - 1].copy_from_slice(&sol);
    m
}

/// Natural cubic spline through (knots, values).
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl CubicSpline {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(knots.len(), values.len());
        assert!(knots.len() >= 2, "spline needs two knots");
        let second = natural_second_derivatives(&knots, &values);
        Self {
            knots,
            values,
            second,
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value, first and second derivative at x. Outside the knot range the
    /// end pieces are extended.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let k = locate(&self.knots, x);
        let h = self.knots[k + 1] - self.knots[k];
        let a = (self.knots[k + 1] - x) / h;
        let b = 1.0 - a;
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.second[k], self.second[k + 1]);
        let v = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d = (y1 - y0) / h - (3.0 * a * a - 1.0) / 6.0 * h * m0 + (3.0 * b * b - 1.0) / 6.0 * h * m1;
        let dd = a * m0 + b * m1;
        (v, d, dd)
    }

    pub fn value(&self, x: f64) -> f64 {
        self.eval(x).0
    }
}

/// Cardinal functions of the natural spline on a fixed knot set: the spline
/// through data y equals Σ_j y_j B_j(x).
#[derive(Debug, Clone)]
pub struct SplineBasis {
    knots: Vec<f64>,
    // second[j][i]: second derivative at knot i of B_j
    second: Vec<Vec<f64>>,
}

impl SplineBasis {
    pub fn new(knots: Vec<f64>) -> Self {
        let n = knots.len();
        let second = (0..n)
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                natural_second_derivatives(&knots, &e)
            })
            .collect();
        Self { knots, second }
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// B_j(x) and B_j'(x) for every knot j.
    pub fn weights(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.knots.len();
        let k = locate(&self.knots, x);
        let h = self.knots[k + 1] - self.knots[k];
        let a = (self.knots[k + 1] - x) / h;
        let b = 1.0 - a;
        let ca = (a * a * a - a) * h * h / 6.0;
        let cb = (b * b * b - b) * h * h / 6.0;
        let da = -(3.0 * a * a - 1.0) / 6.0 * h;
        let db = (3.0 * b * b - 1.0) / 6.0 * h;
        let mut v = vec![0.0; n];
        let mut d = vec![0.0; n];
        for j in 0..n {
            let s = &self.second[j];
            v[j] = ca * s[k] + cb * s[k + 1];
            d[j] = da * s[k] + db * s[k + 1];
        }
        v[k] += a;
        v[k + 1] += b;
        d[k] -= 1.0 / h;
        d[k + 1] += 1.0 / h;
        (v, d)
    }
}

/// Piecewise quintic Hermite interpolant from values and first two
/// derivatives at the knots. Globally C².
#[derive(Debug, Clone, PartialEq)]
pub struct QuinticHermite {
    knots: Vec<f64>,
    f: Vec<f64>,
    df: Vec<f64>,
    d2f: Vec<f64>,
}

impl QuinticHermite {
    pub fn new(knots: Vec<f64>, f: Vec<f64>, df: Vec<f64>, d2f: Vec<f64>) -> Self {
        assert!(knots.len() >= 2);
        assert!(knots.len() == f.len() && f.len() == df.len() && df.len() == d2f.len());
        Self { knots, f, df, d2f }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Value, first and second derivative at x (x clamped into the knot
    /// range).
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let k = locate(&self.knots, x);
        let h = self.knots[k + 1] - self.knots[k];
        let t = ((x - self.knots[k]) / h).clamp(0.0, 1.0);
        let (t2, t3) = (t * t, t * t * t);
        let (t4, t5) = (t3 * t, t3 * t2);
        let basis = [
            1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5,
            t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5,
            0.5 * t2 - 1.5 * t3 + 1.5 * t4 - 0.5 * t5,
            10.0 * t3 - 15.0 * t4 + 6.0 * t5,
            -4.0 * t3 + 7.0 * t4 - 3.0 * t5,
            0.5 * t3 - t4 + 0.5 * t5,
        ];
        let d1 = [
            -30.0 * t2 + 60.0 * t3 - 30.0 * t4,
            1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4,
            t - 4.5 * t2 + 6.0 * t3 - 2.5 * t4,
            30.0 * t2 - 60.0 * t3 + 30.0 * t4,
            -12.0 * t2 + 28.0 * t3 - 15.0 * t4,
            1.5 * t2 - 4.0 * t3 + 2.5 * t4,
        ];
        let d2 = [
            -60.0 * t + 180.0 * t2 - 120.0 * t3,
            -36.0 * t + 96.0 * t2 - 60.0 * t3,
            1.0 - 9.0 * t + 18.0 * t2 - 10.0 * t3,
            60.0 * t - 180.0 * t2 + 120.0 * t3,
            -24.0 * t + 84.0 * t2 - 60.0 * t3,
            3.0 * t - 12.0 * t2 + 10.0 * t3,
        ];
        let c = [
            self.f[k],
            h * self.df[k],
            h * h * self.d2f[k],
            self.f[k + 1],
            h * self.df[k + 1],
            h * h * self.d2f[k + 1],
        ];
        let v: f64 = c.iter().zip(&basis).map(|(a, b)| a * b).sum();
        let d: f64 = c.iter().zip(&d1).map(|(a, b)| a * b).sum::<f64>() / h;
        let dd: f64 = c.iter().zip(&d2).map(|(a, b)| a * b).sum::<f64>() / (h * h);
        (v, d, dd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn spline_reproduces_lines_and_knots() {
        let knots: Vec<f64> = (0..9).map(|i| (i as f64 * 0.3).powf(1.3)).collect();
        let vals: Vec<f64> = knots.iter().map(|x| 2.0 * x - 1.0).collect();
        let s = CubicSpline::new(knots.clone(), vals.clone());
        for x in [0.0, 0.1, 0.77, 1.9, knots[8]] {
            let (v, d, dd) = s.eval(x);
            assert_abs_diff_eq!(v, 2.0 * x - 1.0, epsilon = 1e-13);
            assert_abs_diff_eq!(d, 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(dd, 0.0, epsilon = 1e-11);
        }
    }

    #[test]
    fn cardinal_weights_match_spline() {
        let knots: Vec<f64> = (0..12).map(|i| (i as f64 / 11.0).powi(2) * 3.0).collect();
        let vals: Vec<f64> = knots.iter().map(|x| (1.3 * x).sin()).collect();
        let s = CubicSpline::new(knots.clone(), vals.clone());
        let basis = SplineBasis::new(knots);
        for x in [0.0, 0.05, 0.4, 1.7, 2.99, 3.0] {
            let (w, dw) = basis.weights(x);
            let v: f64 = w.iter().zip(&vals).map(|(a, b)| a * b).sum();
            let d: f64 = dw.iter().zip(&vals).map(|(a, b)| a * b).sum();
            let (sv, sd, _) = s.eval(x);
            assert_abs_diff_eq!(v, sv, epsilon = 1e-13);
            assert_abs_diff_eq!(d, sd, epsilon = 1e-12);
        }
    }

    #[test]
    fn spline_derivative_matches_finite_difference() {
        let knots: Vec<f64> = (0..20).map(|i| i as f64 * 0.15).collect();
        let vals: Vec<f64> = knots.iter().map(|x| x * (-x).exp()).collect();
        let s = CubicSpline::new(knots, vals);
        let h = 1e-6;
        for x in [0.2, 1.11, 2.5] {
            let fd = (s.value(x + h) - s.value(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(s.eval(x).1, fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn quintic_hermite_is_exact_for_quintics() {
        let p = |x: f64| 1.0 - 2.0 * x + 0.5 * x.powi(3) - 0.25 * x.powi(5);
        let dp = |x: f64| -2.0 + 1.5 * x * x - 1.25 * x.powi(4);
        let d2p = |x: f64| 3.0 * x - 5.0 * x.powi(3);
        let knots = vec![0.0, 0.4, 1.1, 2.0];
        let h = QuinticHermite::new(
            knots.clone(),
            knots.iter().map(|&x| p(x)).collect(),
            knots.iter().map(|&x| dp(x)).collect(),
            knots.iter().map(|&x| d2p(x)).collect(),
        );
        for x in [0.0, 0.13, 0.4, 0.9, 1.5, 2.0] {
            let (v, d, dd) = h.eval(x);
            assert_abs_diff_eq!(v, p(x), epsilon = 1e-13);
            assert_abs_diff_eq!(d, dp(x), epsilon = 1e-12);
            assert_abs_diff_eq!(dd, d2p(x), epsilon = 1e-11);
        }
    }
}
