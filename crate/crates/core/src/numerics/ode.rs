//! Adaptive Dormand–Prince 5(4) integrator for small fixed-size systems.

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One Dormand–Prince step of size h. Returns the fifth-order solution and
/// the embedded error estimate (max norm, scaled by atol + rtol |y|).
pub fn dopri_step<const N: usize, F>(f: &F, t: f64, y: &[f64; N], h: f64, tol: f64) -> ([f64; N], f64)
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let mut k = [[0.0; N]; 7];
    k[0] = f(t, y);
    for s in 1..7 {
        let mut ys = *y;
        for (j, kj) in k.iter().enumerate().take(s) {
            let a = A[s][j];
            if a != 0.0 {
                for i in 0..N {
                    ys[i] += h * a * kj[i];
                }
            }
        }
        k[s] = f(t + C[s] * h, &ys);
    }
    let mut y5 = *y;
    let mut err = 0.0f64;
    for i in 0..N {
        let mut d5 = 0.0;
        let mut d4 = 0.0;
        for s in 0..7 {
            d5 += B5[s] * k[s][i];
            d4 += B4[s] * k[s][i];
        }
        y5[i] += h * d5;
        let scale = tol * (1.0 + y[i].abs().max(y5[i].abs()));
        err = err.max((h * (d5 - d4)).abs() / scale);
    }
    (y5, err)
}

/// Adaptive integrator state.
#[derive(Debug, Clone, Copy)]
pub struct Dopri {
    pub tol: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for Dopri {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            h_min: 1e-14,
            max_steps: 1_000_000,
        }
    }
}

impl Dopri {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    /// Integrates from t0 to t1 (t1 > t0). `stop` is consulted after each
    /// accepted step and may end the integration early; the last accepted
    /// (t, y) is returned either way, together with the step that produced
    /// it.
    pub fn integrate<const N: usize, F, S>(
        &self,
        f: &F,
        t0: f64,
        y0: [f64; N],
        t1: f64,
        h0: f64,
        mut stop: S,
    ) -> Result<Trajectory<N>>
    where
        F: Fn(f64, &[f64; N]) -> [f64; N],
        S: FnMut(f64, &[f64; N]) -> bool,
    {
        let mut t = t0;
        let mut y = y0;
        let mut h = h0.min(t1 - t0);
        let mut prev = (t0, y0);
        let mut steps = 0usize;
        while t < t1 {
            steps += 1;
            if steps > self.max_steps {
                return Err(Error::Numerical(format!(
                    "integrator exceeded {} steps at t = {t}",
                    self.max_steps
                )));
            }
            let h_try = h.min(t1 - t);
            let (y_new, err) = dopri_step(f, t, &y, h_try, self.tol);
            if !y_new.iter().all(|v| v.is_finite()) || err > 1.0 {
                let fac = if err.is_finite() {
                    (0.9 * err.powf(-0.2)).clamp(0.1, 0.5)
                } else {
                    0.1
                };
                h = h_try * fac;
                if h < self.h_min {
                    return Err(Error::Numerical(format!("step size underflow at t = {t}")));
                }
                continue;
            }
            prev = (t, y);
            t = if h_try == t1 - t { t1 } else { t + h_try };
            y = y_new;
            let fac = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h = h_try * fac;
            if stop(t, &y) {
                break;
            }
        }
        Ok(Trajectory {
            t,
            y,
            t_prev: prev.0,
            y_prev: prev.1,
        })
    }
}

/// Endpoint of an integration and the state one accepted step earlier.
#[derive(Debug, Clone, Copy)]
pub struct Trajectory<const N: usize> {
    pub t: f64,
    pub y: [f64; N],
    pub t_prev: f64,
    pub y_prev: [f64; N],
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exponential_decay() {
        let f = |_t: f64, y: &[f64; 1]| [-y[0]];
        let out = Dopri::new(1e-12)
            .integrate(&f, 0.0, [1.0], 3.0, 0.1, |_, _| false)
            .unwrap();
        assert_eq!(out.t, 3.0);
        assert_abs_diff_eq!(out.y[0], (-3.0f64).exp(), epsilon = 1e-11);
    }

    #[test]
    fn harmonic_oscillator_period() {
        let f = |_t: f64, y: &[f64; 2]| [y[1], -y[0]];
        let out = Dopri::new(1e-12)
            .integrate(&f, 0.0, [1.0, 0.0], 2.0 * std::f64::consts::PI, 0.01, |_, _| false)
            .unwrap();
        assert_abs_diff_eq!(out.y[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(out.y[1], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn stop_condition_brackets_event() {
        let f = |_t: f64, y: &[f64; 2]| [y[1], -y[0]];
        let out = Dopri::new(1e-10)
            .integrate(&f, 0.0, [1.0, 0.0], 10.0, 0.01, |_, y| y[0] < 0.0)
            .unwrap();
        let half_pi = std::f64::consts::FRAC_PI_2;
        assert!(out.t_prev <= half_pi && out.t >= half_pi);
        assert!(out.y_prev[0] >= 0.0 && out.y[0] < 0.0);
    }

    #[test]
    fn single_step_is_fifth_order() {
        let f = |t: f64, _y: &[f64; 1]| [t.powi(4)];
        let (y, _) = dopri_step(&f, 0.0, &[0.0], 1.0, 1e-8);
        assert_abs_diff_eq!(y[0], 0.2, epsilon = 1e-14);
    }
}
