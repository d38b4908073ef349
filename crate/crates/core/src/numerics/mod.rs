pub mod legendre;
pub mod ode;
pub mod quadrature;
pub mod spline;

pub use legendre::{legendre_eval, legendre_project, legendre_series, legendre_table, LegendreBasis};
pub use ode::Dopri;
pub use quadrature::{gauss_jacobi, gauss_jacobi_two_sided, gauss_legendre, gauss_legendre_on, QuadratureRule};
pub use spline::{CubicSpline, QuinticHermite, SplineBasis};

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
