//! Ordinary least-squares estimator for comparison.

use nalgebra::DMatrix;

use crate::sim::Trajectory;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct LseResult {
    pub a_lse: DMatrix<f64>,
    /// Ratio of extreme singular values of `Σ x_t x_tᵀ`; infinite when
    /// singular.
    pub gram_condition: f64,
    /// Whether the Cholesky solve failed and a pseudo-inverse was used.
    pub regularized: bool,
}

/// `Â = (Σ_{t<T} x_{t+1} x_tᵀ)(Σ_{t<T} x_t x_tᵀ + λI)⁻¹`.
pub fn lse_fit(traj: &Trajectory, periods: usize, ridge: f64) -> Result<LseResult> {
    if periods == 0 || periods > traj.horizon() {
        return Err(Error::HorizonExceeded {
            requested: periods,
            available: traj.horizon(),
        });
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::invalid("ridge must be nonnegative"));
    }
    let n = traj.dim();
    let mut gram = DMatrix::zeros(n, n);
    let mut cross = DMatrix::zeros(n, n);
    for t in 0..periods {
        let x = traj.state(t);
        gram.ger(1.0, x, x, 1.0);
        cross.ger(1.0, traj.state(t + 1), x, 1.0);
    }
    let sv = gram.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let gram_condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };

    for i in 0..n {
        gram[(i, i)] += ridge;
    }
    // Â G = C with G symmetric, so Â = (G⁻¹ Cᵀ)ᵀ.
    let (a_lse, regularized) = match gram.clone().cholesky() {
        Some(chol) => (chol.solve(&cross.transpose()).transpose(), false),
        None => {
            let pinv = gram
                .pseudo_inverse(f64::EPSILON * smax.max(f64::MIN_POSITIVE) * n as f64)
                .map_err(|e| Error::invalid(e.to_string()))?;
            (&cross * pinv, true)
        }
    };
    Ok(LseResult {
        a_lse,
        gram_condition,
        regularized,
    })
}
