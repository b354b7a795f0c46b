//! Step-size rules for the update `Â ← Â − β G`.

use nalgebra::DMatrix;

use crate::linalg::frobenius_inner;
use crate::{Error, Result};

/// Armijo backtracking parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BacktrackingParams {
    /// First trial step. `None` uses `1/‖G‖_F`, a unit-length move.
    pub beta_init: Option<f64>,
    pub shrink_alpha: f64,
    pub armijo_c: f64,
    pub max_halvings: u32,
}

impl Default for BacktrackingParams {
    fn default() -> Self {
        Self {
            beta_init: None,
            shrink_alpha: 0.5,
            armijo_c: 1e-4,
            max_halvings: 30,
        }
    }
}

impl BacktrackingParams {
    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.beta_init {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::invalid("beta_init must be positive"));
            }
        }
        if !(self.shrink_alpha > 0.0 && self.shrink_alpha < 1.0) {
            return Err(Error::invalid("shrink_alpha must lie in (0, 1)"));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::invalid("armijo_c must lie in (0, 1)"));
        }
        if self.max_halvings == 0 {
            return Err(Error::invalid("max_halvings must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSizePolicy {
    /// Minimizes the next distance to `Ā`; needs `Ā`.
    Best,
    /// `(f_T(Â) − f_T(Ā))/‖G‖²`; needs `f_T(Ā)` or an estimate of it.
    Polyak,
    Constant {
        beta: f64,
    },
    /// `β0 / T`.
    Diminishing {
        beta0: f64,
    },
    Backtracking(BacktrackingParams),
}

impl StepSizePolicy {
    pub fn name(&self) -> &'static str {
        match self {
            StepSizePolicy::Best => "best",
            StepSizePolicy::Polyak => "polyak",
            StepSizePolicy::Constant { .. } => "constant",
            StepSizePolicy::Diminishing { .. } => "diminishing",
            StepSizePolicy::Backtracking(_) => "backtracking",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSizePolicy::Constant { beta } if !(beta >= 0.0 && beta.is_finite()) => {
                Err(Error::invalid("constant beta must be nonnegative"))
            }
            StepSizePolicy::Diminishing { beta0 } if !(beta0 >= 0.0 && beta0.is_finite()) => {
                Err(Error::invalid("diminishing beta0 must be nonnegative"))
            }
            StepSizePolicy::Backtracking(params) => params.validate(),
            _ => Ok(()),
        }
    }
}

/// Scales that instantiate the constant and diminishing rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryScales {
    /// Distance from the iterate at the end of burn-in to `Ā` (or a bound).
    pub d: f64,
    pub rho: f64,
    pub sigma: f64,
    pub t_burn: u64,
    pub t_bar: u64,
    /// Multiplier standing in for the unspecified order constant.
    pub c_scale: f64,
}

impl TheoryScales {
    pub fn validate(&self) -> Result<()> {
        if !(self.d >= 0.0 && self.d.is_finite()) {
            return Err(Error::invalid("D must be nonnegative"));
        }
        if !(self.rho >= 0.0 && self.rho < 1.0) {
            return Err(Error::invalid("rho must lie in [0, 1)"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::invalid("sigma must be positive"));
        }
        if self.t_burn == 0 || self.t_bar < self.t_burn {
            return Err(Error::invalid("need 1 <= t_burn <= t_bar"));
        }
        if !(self.c_scale > 0.0) {
            return Err(Error::invalid("c_scale must be positive"));
        }
        Ok(())
    }
}

/// Prior bound on the initial distance: `‖Â^(1)‖_F + √n`.
pub fn default_prior_distance(a_init: &DMatrix<f64>) -> f64 {
    a_init.norm() + (a_init.nrows() as f64).sqrt()
}

fn nonzero_norm_sq(g: &DMatrix<f64>) -> Result<f64> {
    let g2 = g.norm_squared();
    if g2 > 0.0 {
        Ok(g2)
    } else {
        Err(Error::Stationary)
    }
}

/// `⟨G, Â − Ā⟩ / ‖G‖_F²`. May be negative.
pub fn best_step(g: &DMatrix<f64>, a_hat: &DMatrix<f64>, a_true: &DMatrix<f64>) -> Result<f64> {
    let g2 = nonzero_norm_sq(g)?;
    Ok(frobenius_inner(g, &(a_hat - a_true)) / g2)
}

/// `max(f̂ − f*, 0) / ‖G‖_F²`.
pub fn polyak_step(f_hat: f64, f_star: f64, g: &DMatrix<f64>) -> Result<f64> {
    let g2 = nonzero_norm_sq(g)?;
    Ok((f_hat - f_star).max(0.0) / g2)
}

/// Rounding error bound for `f̂ − f*` when both are sums of `terms` norms.
/// Gaps below it carry no sign information.
pub fn gap_rounding_floor(f_hat: f64, f_star: f64, terms: usize) -> f64 {
    f64::EPSILON * (terms as f64 + 1.0) * (f_hat.abs() + f_star.abs())
}

/// `Σ_{t=lo}^{hi} t²` in closed form.
fn sum_of_squares(lo: u64, hi: u64) -> f64 {
    let s = |m: u64| {
        let m = m as f64;
        m * (m + 1.0) * (2.0 * m + 1.0) / 6.0
    };
    s(hi) - s(lo - 1)
}

/// `c · D(1−ρ) / (σ √(Σ_{t=T_burn}^{T̄} t²))`.
pub fn constant_step(scales: &TheoryScales) -> f64 {
    scales.c_scale * scales.d * (1.0 - scales.rho) / (scales.sigma * sum_of_squares(scales.t_burn, scales.t_bar).sqrt())
}

/// The numerator `β` of the diminishing rule `β/T`:
/// `c · D(1−ρ) / (σ √(T̄ − T_burn))`.
pub fn diminishing_scale(scales: &TheoryScales) -> Result<f64> {
    if scales.t_bar <= scales.t_burn {
        return Err(Error::invalid("diminishing step needs t_bar > t_burn"));
    }
    Ok(
        scales.c_scale * scales.d * (1.0 - scales.rho)
            / (scales.sigma * ((scales.t_bar - scales.t_burn) as f64).sqrt()),
    )
}

/// `β^(T) = diminishing_scale / T`.
pub fn diminishing_step(scales: &TheoryScales, period: u64) -> Result<f64> {
    if period == 0 {
        return Err(Error::invalid("period must be at least 1"));
    }
    Ok(diminishing_scale(scales)? / period as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backtrack {
    pub beta: f64,
    /// No trial step met the Armijo condition.
    pub no_descent: bool,
    pub evaluations: u32,
}

/// Largest `β ∈ {β₀ αᵏ : 0 ≤ k ≤ K}` with
/// `f(Â − βG) ≤ f(Â) − c β ‖G‖_F²`, falling back to `β₀ α^K`.
pub fn backtracking_step<F>(
    mut f_eval: F,
    a_hat: &DMatrix<f64>,
    f_hat: f64,
    g: &DMatrix<f64>,
    params: &BacktrackingParams,
) -> Result<Backtrack>
where
    F: FnMut(&DMatrix<f64>) -> f64,
{
    params.validate()?;
    let g2 = nonzero_norm_sq(g)?;
    let mut beta = params.beta_init.unwrap_or_else(|| 1.0 / g2.sqrt());
    let mut trial = a_hat.clone();
    for k in 0..=params.max_halvings {
        trial.copy_from(a_hat);
        trial.zip_apply(g, |a, gi| *a -= beta * gi);
        if f_eval(&trial) <= f_hat - params.armijo_c * beta * g2 {
            return Ok(Backtrack {
                beta,
                no_descent: false,
                evaluations: k + 1,
            });
        }
        if k < params.max_halvings {
            beta *= params.shrink_alpha;
        }
    }
    Ok(Backtrack {
        beta,
        no_descent: true,
        evaluations: params.max_halvings + 1,
    })
}
