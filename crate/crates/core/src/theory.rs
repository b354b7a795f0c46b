//! Computable versions of the convergence theory.
//!
//! The closed-form quantities (burn-in length, contraction rate, iterations
//! to accuracy) carry unspecified order constants, exposed here as named
//! multipliers. The empirical checks (recovery certificate, sharpness,
//! trajectory norms) evaluate the deterministic events the theory relies on,
//! on a concrete trajectory.

use nalgebra::{DMatrix, DVector};

use crate::linalg::frobenius_inner;
use crate::objective::objective_value;
use crate::rng;
use crate::sim::Trajectory;
use crate::{Error, Result};

/// Model constants. `lambda` is the persistent-excitation level, which the
/// simulator does not certify; it is a reporting input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryParams {
    pub p: f64,
    pub rho: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub delta: f64,
    pub c_burn: f64,
}

impl TheoryParams {
    /// `σ = λ = 1/√n` (so `κ = 1`), `δ = 0.05`, `c_burn = 1`.
    pub fn for_dimension(n: usize, p: f64, rho: f64) -> Self {
        let scale = 1.0 / (n.max(1) as f64).sqrt();
        Self {
            p,
            rho,
            sigma: scale,
            lambda: scale,
            delta: 0.05,
            c_burn: 1.0,
        }
    }

    pub fn kappa(&self) -> f64 {
        self.sigma / self.lambda
    }

    pub fn validate(&self) -> Result<()> {
        let open01 = |x: f64| x > 0.0 && x < 1.0;
        if !open01(self.p) {
            return Err(Error::invalid("p must lie in (0, 1)"));
        }
        if !(self.rho >= 0.0 && self.rho < 1.0) {
            return Err(Error::invalid("rho must lie in [0, 1)"));
        }
        if !(self.sigma > 0.0 && self.lambda > 0.0 && self.c_burn > 0.0) {
            return Err(Error::invalid("sigma, lambda and c_burn must be positive"));
        }
        if !open01(self.delta) {
            return Err(Error::invalid("delta must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// The two factors of the burn-in formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BurnInTerms {
    /// `max{κ¹⁰/((1−p)²(1−ρ)³), κ⁴/(p(1−p))}`.
    pub factor: f64,
    /// `n² · max{log(κ/(p(1−p)(1−ρ))), 1}`.
    pub dimension_term: f64,
    /// `log(1/δ)`.
    pub confidence_term: f64,
}

impl BurnInTerms {
    pub fn bracket(&self) -> f64 {
        self.dimension_term + self.confidence_term
    }
}

pub fn burn_in_terms(params: &TheoryParams, n: usize) -> BurnInTerms {
    let TheoryParams { p, rho, delta, .. } = *params;
    let kappa = params.kappa();
    let q = 1.0 - p;
    let factor = (kappa.powi(10) / (q * q * (1.0 - rho).powi(3))).max(kappa.powi(4) / (p * q));
    let log_term = (kappa / (p * q * (1.0 - rho))).ln().max(1.0);
    BurnInTerms {
        factor,
        dimension_term: (n * n) as f64 * log_term,
        confidence_term: (1.0 / delta).ln(),
    }
}

/// `⌈c_burn · factor · bracket⌉`, at least 1.
pub fn burn_in_estimate(params: &TheoryParams, n: usize) -> u64 {
    let terms = burn_in_terms(params, n);
    (params.c_burn * terms.factor * terms.bracket()).ceil().max(1.0) as u64
}

/// `γ = √(1 − c · p²(1−p)²(1−ρ)²/κ¹⁰)`.
pub fn gamma_rate(params: &TheoryParams, c_gamma: f64) -> Result<f64> {
    if !(c_gamma >= 0.0) {
        return Err(Error::invalid("c_gamma must be nonnegative"));
    }
    let TheoryParams { p, rho, .. } = *params;
    let shrink = c_gamma * (p * (1.0 - p) * (1.0 - rho)).powi(2) / params.kappa().powi(10);
    let arg = 1.0 - shrink;
    if !(arg > 0.0) {
        return Err(Error::invalid(format!(
            "c_gamma = {c_gamma} too large: 1 − {shrink} is not positive"
        )));
    }
    Ok(arg.sqrt())
}

/// `log(D/ε) / (−log γ)`; zero once `D ≤ ε`, infinite for `γ = 1`.
pub fn convergence_iterations(d: f64, eps: f64, gamma: f64) -> Result<f64> {
    if !(d > 0.0 && eps > 0.0) {
        return Err(Error::invalid("D and epsilon must be positive"));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid("gamma must lie in (0, 1]"));
    }
    if d <= eps {
        return Ok(0.0);
    }
    Ok((d / eps).ln() / -gamma.ln())
}

/// Everything the `theory` subcommand prints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryReport {
    pub kappa: f64,
    pub burn_in: u64,
    pub gamma: f64,
    pub t_conv: f64,
}

pub fn report(params: &TheoryParams, n: usize, c_gamma: f64, d: f64, eps: f64) -> Result<TheoryReport> {
    params.validate()?;
    let gamma = gamma_rate(params, c_gamma)?;
    Ok(TheoryReport {
        kappa: params.kappa(),
        burn_in: burn_in_estimate(params, n),
        gamma,
        t_conv: convergence_iterations(d, eps, gamma)?,
    })
}

/// Cosine of the angle between `Â − Ā` and `G`.
pub fn cos_theta(a_hat: &DMatrix<f64>, a_true: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<f64> {
    let delta = a_hat - a_true;
    let denom = delta.norm() * g.norm();
    if !(denom > 0.0) {
        return Err(Error::UndefinedAngle);
    }
    Ok((frobenius_inner(&delta, g) / denom).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub margin: f64,
    pub holds: bool,
}

/// `m(Z) = Σ_{t∈𝒦ᶜ} ‖Z x_t‖₂ − Σ_{t∈𝒦} ⟨Z x_t, d̂_t⟩` over `t < periods`.
///
/// `Ā` is the unique minimizer of `f_T` exactly when `m(Z) > 0` for every
/// nonzero `Z`.
pub fn recovery_margin(z: &DMatrix<f64>, traj: &Trajectory, periods: usize) -> f64 {
    (0..periods)
        .map(|t| {
            let zx = z * traj.state(t);
            match traj.direction(t) {
                Some(d_hat) => -zx.dot(&d_hat),
                None => zx.norm(),
            }
        })
        .sum()
}

/// Incremental recovery certificate over a fixed set of probe directions.
///
/// The probes are `n_dirs` directions drawn uniformly from the Frobenius unit
/// sphere plus the data-dependent direction `S/‖S‖_F`, `S = Σ_{t∈𝒦} d̂_t x_tᵀ`,
/// which maximizes the attacked sum for its norm.
#[derive(Debug, Clone)]
pub struct CertificateTracker {
    directions: Vec<DMatrix<f64>>,
    margins: Vec<f64>,
    attack_sum: DMatrix<f64>,
    quiet_states: Vec<DVector<f64>>,
    periods: usize,
}

impl CertificateTracker {
    pub fn new(n: usize, n_dirs: usize, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let directions = (0..n_dirs).map(|_| rng::unit_frobenius(&mut rng, n)).collect();
        Self {
            directions,
            margins: vec![0.0; n_dirs],
            attack_sum: DMatrix::zeros(n, n),
            quiet_states: Vec::new(),
            periods: 0,
        }
    }

    /// Number of terms absorbed so far.
    pub fn periods(&self) -> usize {
        self.periods
    }

    /// Adds term `t = periods()`: state `x_t` and, if attacked, direction `d̂_t`.
    pub fn push(&mut self, x_t: &DVector<f64>, d_hat: Option<&DVector<f64>>) {
        for (z, m) in self.directions.iter().zip(self.margins.iter_mut()) {
            let zx = z * x_t;
            *m += match d_hat {
                Some(d) => -zx.dot(d),
                None => zx.norm(),
            };
        }
        match d_hat {
            Some(d) => self.attack_sum += d * x_t.transpose(),
            None => self.quiet_states.push(x_t.clone()),
        }
        self.periods += 1;
    }

    /// Absorbs term `t` of a trajectory.
    pub fn push_from(&mut self, traj: &Trajectory, t: usize) {
        let d_hat = traj.direction(t);
        self.push(traj.state(t), d_hat.as_ref());
    }

    fn probe_margin(&self) -> Option<f64> {
        let s_norm = self.attack_sum.norm();
        if s_norm == 0.0 {
            return None;
        }
        let quiet: f64 = self.quiet_states.iter().map(|x| (&self.attack_sum * x).norm()).sum();
        Some(quiet / s_norm - s_norm)
    }

    pub fn certificate(&self) -> Certificate {
        let sampled = self.margins.iter().copied().fold(f64::INFINITY, f64::min);
        let margin = match self.probe_margin() {
            Some(probe) => sampled.min(probe),
            None => sampled,
        };
        Certificate {
            margin,
            holds: margin > 0.0,
        }
    }
}

/// Empirical check that `Ā` is the unique minimizer of `f_T`.
pub fn recovery_certificate(traj: &Trajectory, periods: usize, n_dirs: usize, seed: u64) -> Result<Certificate> {
    if periods > traj.horizon() {
        return Err(Error::HorizonExceeded {
            requested: periods,
            available: traj.horizon(),
        });
    }
    let mut tracker = CertificateTracker::new(traj.dim(), n_dirs, seed);
    for t in 0..periods {
        tracker.push_from(traj, t);
    }
    Ok(tracker.certificate())
}

/// Tracks when the certificate first holds for `streak` consecutive periods.
#[derive(Debug, Clone)]
pub struct BurnInDetector {
    streak: usize,
    run_start: Option<usize>,
    run_len: usize,
    found: Option<usize>,
}

impl BurnInDetector {
    pub fn new(streak: usize) -> Self {
        Self {
            streak: streak.max(1),
            run_start: None,
            run_len: 0,
            found: None,
        }
    }

    pub fn observe(&mut self, period: usize, holds: bool) {
        if self.found.is_some() {
            return;
        }
        if holds {
            let start = *self.run_start.get_or_insert(period);
            self.run_len += 1;
            if self.run_len >= self.streak {
                self.found = Some(start);
            }
        } else {
            self.run_start = None;
            self.run_len = 0;
        }
    }

    pub fn burn_in(&self) -> Option<usize> {
        self.found
    }
}

/// First period `T ≤ max_periods` starting a run of `streak` consecutive
/// periods whose certificate holds.
pub fn empirical_burn_in(
    traj: &Trajectory,
    max_periods: usize,
    n_dirs: usize,
    seed: u64,
    streak: usize,
) -> Option<usize> {
    let mut tracker = CertificateTracker::new(traj.dim(), n_dirs, seed);
    let mut detector = BurnInDetector::new(streak);
    for t in 0..max_periods.min(traj.horizon()) {
        tracker.push_from(traj, t);
        detector.observe(t + 1, tracker.certificate().holds);
        if detector.burn_in().is_some() {
            break;
        }
    }
    detector.burn_in()
}

/// `min_Z (f_T(Ā + rZ) − f_T(Ā))/r` over sampled unit directions: a lower
/// estimate of the sharpness constant around `Ā`.
pub fn sharpness_estimate(
    traj: &Trajectory,
    periods: usize,
    a_true: &DMatrix<f64>,
    n_dirs: usize,
    radius: f64,
    seed: u64,
) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(Error::invalid("radius must be positive"));
    }
    let f_true = objective_value(a_true, traj, periods)?;
    let mut rng = rng::seeded(seed);
    let mut best = f64::INFINITY;
    for _ in 0..n_dirs {
        let z = rng::unit_frobenius(&mut rng, traj.dim());
        let f = objective_value(&(a_true + radius * z), traj, periods)?;
        best = best.min((f - f_true) / radius);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormCheck {
    /// `Σ_{t<T} ‖x_t‖₂`.
    pub lhs: f64,
    /// `σT/(1−ρ)`.
    pub bound: f64,
    pub ratio: f64,
}

/// Compares the accumulated state norm with its `σT/(1−ρ)` scale.
pub fn trajectory_norm_check(traj: &Trajectory, params: &TheoryParams) -> NormCheck {
    let periods = traj.horizon();
    let lhs: f64 = traj.states()[..periods].iter().map(|x| x.norm()).sum();
    let bound = params.sigma * periods as f64 / (1.0 - params.rho);
    NormCheck {
        lhs,
        bound,
        ratio: if bound > 0.0 { lhs / bound } else { 0.0 },
    }
}
