//! The online subgradient loop.
//!
//! At period `T` the estimator holds `Â^(T)` and the states `x_0..x_T`. One
//! step computes `G ∈ ∂f_T(Â^(T))`, picks `β^(T)`, sets
//! `Â^(T+1) = Â^(T) − β^(T) G`, and only then may the next state extend the
//! objective to `f_{T+1}`.

use std::io::{BufRead, Write};

use bitflags::bitflags;
use nalgebra::{DMatrix, DVector};

use crate::linalg::{fmt_f64, parse_f64};
use crate::objective::{ObjectiveCache, SubgradientSelection};
use crate::rng;
use crate::sim::{SystemInstance, Trajectory};
use crate::stepsize::{backtracking_step, best_step, gap_rounding_floor, polyak_step, StepSizePolicy};
use crate::theory::{cos_theta, BurnInDetector, CertificateTracker};
use crate::{Error, Result};

bitflags! {
    /// Per-step annotations.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
    pub struct StepFlags: u8 {
        /// `G = 0`; the step was skipped.
        const STATIONARY = 1;
        /// Polyak rule saw `f_T(Â) < f_T(Ā)` and clamped the step to zero.
        const NEGATIVE_POLYAK_GAP = 1 << 1;
        /// Backtracking found no step satisfying the Armijo test.
        const NO_DESCENT = 1 << 2;
        /// Best rule returned `β < 0` (obtuse angle).
        const NEGATIVE_STEP = 1 << 3;
    }
}

const FLAG_NAMES: [(StepFlags, &str); 4] = [
    (StepFlags::STATIONARY, "stationary"),
    (StepFlags::NEGATIVE_POLYAK_GAP, "negative_polyak_gap"),
    (StepFlags::NO_DESCENT, "no_descent"),
    (StepFlags::NEGATIVE_STEP, "negative_step"),
];

impl StepFlags {
    /// `none`, or the set names joined by `|`.
    pub fn label(&self) -> String {
        let names: Vec<&str> = FLAG_NAMES
            .iter()
            .filter(|(f, _)| self.contains(*f))
            .map(|(_, name)| *name)
            .collect();
        if names.is_empty() {
            "none".into()
        } else {
            names.join("|")
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        if label == "none" {
            return Some(Self::empty());
        }
        label.split('|').try_fold(Self::empty(), |acc, part| {
            FLAG_NAMES.iter().find(|(_, name)| *name == part).map(|(f, _)| acc | *f)
        })
    }
}

/// How `Â^(1)` is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitRule {
    Zeros,
    /// I.i.d. `N(0, s²/n)` entries.
    GaussianScaled(f64),
}

/// What one period produced. Gaps and the angle are `NaN` when `Ā` is
/// unknown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub period: usize,
    /// `‖Â^(T) − Ā‖_F`, measured before the update.
    pub sol_gap: f64,
    /// `f_T(Â^(T)) − f_T(Ā)`.
    pub loss_gap: f64,
    pub beta: f64,
    pub grad_norm: f64,
    pub cos_theta: f64,
    pub flags: StepFlags,
}

#[derive(Debug, Clone)]
pub struct EstimatorState {
    pub a_hat: DMatrix<f64>,
    /// Current period `T ≥ 1`.
    pub period: usize,
    pub history: Vec<StepRecord>,
    /// First period counted by `min_sol_gap`.
    pub window_start: usize,
    pub min_sol_gap: Option<f64>,
}

impl EstimatorState {
    pub fn init(n: usize, rule: InitRule, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        let a_hat = match rule {
            InitRule::Zeros => DMatrix::zeros(n, n),
            InitRule::GaussianScaled(s) => {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::invalid("init scale must be positive"));
                }
                let mut r = rng::seeded(seed);
                rng::gaussian_matrix(&mut r, n, n) * (s / (n as f64).sqrt())
            }
        };
        Ok(Self {
            a_hat,
            period: 1,
            history: Vec::new(),
            window_start: 1,
            min_sol_gap: None,
        })
    }

    pub fn with_window_start(mut self, window_start: usize) -> Self {
        self.window_start = window_start.max(1);
        self.min_sol_gap = min_gap_from(&self.history, self.window_start);
        self
    }

    pub fn n(&self) -> usize {
        self.a_hat.nrows()
    }

    pub fn sol_gap_history(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.sol_gap).collect()
    }

    pub fn loss_gap_history(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.loss_gap).collect()
    }

    fn record(&mut self, rec: StepRecord) {
        if rec.period >= self.window_start && rec.sol_gap.is_finite() {
            self.min_sol_gap = Some(self.min_sol_gap.map_or(rec.sol_gap, |m| m.min(rec.sol_gap)));
        }
        self.history.push(rec);
    }
}

fn min_gap_from(history: &[StepRecord], start: usize) -> Option<f64> {
    history
        .iter()
        .filter(|r| r.period >= start && r.sol_gap.is_finite())
        .map(|r| r.sol_gap)
        .reduce(f64::min)
}

/// What the step-size rules may know about the truth.
#[derive(Debug, Clone, Copy)]
pub enum Oracle<'a> {
    /// Simulation: `Ā` and `f_T(Ā)` at the current period.
    Known { a_true: &'a DMatrix<f64>, f_true: f64 },
    /// Data only; Polyak uses `f_star` if supplied.
    Blind { f_star: Option<f64> },
}

/// One period of the loop. `cache` must hold at least `state.period + 1`
/// states; only the first `state.period` transitions are used.
pub fn step(
    state: &mut EstimatorState,
    cache: &ObjectiveCache,
    policy: &StepSizePolicy,
    sel: &SubgradientSelection,
    oracle: Oracle<'_>,
) -> Result<StepRecord> {
    let period = state.period;
    if state.n() != cache.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.n(),
            found: cache.dim(),
        });
    }
    let eval = cache.evaluate(&state.a_hat, period, sel)?;
    let f_hat = eval.value;
    let kink_slack = eval.kink_slack;
    let g = eval.subgradient;
    let grad_norm = g.norm();

    let (sol_gap, loss_gap, cos) = match oracle {
        Oracle::Known { a_true, f_true } => (
            (&state.a_hat - a_true).norm(),
            f_hat - f_true,
            cos_theta(&state.a_hat, a_true, &g).unwrap_or(f64::NAN),
        ),
        Oracle::Blind { .. } => (f64::NAN, f64::NAN, f64::NAN),
    };

    let mut flags = StepFlags::empty();
    let beta = if grad_norm == 0.0 {
        flags |= StepFlags::STATIONARY;
        0.0
    } else {
        match *policy {
            StepSizePolicy::Best => {
                let Oracle::Known { a_true, .. } = oracle else {
                    return Err(Error::MissingOracle("best"));
                };
                let beta = best_step(&g, &state.a_hat, a_true)?;
                if beta < 0.0 {
                    flags |= StepFlags::NEGATIVE_STEP;
                }
                beta
            }
            StepSizePolicy::Polyak => {
                let f_star = match oracle {
                    Oracle::Known { f_true, .. } => f_true,
                    Oracle::Blind { f_star: Some(f) } => f,
                    Oracle::Blind { f_star: None } => return Err(Error::MissingOracle("polyak")),
                };
                if f_hat < f_star {
                    flags |= StepFlags::NEGATIVE_POLYAK_GAP;
                }
                // Only the part of the gap that G certifies is used; the rest
                // is rounding and thresholded residuals, and over a tiny G it
                // would throw the estimate arbitrarily far.
                let floor = gap_rounding_floor(f_hat, f_star, period + state.n());
                polyak_step(f_hat - kink_slack - floor, f_star, &g)?
            }
            StepSizePolicy::Constant { beta } => beta,
            StepSizePolicy::Diminishing { beta0 } => beta0 / period as f64,
            StepSizePolicy::Backtracking(params) => {
                let out = backtracking_step(
                    |a| cache.value(a, period).unwrap_or(f64::INFINITY),
                    &state.a_hat,
                    f_hat,
                    &g,
                    &params,
                )?;
                if out.no_descent {
                    flags |= StepFlags::NO_DESCENT;
                }
                out.beta
            }
        }
    };

    if beta != 0.0 {
        state.a_hat.zip_apply(&g, |a, gi| *a -= beta * gi);
    }
    let rec = StepRecord {
        period,
        sol_gap,
        loss_gap,
        beta,
        grad_norm,
        cos_theta: cos,
        flags,
    };
    state.record(rec);
    state.period += 1;
    Ok(rec)
}

/// Streaming estimator: feed states with [`observe`](Self::observe), update
/// with [`step`](Self::step).
#[derive(Debug, Clone)]
pub struct OnlineEstimator {
    cache: ObjectiveCache,
    state: EstimatorState,
    policy: StepSizePolicy,
    selection: SubgradientSelection,
    truth: Option<Truth>,
    f_star: Option<f64>,
}

#[derive(Debug, Clone)]
struct Truth {
    a_true: DMatrix<f64>,
    value: f64,
    terms: usize,
}

impl OnlineEstimator {
    pub fn new(
        x0: &DVector<f64>,
        state: EstimatorState,
        policy: StepSizePolicy,
        selection: SubgradientSelection,
    ) -> Result<Self> {
        policy.validate()?;
        selection.validate()?;
        if x0.len() != state.n() {
            return Err(Error::DimensionMismatch {
                expected: state.n(),
                found: x0.len(),
            });
        }
        Ok(Self {
            cache: ObjectiveCache::new(x0)?,
            state,
            policy,
            selection,
            truth: None,
            f_star: None,
        })
    }

    /// Enables the gap metrics and the oracle step sizes.
    pub fn with_truth(mut self, a_true: DMatrix<f64>) -> Result<Self> {
        self.set_truth(a_true)?;
        Ok(self)
    }

    pub fn set_truth(&mut self, a_true: DMatrix<f64>) -> Result<()> {
        if a_true.shape() != self.state.a_hat.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.state.n(),
                found: a_true.nrows(),
            });
        }
        self.truth = Some(Truth {
            a_true,
            value: 0.0,
            terms: 0,
        });
        Ok(())
    }

    /// Optimal-value estimate for Polyak steps without the truth.
    pub fn with_f_star(mut self, f_star: f64) -> Self {
        self.set_f_star(Some(f_star));
        self
    }

    pub fn set_f_star(&mut self, f_star: Option<f64>) {
        self.f_star = f_star;
    }

    pub fn observe(&mut self, x: &DVector<f64>) -> Result<()> {
        self.cache.extend(x)
    }

    /// Whether `x_T` has arrived for the current period `T`.
    pub fn ready(&self) -> bool {
        self.cache.periods() >= self.state.period
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        if !self.ready() {
            return Err(Error::HorizonExceeded {
                requested: self.state.period,
                available: self.cache.periods(),
            });
        }
        let period = self.state.period;
        let oracle = match &mut self.truth {
            Some(truth) => {
                // f_T(Ā) grows by one term per period; summing in order keeps
                // it bit-identical to a fresh evaluation.
                while truth.terms < period {
                    truth.value += self.cache.term(&truth.a_true, truth.terms)?;
                    truth.terms += 1;
                }
                Oracle::Known {
                    a_true: &truth.a_true,
                    f_true: truth.value,
                }
            }
            None => Oracle::Blind { f_star: self.f_star },
        };
        step(&mut self.state, &self.cache, &self.policy, &self.selection, oracle)
    }

    pub fn estimate(&self) -> &DMatrix<f64> {
        &self.state.a_hat
    }

    pub fn state(&self) -> &EstimatorState {
        &self.state
    }

    pub fn cache(&self) -> &ObjectiveCache {
        &self.cache
    }

    pub fn into_state(self) -> EstimatorState {
        self.state
    }
}

/// Empirical burn-in tracking during a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateConfig {
    pub n_dirs: usize,
    pub seed: u64,
    /// Consecutive holding periods required.
    pub streak: usize,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        Self {
            n_dirs: 256,
            seed: 0,
            streak: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub policy: StepSizePolicy,
    pub selection: SubgradientSelection,
    /// `T̄`: periods `1..T̄` are run, so `T̄ − 1` updates.
    pub horizon: usize,
    pub init: InitRule,
    pub init_seed: u64,
    pub window_start: usize,
    /// Stop once the solution gap drops below this.
    pub early_stop_tol: Option<f64>,
    pub certificate: Option<CertificateConfig>,
    /// Periods after the empirical burn-in used for the log-gap slope.
    pub slope_window: usize,
}

impl RunConfig {
    pub fn new(policy: StepSizePolicy, horizon: usize) -> Self {
        Self {
            policy,
            selection: SubgradientSelection::default(),
            horizon,
            init: InitRule::Zeros,
            init_seed: 0,
            window_start: 1,
            early_stop_tol: None,
            certificate: None,
            slope_window: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub records: Vec<StepRecord>,
    /// `‖Â^(T̄) − Ā‖_F` after the last update (`NaN` when blind).
    pub final_sol_gap: f64,
    pub min_sol_gap: Option<f64>,
    pub empirical_burn_in: Option<usize>,
    /// Least-squares slope of `ln sol_gap` against `T` after the burn-in.
    pub log_slope: Option<f64>,
    pub stopped_early: bool,
}

impl RunMetrics {
    pub fn min_sol_gap_from(&self, start: usize) -> Option<f64> {
        min_gap_from(&self.records, start)
    }

    /// Slope of `ln sol_gap` over periods `[start, start + window]`.
    pub fn log_slope_from(&self, start: usize, window: usize) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .records
            .iter()
            .filter(|r| r.period >= start && r.period <= start + window && r.sol_gap.is_finite())
            .map(|r| (r.period as f64, r.sol_gap.max(f64::MIN_POSITIVE).ln()))
            .collect();
        least_squares_slope(&pts)
    }
}

pub fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: EstimatorState,
    pub metrics: RunMetrics,
}

/// Runs periods `1..T̄` on a simulated trajectory with known `Ā`.
pub fn run_simulation(system: &SystemInstance, traj: &Trajectory, cfg: &RunConfig) -> Result<RunOutput> {
    if cfg.horizon < 2 {
        return Err(Error::invalid("horizon must be at least 2"));
    }
    if traj.dim() != system.n() {
        return Err(Error::DimensionMismatch {
            expected: system.n(),
            found: traj.dim(),
        });
    }
    if traj.horizon() + 1 < cfg.horizon {
        return Err(Error::HorizonExceeded {
            requested: cfg.horizon - 1,
            available: traj.horizon(),
        });
    }
    let state = EstimatorState::init(system.n(), cfg.init, cfg.init_seed)?.with_window_start(cfg.window_start);
    let mut est = OnlineEstimator::new(traj.state(0), state, cfg.policy, cfg.selection.clone())?
        .with_truth(system.a_true().clone())?;
    est.observe(traj.state(1))?;

    let mut certificate = cfg.certificate.map(|c| {
        let mut tracker = CertificateTracker::new(system.n(), c.n_dirs, c.seed);
        tracker.push_from(traj, 0);
        (tracker, BurnInDetector::new(c.streak))
    });

    let mut stopped_early = false;
    for period in 1..cfg.horizon {
        let rec = est.step()?;
        if let Some((tracker, detector)) = &mut certificate {
            detector.observe(period, tracker.certificate().holds);
        }
        if cfg.early_stop_tol.is_some_and(|tol| rec.sol_gap < tol) {
            stopped_early = true;
            break;
        }
        if period + 1 < cfg.horizon {
            est.observe(traj.state(period + 1))?;
            if let Some((tracker, _)) = &mut certificate {
                tracker.push_from(traj, period);
            }
        }
    }

    let state = est.into_state();
    let empirical_burn_in = certificate.and_then(|(_, d)| d.burn_in());
    let mut metrics = RunMetrics {
        records: state.history.clone(),
        final_sol_gap: (&state.a_hat - system.a_true()).norm(),
        min_sol_gap: state.min_sol_gap,
        empirical_burn_in,
        log_slope: None,
        stopped_early,
    };
    metrics.log_slope = empirical_burn_in.and_then(|t0| metrics.log_slope_from(t0, cfg.slope_window));
    Ok(RunOutput { state, metrics })
}

/// Runs on observed states only. Best steps are unavailable; Polyak needs
/// `f_star`.
pub fn run_blind(states: &[DVector<f64>], cfg: &RunConfig, f_star: Option<f64>) -> Result<RunOutput> {
    if cfg.horizon < 2 {
        return Err(Error::invalid("horizon must be at least 2"));
    }
    if states.len() < cfg.horizon {
        return Err(Error::HorizonExceeded {
            requested: cfg.horizon - 1,
            available: states.len().saturating_sub(1),
        });
    }
    let n = states[0].len();
    let state = EstimatorState::init(n, cfg.init, cfg.init_seed)?.with_window_start(cfg.window_start);
    let mut est = OnlineEstimator::new(&states[0], state, cfg.policy, cfg.selection.clone())?;
    if let Some(f) = f_star {
        est = est.with_f_star(f);
    }
    est.observe(&states[1])?;
    for period in 1..cfg.horizon {
        est.step()?;
        if period + 1 < cfg.horizon {
            est.observe(&states[period + 1])?;
        }
    }
    let state = est.into_state();
    Ok(RunOutput {
        metrics: RunMetrics {
            records: state.history.clone(),
            final_sol_gap: f64::NAN,
            min_sol_gap: None,
            empirical_burn_in: None,
            log_slope: None,
            stopped_early: false,
        },
        state,
    })
}

pub const METRICS_HEADER: &str = "T,sol_gap,loss_gap,beta,grad_norm,cos_theta,flag";

pub fn write_metrics_csv<W: Write>(out: &mut W, records: &[StepRecord]) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.period,
            fmt_f64(r.sol_gap),
            fmt_f64(r.loss_gap),
            fmt_f64(r.beta),
            fmt_f64(r.grad_norm),
            fmt_f64(r.cos_theta),
            r.flags.label()
        )?;
    }
    Ok(())
}

pub fn read_metrics_csv<R: BufRead>(input: R) -> Result<Vec<StepRecord>> {
    let mut records = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if idx == 0 {
            if line.trim() != METRICS_HEADER {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("unexpected header {line:?}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 7 fields, found {}", f.len()),
            });
        }
        let period = f[0].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("bad period {:?}", f[0]),
        })?;
        let flags = StepFlags::from_label(f[6]).ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("bad flag {:?}", f[6]),
        })?;
        records.push(StepRecord {
            period,
            sol_gap: parse_f64(f[1], line_no)?,
            loss_gap: parse_f64(f[2], line_no)?,
            beta: parse_f64(f[3], line_no)?,
            grad_norm: parse_f64(f[4], line_no)?,
            cos_theta: parse_f64(f[5], line_no)?,
            flags,
        });
    }
    Ok(records)
}
