//! The non-smooth objective `f_T(A) = Σ_{t<T} ‖x_{t+1} − A x_t‖₂` and its
//! subgradients.
//!
//! A subgradient is `G = −Σ_t g_t x_tᵀ` with `g_t = r_t/‖r_t‖₂` for nonzero
//! residuals and any `‖g_t‖₂ ≤ 1` at a kink (`r_t = 0`). Every evaluation
//! path below runs the same per-term kernel in the same order, so the
//! trajectory functions and [`ObjectiveCache`] agree bit for bit.

use nalgebra::{DMatrix, DVector};

use crate::sim::Trajectory;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub t: usize,
    pub r: DVector<f64>,
    pub norm: f64,
}

/// Choice of `g_t` where the residual vanishes.
#[derive(Debug, Clone, PartialEq)]
pub enum KinkRule {
    /// `g_t = 0`, the minimum-norm element.
    Zero,
    /// A fixed vector of norm at most one.
    Custom(DVector<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubgradientSelection {
    pub kink_rule: KinkRule,
    /// Residual norms at or below this count as kinks.
    pub zero_threshold: f64,
}

impl Default for SubgradientSelection {
    fn default() -> Self {
        Self {
            kink_rule: KinkRule::Zero,
            zero_threshold: 1e-12,
        }
    }
}

impl SubgradientSelection {
    pub fn new(kink_rule: KinkRule, zero_threshold: f64) -> Result<Self> {
        let sel = Self {
            kink_rule,
            zero_threshold,
        };
        sel.validate()?;
        Ok(sel)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.zero_threshold > 0.0) {
            return Err(Error::invalid("zero_threshold must be positive"));
        }
        if let KinkRule::Custom(e) = &self.kink_rule {
            if e.norm() > 1.0 + 1e-12 {
                return Err(Error::invalid(format!("kink vector norm {} exceeds 1", e.norm())));
            }
        }
        Ok(())
    }

    fn kink_vector(&self, n: usize) -> Result<Option<&[f64]>> {
        match &self.kink_rule {
            KinkRule::Zero => Ok(None),
            KinkRule::Custom(e) if e.len() == n => Ok(Some(e.as_slice())),
            KinkRule::Custom(e) => Err(Error::DimensionMismatch {
                expected: n,
                found: e.len(),
            }),
        }
    }
}

/// Objective value and one subgradient at the same point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub subgradient: DMatrix<f64>,
    /// Residuals under the kink threshold are not exactly zero, so the
    /// subgradient is inexact: `f(B) ≥ f(A) + ⟨G, B − A⟩ − kink_slack`.
    pub kink_slack: f64,
}

/// `out = x_next − A x`, returns `‖out‖₂`.
fn residual_into(a: &[f64], n: usize, x: &[f64], x_next: &[f64], out: &mut [f64]) -> f64 {
    out.copy_from_slice(x_next);
    for (j, &xj) in x.iter().enumerate() {
        let col = &a[j * n..(j + 1) * n];
        for (o, &c) in out.iter_mut().zip(col) {
            *o -= c * xj;
        }
    }
    out.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Borrowed view of consecutive states, either a slice of vectors or the
/// cache's flat buffer.
trait StateSeq {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn get(&self, t: usize) -> &[f64];
}

impl StateSeq for [DVector<f64>] {
    fn dim(&self) -> usize {
        self.first().map_or(0, |x| x.len())
    }
    fn len(&self) -> usize {
        <[DVector<f64>]>::len(self)
    }
    fn get(&self, t: usize) -> &[f64] {
        self[t].as_slice()
    }
}

fn check_args<S: StateSeq + ?Sized>(a: &DMatrix<f64>, states: &S, periods: usize) -> Result<()> {
    let n = states.dim();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if a.nrows() != n { a.nrows() } else { a.ncols() },
        });
    }
    let available = states.len().saturating_sub(1);
    if periods > available {
        return Err(Error::HorizonExceeded {
            requested: periods,
            available,
        });
    }
    Ok(())
}

fn value_kernel<S: StateSeq + ?Sized>(a: &DMatrix<f64>, states: &S, periods: usize) -> f64 {
    let n = states.dim();
    let mut buf = vec![0.0; n];
    let mut total = 0.0;
    for t in 0..periods {
        total += residual_into(a.as_slice(), n, states.get(t), states.get(t + 1), &mut buf);
    }
    total
}

fn evaluate_kernel<S: StateSeq + ?Sized>(
    a: &DMatrix<f64>,
    states: &S,
    periods: usize,
    sel: &SubgradientSelection,
) -> Result<Evaluation> {
    let n = states.dim();
    let kink = sel.kink_vector(n)?;
    let mut buf = vec![0.0; n];
    let mut g = DMatrix::zeros(n, n);
    let mut total = 0.0;
    let mut slack = 0.0;
    for t in 0..periods {
        let x = states.get(t);
        let norm = residual_into(a.as_slice(), n, x, states.get(t + 1), &mut buf);
        total += norm;
        let g_t: &[f64] = if norm > sel.zero_threshold {
            for v in buf.iter_mut() {
                *v /= norm;
            }
            &buf
        } else {
            match kink {
                Some(e) => {
                    slack += 2.0 * norm;
                    e
                }
                None => {
                    slack += norm;
                    continue;
                }
            }
        };
        let gs = g.as_mut_slice();
        for (j, &xj) in x.iter().enumerate() {
            let col = &mut gs[j * n..(j + 1) * n];
            for (c, &gi) in col.iter_mut().zip(g_t) {
                *c -= gi * xj;
            }
        }
    }
    Ok(Evaluation {
        value: total,
        subgradient: g,
        kink_slack: slack,
    })
}

/// Residuals `r_t = x_{t+1} − A x_t` for `t < periods`.
pub fn residuals(a: &DMatrix<f64>, traj: &Trajectory, periods: usize) -> Result<Vec<Residual>> {
    check_args(a, traj.states(), periods)?;
    let n = traj.dim();
    let mut buf = vec![0.0; n];
    Ok((0..periods)
        .map(|t| {
            let norm = residual_into(
                a.as_slice(),
                n,
                traj.state(t).as_slice(),
                traj.state(t + 1).as_slice(),
                &mut buf,
            );
            Residual {
                t,
                r: DVector::from_column_slice(&buf),
                norm,
            }
        })
        .collect())
}

/// `f_T(A)` over the first `periods` transitions.
pub fn objective_value(a: &DMatrix<f64>, traj: &Trajectory, periods: usize) -> Result<f64> {
    check_args(a, traj.states(), periods)?;
    Ok(value_kernel(a, traj.states(), periods))
}

/// One element of `∂f_T(A)`, selected by `sel` at kinks.
pub fn subgradient(
    a: &DMatrix<f64>,
    traj: &Trajectory,
    periods: usize,
    sel: &SubgradientSelection,
) -> Result<DMatrix<f64>> {
    check_args(a, traj.states(), periods)?;
    Ok(evaluate_kernel(a, traj.states(), periods, sel)?.subgradient)
}

/// Value and subgradient in a single pass.
pub fn evaluate(a: &DMatrix<f64>, traj: &Trajectory, periods: usize, sel: &SubgradientSelection) -> Result<Evaluation> {
    check_args(a, traj.states(), periods)?;
    evaluate_kernel(a, traj.states(), periods, sel)
}

/// The observed state prefix `x_0..x_T`, stored contiguously. Extending by
/// one state adds one term to the objective.
#[derive(Debug, Clone)]
pub struct ObjectiveCache {
    n: usize,
    data: Vec<f64>,
}

impl StateSeq for ObjectiveCache {
    fn dim(&self) -> usize {
        self.n
    }
    fn len(&self) -> usize {
        self.data.len() / self.n
    }
    fn get(&self, t: usize) -> &[f64] {
        &self.data[t * self.n..(t + 1) * self.n]
    }
}

impl ObjectiveCache {
    pub fn new(x0: &DVector<f64>) -> Result<Self> {
        if x0.is_empty() {
            return Err(Error::invalid("state dimension must be at least 1"));
        }
        Ok(Self {
            n: x0.len(),
            data: x0.as_slice().to_vec(),
        })
    }

    pub fn from_states(states: &[DVector<f64>]) -> Result<Self> {
        let (first, rest) = states
            .split_first()
            .ok_or_else(|| Error::invalid("need at least one state"))?;
        let mut cache = Self::new(first)?;
        for x in rest {
            cache.extend(x)?;
        }
        Ok(cache)
    }

    /// Appends `x_{T+1}`, turning `f_T` into `f_{T+1}`.
    pub fn extend(&mut self, new_state: &DVector<f64>) -> Result<()> {
        if new_state.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: new_state.len(),
            });
        }
        self.data.extend_from_slice(new_state.as_slice());
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored transitions (states minus one).
    pub fn periods(&self) -> usize {
        StateSeq::len(self) - 1
    }

    pub fn state(&self, t: usize) -> &[f64] {
        self.get(t)
    }

    /// `f_T(A)` with `T = periods`.
    pub fn value(&self, a: &DMatrix<f64>, periods: usize) -> Result<f64> {
        check_args(a, self, periods)?;
        Ok(value_kernel(a, self, periods))
    }

    /// The single term `‖x_{t+1} − A x_t‖₂`.
    pub fn term(&self, a: &DMatrix<f64>, t: usize) -> Result<f64> {
        check_args(a, self, t + 1)?;
        let mut buf = vec![0.0; self.n];
        Ok(residual_into(
            a.as_slice(),
            self.n,
            self.get(t),
            self.get(t + 1),
            &mut buf,
        ))
    }

    pub fn subgradient(&self, a: &DMatrix<f64>, periods: usize, sel: &SubgradientSelection) -> Result<DMatrix<f64>> {
        Ok(self.evaluate(a, periods, sel)?.subgradient)
    }

    pub fn evaluate(&self, a: &DMatrix<f64>, periods: usize, sel: &SubgradientSelection) -> Result<Evaluation> {
        check_args(a, self, periods)?;
        evaluate_kernel(a, self, periods, sel)
    }

    /// `Σ_{t<periods} ‖x_t‖₂`.
    pub fn state_norm_sum(&self, periods: usize) -> f64 {
        (0..periods.min(self.periods() + 1))
            .map(|t| self.get(t).iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum()
    }
}
