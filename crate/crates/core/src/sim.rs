//! Ground-truth systems and disturbed trajectories.
//!
//! A system is `x_{t+1} = Ā x_t + d̄_t` with `‖Ā‖₂ < 1`. Each disturbance is
//! zero with probability `1 − p`; otherwise it is a length times a direction
//! drawn uniformly from the unit sphere.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::linalg::{fmt_f64, parse_f64, spectral_norm};
use crate::rng::{self, SimRng};
use crate::{Error, Result};

/// A stable ground-truth system matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemInstance {
    a_true: DMatrix<f64>,
    rho: f64,
}

impl SystemInstance {
    /// Wraps an existing matrix, computing its operator norm.
    pub fn from_matrix(a_true: DMatrix<f64>) -> Result<Self> {
        if a_true.nrows() == 0 {
            return Err(Error::invalid("system dimension must be at least 1"));
        }
        if !a_true.is_square() {
            return Err(Error::DimensionMismatch {
                expected: a_true.nrows(),
                found: a_true.ncols(),
            });
        }
        let rho = spectral_norm(&a_true);
        if !(rho < 1.0) {
            return Err(Error::invalid(format!(
                "system is not contractive: operator norm {rho} >= 1"
            )));
        }
        Ok(Self { a_true, rho })
    }

    pub fn a_true(&self) -> &DMatrix<f64> {
        &self.a_true
    }

    pub fn n(&self) -> usize {
        self.a_true.nrows()
    }

    /// Operator 2-norm of the system matrix.
    pub fn rho(&self) -> f64 {
        self.rho
    }
}

/// Draws `Ā = U diag(s) Vᵀ` with Haar-distributed `U`, `V` and singular
/// values i.i.d. uniform on (0, 1).
pub fn generate_system(n: usize, seed: u64) -> Result<SystemInstance> {
    if n == 0 {
        return Err(Error::invalid("system dimension must be at least 1"));
    }
    let mut rng = rng::seeded(seed);
    let s: Vec<f64> = (0..n).map(|_| rng::open01(&mut rng)).collect();
    Ok(compose(&mut rng, &s))
}

/// Same construction as [`generate_system`] with prescribed singular values.
pub fn generate_system_with_singular_values(singular_values: &[f64], seed: u64) -> Result<SystemInstance> {
    if singular_values.is_empty() {
        return Err(Error::invalid("system dimension must be at least 1"));
    }
    if let Some(bad) = singular_values.iter().find(|s| !(0.0..1.0).contains(*s)) {
        return Err(Error::invalid(format!("singular value {bad} outside [0, 1)")));
    }
    let mut rng = rng::seeded(seed);
    Ok(compose(&mut rng, singular_values))
}

fn compose(rng: &mut SimRng, s: &[f64]) -> SystemInstance {
    let n = s.len();
    let u = haar_orthogonal(rng, n);
    let v = haar_orthogonal(rng, n);
    let a_true = &u * DMatrix::from_diagonal(&DVector::from_column_slice(s)) * v.transpose();
    let rho = s.iter().copied().fold(0.0, f64::max);
    SystemInstance { a_true, rho }
}

/// Orthonormalizes a standard-normal matrix; the sign fix on `R`'s diagonal
/// makes the result Haar distributed.
fn haar_orthogonal(rng: &mut SimRng, n: usize) -> DMatrix<f64> {
    let qr = rng::gaussian_matrix(rng, n, n).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// How long a nonzero disturbance is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LengthLaw {
    /// `ℓ_t ~ N(0, σ_t²)` with `σ_t² = min{‖x_t‖₂², 1/n}`; the disturbance is
    /// `|ℓ_t| d̂_t`. The length shrinks with the state, so a zero state
    /// yields a zero disturbance and trajectories tend to decay towards the
    /// origin.
    StateScaledGaussian,
    /// `|ℓ_t| d̂_t` with `ℓ_t ~ N(0, σ²)`, `σ` taken from the model.
    Gaussian,
    /// `m · d̂_t`.
    FixedMagnitude(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceModel {
    /// Probability that a disturbance is nonzero.
    pub p: f64,
    /// Sub-Gaussian scale used by the diagnostics (and by
    /// [`LengthLaw::Gaussian`]).
    pub sigma: f64,
    pub length_law: LengthLaw,
    pub seed: u64,
}

impl DisturbanceModel {
    pub fn new(p: f64, sigma: f64, length_law: LengthLaw, seed: u64) -> Result<Self> {
        let model = Self {
            p,
            sigma,
            length_law,
            seed,
        };
        model.validate()?;
        Ok(model)
    }

    /// Gaussian lengths with `σ = 1/√n`, the cap of the state-scaled law.
    pub fn for_dimension(n: usize, p: f64, seed: u64) -> Result<Self> {
        Self::new(p, 1.0 / (n.max(1) as f64).sqrt(), LengthLaw::Gaussian, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::invalid(format!("p = {} must lie in (0, 1)", self.p)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma = {} must be positive", self.sigma)));
        }
        if let LengthLaw::FixedMagnitude(m) = self.length_law {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::invalid(format!("magnitude {m} must be positive")));
            }
        }
        Ok(())
    }
}

/// Draws `d̄_t` given the current state.
pub fn sample_disturbance(model: &DisturbanceModel, x_t: &DVector<f64>, rng: &mut SimRng) -> DVector<f64> {
    let n = x_t.len();
    if !rng.random_bool(model.p) {
        return DVector::zeros(n);
    }
    let direction = rng::unit_sphere(rng, n);
    let length = match model.length_law {
        LengthLaw::StateScaledGaussian => {
            let variance = x_t.norm_squared().min(1.0 / n as f64);
            rng::standard_normal(rng).abs() * variance.sqrt()
        }
        LengthLaw::Gaussian => rng::standard_normal(rng).abs() * model.sigma,
        LengthLaw::FixedMagnitude(m) => m,
    };
    direction * length
}

/// States `x_0..x_T`, disturbances `d̄_0..d̄_{T−1}` and the attack set
/// `𝒦 = {t : d̄_t ≠ 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<DVector<f64>>,
    disturbances: Vec<DVector<f64>>,
    attack_set: Vec<usize>,
}

impl Trajectory {
    pub fn new(states: Vec<DVector<f64>>, disturbances: Vec<DVector<f64>>) -> Result<Self> {
        if states.len() != disturbances.len() + 1 {
            return Err(Error::invalid(format!(
                "{} states need {} disturbances, got {}",
                states.len(),
                states.len().saturating_sub(1),
                disturbances.len()
            )));
        }
        let n = states[0].len();
        if n == 0 {
            return Err(Error::invalid("state dimension must be at least 1"));
        }
        if let Some(bad) = states.iter().chain(&disturbances).find(|v| v.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: bad.len(),
            });
        }
        let attack_set = disturbances
            .iter()
            .enumerate()
            .filter(|(_, d)| d.norm() > 0.0)
            .map(|(t, _)| t)
            .collect();
        Ok(Self {
            states,
            disturbances,
            attack_set,
        })
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    /// Number of transitions `T`.
    pub fn horizon(&self) -> usize {
        self.disturbances.len()
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn state(&self, t: usize) -> &DVector<f64> {
        &self.states[t]
    }

    pub fn disturbances(&self) -> &[DVector<f64>] {
        &self.disturbances
    }

    pub fn attack_set(&self) -> &[usize] {
        &self.attack_set
    }

    pub fn is_attacked(&self, t: usize) -> bool {
        self.attack_set.binary_search(&t).is_ok()
    }

    /// `d̂_t = d̄_t / ‖d̄_t‖₂` for attacked steps.
    pub fn direction(&self, t: usize) -> Option<DVector<f64>> {
        let d = &self.disturbances[t];
        let norm = d.norm();
        (norm > 0.0).then(|| d / norm)
    }

    /// Largest coordinate error of `x_{t+1} − (A x_t + d̄_t)` over the
    /// trajectory.
    pub fn recursion_error(&self, a: &DMatrix<f64>) -> f64 {
        (0..self.horizon())
            .map(|t| {
                let predicted = a * &self.states[t] + &self.disturbances[t];
                (&self.states[t + 1] - predicted).amax()
            })
            .fold(0.0, f64::max)
    }

    /// Keeps the first `horizon` transitions.
    pub fn truncated(&self, horizon: usize) -> Result<Trajectory> {
        if horizon > self.horizon() {
            return Err(Error::HorizonExceeded {
                requested: horizon,
                available: self.horizon(),
            });
        }
        Trajectory::new(self.states[..=horizon].to_vec(), self.disturbances[..horizon].to_vec())
    }

    /// Header `t,x_0..x_{n-1},d_0..d_{n-1},attacked`, one row per state. The
    /// row of the terminal state leaves the disturbance fields empty.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let n = self.dim();
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("x_{i}")));
        header.extend((0..n).map(|i| format!("d_{i}")));
        header.push("attacked".into());
        writeln!(out, "{}", header.join(","))?;
        for (t, x) in self.states.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(|&v| fmt_f64(v)));
            match self.disturbances.get(t) {
                Some(d) => {
                    row.extend(d.iter().map(|&v| fmt_f64(v)));
                    row.push(u8::from(self.is_attacked(t)).to_string());
                }
                None => row.extend(std::iter::repeat_n(String::new(), n + 1)),
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Trajectory> {
        let mut lines = input.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line.map_err(|e| Error::Parse {
                line: 1,
                message: e.to_string(),
            })?,
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "empty trajectory file".into(),
                })
            }
        };
        let columns = header.trim().split(',').count();
        if columns < 4 || (columns - 2) % 2 != 0 {
            return Err(Error::Parse {
                line: 1,
                message: format!("unexpected header {header:?}"),
            });
        }
        let n = (columns - 2) / 2;

        let mut states = Vec::new();
        let mut disturbances = Vec::new();
        let mut terminal = false;
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            if terminal {
                return Err(Error::Parse {
                    line: line_no,
                    message: "row after the terminal state".into(),
                });
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != columns {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {columns} fields, found {}", fields.len()),
                });
            }
            let t: usize = fields[0].trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad time index {:?}", fields[0]),
            })?;
            if t != states.len() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("time index {t} out of sequence"),
                });
            }
            let x = fields[1..=n]
                .iter()
                .map(|f| parse_f64(f, line_no))
                .collect::<Result<Vec<_>>>()?;
            states.push(DVector::from_vec(x));

            let d_fields = &fields[n + 1..=2 * n];
            if d_fields.iter().all(|f| f.trim().is_empty()) {
                terminal = true;
                continue;
            }
            let d = DVector::from_vec(
                d_fields
                    .iter()
                    .map(|f| parse_f64(f, line_no))
                    .collect::<Result<Vec<_>>>()?,
            );
            let attacked = match fields[2 * n + 1].trim() {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("attacked flag {other:?}"),
                    })
                }
            };
            if attacked != (d.norm() > 0.0) {
                return Err(Error::Parse {
                    line: line_no,
                    message: "attacked flag disagrees with the disturbance".into(),
                });
            }
            disturbances.push(d);
        }
        if !terminal {
            return Err(Error::Parse {
                line: states.len() + 1,
                message: "missing terminal state row".into(),
            });
        }
        Trajectory::new(states, disturbances)
    }
}

/// Zero initial state; the first disturbance starts the motion.
pub fn default_initial_state(n: usize) -> DVector<f64> {
    DVector::zeros(n)
}

/// Runs the recursion for `horizon` steps. Deterministic in `model.seed`.
pub fn simulate(
    system: &SystemInstance,
    model: &DisturbanceModel,
    x0: &DVector<f64>,
    horizon: usize,
) -> Result<Trajectory> {
    model.validate()?;
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    if x0.len() != system.n() {
        return Err(Error::DimensionMismatch {
            expected: system.n(),
            found: x0.len(),
        });
    }
    let mut rng = rng::seeded(model.seed);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut disturbances = Vec::with_capacity(horizon);
    states.push(x0.clone());
    for t in 0..horizon {
        let d = sample_disturbance(model, &states[t], &mut rng);
        let next = system.a_true() * &states[t] + &d;
        disturbances.push(d);
        states.push(next);
    }
    Trajectory::new(states, disturbances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn quiet(seed: u64) -> DisturbanceModel {
        // p is tiny but positive; the tests below use horizons short enough
        // that no attack fires for these seeds.
        DisturbanceModel::new(1e-12, 1.0, LengthLaw::Gaussian, seed).unwrap()
    }

    #[test]
    fn rejects_zero_dimension() {
        assert!(generate_system(0, 1).is_err());
    }

    #[test]
    fn scalar_system_is_signed_singular_value() {
        let sys = generate_system_with_singular_values(&[0.5], 9).unwrap();
        assert!((sys.a_true()[(0, 0)].abs() - 0.5).abs() < 1e-15);
        assert_eq!(sys.rho(), 0.5);
    }

    #[test]
    fn singular_values_lie_in_unit_interval() {
        for seed in 0..20 {
            let sys = generate_system(5, seed).unwrap();
            let sv = sys.a_true().singular_values();
            assert!(sv.iter().all(|&s| s > 0.0 && s < 1.0), "{sv}");
            assert!((sv.max() - sys.rho()).abs() < 1e-9);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_system(3, 42).unwrap();
        let b = generate_system(3, 42).unwrap();
        let bits = |s: &SystemInstance| s.a_true().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(a, generate_system(3, 43).unwrap());
    }

    #[test]
    fn from_matrix_rejects_unstable() {
        assert!(SystemInstance::from_matrix(dmatrix![1.0]).is_err());
        assert!(SystemInstance::from_matrix(DMatrix::zeros(2, 3)).is_err());
        let sys = SystemInstance::from_matrix(dmatrix![0.0, 0.5; 0.0, 0.0]).unwrap();
        assert!((sys.rho() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn scalar_geometric_decay() {
        let sys = SystemInstance::from_matrix(dmatrix![0.5]).unwrap();
        let traj = simulate(&sys, &quiet(0), &dvector![2.0], 2).unwrap();
        assert!(traj.attack_set().is_empty());
        assert_eq!(traj.states(), &[dvector![2.0], dvector![1.0], dvector![0.5]]);
    }

    #[test]
    fn nilpotent_decay() {
        let sys = SystemInstance::from_matrix(dmatrix![0.0, 0.5; 0.0, 0.0]).unwrap();
        let traj = simulate(&sys, &quiet(1), &dvector![0.0, 1.0], 2).unwrap();
        assert_eq!(traj.state(1), &dvector![0.5, 0.0]);
        assert_eq!(traj.state(2), &dvector![0.0, 0.0]);
    }

    #[test]
    fn no_attack_branch_returns_zero() {
        let model = quiet(5);
        let mut rng = rng::seeded(5);
        let d = sample_disturbance(&model, &dvector![1.0, 2.0, 3.0], &mut rng);
        assert_eq!(d, DVector::zeros(3));
    }

    #[test]
    fn state_scaled_law_is_zero_at_origin() {
        let model = DisturbanceModel::new(1.0 - 1e-12, 0.5, LengthLaw::StateScaledGaussian, 3).unwrap();
        let mut rng = rng::seeded(3);
        for _ in 0..100 {
            assert_eq!(sample_disturbance(&model, &DVector::zeros(4), &mut rng).norm(), 0.0);
        }
    }

    #[test]
    fn fixed_magnitude_has_exact_length() {
        let model = DisturbanceModel::new(1.0 - 1e-12, 1.0, LengthLaw::FixedMagnitude(0.3), 4).unwrap();
        let mut rng = rng::seeded(4);
        let d = sample_disturbance(&model, &DVector::zeros(3), &mut rng);
        assert!((d.norm() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn model_validation() {
        assert!(DisturbanceModel::new(0.0, 1.0, LengthLaw::Gaussian, 0).is_err());
        assert!(DisturbanceModel::new(1.0, 1.0, LengthLaw::Gaussian, 0).is_err());
        assert!(DisturbanceModel::new(0.5, 0.0, LengthLaw::Gaussian, 0).is_err());
        assert!(DisturbanceModel::new(0.5, 1.0, LengthLaw::FixedMagnitude(-1.0), 0).is_err());
    }

    #[test]
    fn simulate_checks_dimensions() {
        let sys = generate_system(3, 0).unwrap();
        let model = DisturbanceModel::for_dimension(3, 0.5, 0).unwrap();
        assert!(matches!(
            simulate(&sys, &model, &DVector::zeros(2), 10),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(simulate(&sys, &model, &DVector::zeros(3), 0).is_err());
    }

    #[test]
    fn trajectory_shape_invariants() {
        let sys = generate_system(4, 11).unwrap();
        let model = DisturbanceModel::for_dimension(4, 0.6, 12).unwrap();
        let traj = simulate(&sys, &model, &default_initial_state(4), 500).unwrap();
        assert_eq!(traj.states().len(), traj.disturbances().len() + 1);
        assert!(traj.recursion_error(sys.a_true()) <= 1e-12);
        for t in 0..traj.horizon() {
            assert_eq!(traj.is_attacked(t), traj.disturbances()[t].norm() > 0.0);
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let sys = generate_system(3, 2).unwrap();
        let model = DisturbanceModel::for_dimension(3, 0.5, 2).unwrap();
        let traj = simulate(&sys, &model, &dvector![0.1, -0.2, 0.3], 40).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x_0,x_1,x_2,d_0,d_1,d_2,attacked\n"));
        let back = Trajectory::read_csv(&buf[..]).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn csv_rejects_inconsistent_flag() {
        let text = "t,x_0,d_0,attacked\n0,1.0,0.5,0\n1,1.0,,\n";
        assert!(Trajectory::read_csv(text.as_bytes()).is_err());
        let text = "t,x_0,d_0,attacked\n0,1.0,0.5,1\n1,1.0,,\n";
        assert_eq!(Trajectory::read_csv(text.as_bytes()).unwrap().attack_set(), &[0]);
    }
}
