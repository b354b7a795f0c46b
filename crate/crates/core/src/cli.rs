//! Command-line interface.
//!
//! Every subcommand reads its defaults from the matching top-level table of
//! the `--config` file (`[simulate]`, `[identify]`, `[theory]`,
//! `[baseline]`); experiments come from `[experiment.<name>]` tables.
//! Command-line flags override file values.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::baseline::lse_fit;
use crate::harness::config::{
    default_output_root, load_experiments, parse_init, parse_length_law, ExperimentConfig, PolicySpec, WindowStart,
};
use crate::harness::{resolve_policy, run_experiment};
use crate::linalg::{read_matrix, write_matrix};
use crate::rng::{self, derive_seed};
use crate::sim::{generate_system, simulate, DisturbanceModel, SystemInstance, Trajectory};
use crate::solver::{
    run_blind, run_simulation, write_metrics_csv, CertificateConfig, EstimatorState, RunConfig, RunOutput,
};
use crate::stepsize::StepSizePolicy;
use crate::theory::{report, TheoryParams};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "subgrad-sysid",
    version,
    about = "Online non-smooth identification of linear systems"
)]
pub struct Cli {
    /// TOML file with per-subcommand defaults and experiment tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a system and write a trajectory CSV.
    Simulate(SimulateArgs),
    /// Run one step-size policy on a trajectory file or a fresh simulation.
    Identify(IdentifyArgs),
    /// Run experiments from the config file (or a single one from flags).
    Experiment(ExperimentArgs),
    /// Print burn-in, contraction rate and iterations to accuracy.
    Theory(TheoryArgs),
    /// Fit least squares and compare with the non-smooth estimator.
    Baseline(BaselineArgs),
}

/// Copies each `None` field of `self` from `file`.
trait Merge: Sized {
    fn merge(self, file: Self) -> Self;
}

macro_rules! merge_impl {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl Merge for $ty {
            fn merge(self, file: Self) -> Self {
                Self { $($field: self.$field.or(file.$field),)* }
            }
        }
    };
}

/// Fields shared by the subcommands that can simulate a trajectory.
struct SimSpec {
    n: usize,
    p: f64,
    horizon: usize,
    seed: u64,
    length_law: String,
    x0_norm: Option<f64>,
}

impl SimSpec {
    fn system_seed(&self) -> u64 {
        derive_seed(self.seed, &[0])
    }

    fn run(&self, system: Option<SystemInstance>) -> Result<(SystemInstance, Trajectory)> {
        let system = match system {
            Some(s) => s,
            None => generate_system(self.n, self.system_seed())?,
        };
        let n = system.n();
        let law = parse_length_law(&self.length_law)?;
        let model = DisturbanceModel::new(self.p, 1.0 / (n as f64).sqrt(), law, derive_seed(self.seed, &[1]))?;
        let x0 = match self.x0_norm {
            Some(r) => rng::unit_sphere(&mut rng::seeded(derive_seed(self.seed, &[2])), n) * r,
            None => DVector::zeros(n),
        };
        let traj = simulate(&system, &model, &x0, self.horizon)?;
        Ok((system, traj))
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    /// State dimension.
    #[arg(long)]
    pub n: Option<usize>,
    /// Probability of a nonzero disturbance.
    #[arg(long)]
    pub p: Option<f64>,
    /// Number of transitions.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `gaussian`, `state_scaled` or `fixed=m`.
    #[arg(long)]
    pub length_law: Option<String>,
    /// Start from a random state of this norm instead of the origin.
    #[arg(long)]
    pub x0_norm: Option<f64>,
    /// Use this matrix (CSV rows) instead of a generated one.
    #[arg(long)]
    pub system: Option<PathBuf>,
    /// Trajectory CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Where to write the system matrix.
    #[arg(long)]
    pub system_out: Option<PathBuf>,
}

merge_impl!(SimulateArgs {
    n,
    p,
    horizon,
    seed,
    length_law,
    x0_norm,
    system,
    out,
    system_out
});

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifyArgs {
    /// Trajectory CSV to read instead of simulating.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// True system matrix; enables gap metrics and oracle steps.
    #[arg(long)]
    pub system: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<f64>,
    /// `T̄`; the run performs `T̄ − 1` updates.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub length_law: Option<String>,
    #[arg(long)]
    pub x0_norm: Option<f64>,
    /// `best`, `polyak`, `constant[=β]`, `diminishing[=β₀]` or `backtracking`.
    #[arg(long)]
    pub policy: Option<String>,
    /// Optimal-value estimate for Polyak steps without a known system.
    #[arg(long)]
    pub f_star: Option<f64>,
    /// `zeros` or `gaussian=s`.
    #[arg(long)]
    pub init: Option<String>,
    /// Multiplier for theory-scaled constant and diminishing steps.
    #[arg(long)]
    pub c_scale: Option<f64>,
    /// Stop once the solution gap drops below this.
    #[arg(long)]
    pub early_stop: Option<f64>,
    /// Metrics CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

merge_impl!(IdentifyArgs {
    trajectory,
    system,
    n,
    p,
    horizon,
    seed,
    length_law,
    x0_norm,
    policy,
    f_star,
    init,
    c_scale,
    early_stop,
    out
});

#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    /// Run only this experiment from the config file.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub p: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub policies: Option<Vec<String>>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub trajectories_per_system: Option<usize>,
    #[arg(long)]
    pub base_seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// `theory`, `empirical` or a period.
    #[arg(long)]
    pub window_start: Option<String>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub no_plot: bool,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryArgs {
    /// `σ/λ`; overrides `sigma` and `lambda`.
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub c_burn: Option<f64>,
    #[arg(long)]
    pub c_gamma: Option<f64>,
    /// Initial distance for the iteration count.
    #[arg(long)]
    pub d: Option<f64>,
    /// Target accuracy for the iteration count.
    #[arg(long)]
    pub eps: Option<f64>,
}

merge_impl!(TheoryArgs {
    kappa,
    sigma,
    lambda,
    p,
    rho,
    n,
    delta,
    c_burn,
    c_gamma,
    d,
    eps
});

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineArgs {
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    #[arg(long)]
    pub system: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<f64>,
    /// `T̄`; least squares uses the first `T̄ − 1` transitions.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub length_law: Option<String>,
    #[arg(long)]
    pub x0_norm: Option<f64>,
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Policy for the non-smooth comparison run, or `none`.
    #[arg(long)]
    pub compare: Option<String>,
    /// Where to write the least-squares matrix.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

merge_impl!(BaselineArgs {
    trajectory,
    system,
    n,
    p,
    horizon,
    seed,
    length_law,
    x0_norm,
    ridge,
    compare,
    out
});

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn file_section<T: DeserializeOwned + Default>(config: Option<&Path>, name: &str) -> Result<T> {
    let Some(path) = config else {
        return Ok(T::default());
    };
    let table: toml::Table = toml::from_str(&read_text(path)?).map_err(|e| Error::Config(e.to_string()))?;
    match table.get(name) {
        Some(value) => value
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("[{name}]: {e}"))),
        None => Ok(T::default()),
    }
}

fn load_system(path: &Path) -> Result<SystemInstance> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    SystemInstance::from_matrix(read_matrix(BufReader::new(file))?)
}

fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Trajectory::read_csv(BufReader::new(file))
}

fn write_to(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_matrix_file(path: &Path, a: &DMatrix<f64>) -> Result<()> {
    write_to(path, |w| write_matrix(w, a))
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

/// Parses `argv` and runs; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(cli, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args.merge(file_section(config, "simulate")?), out),
        Command::Identify(args) => cmd_identify(args.merge(file_section(config, "identify")?), out),
        Command::Experiment(args) => cmd_experiment(args, config, out),
        Command::Theory(args) => cmd_theory(args.merge(file_section(config, "theory")?), out),
        Command::Baseline(args) => cmd_baseline(args.merge(file_section(config, "baseline")?), out),
    }
}

fn cmd_simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let spec = SimSpec {
        n: a.n.unwrap_or(5),
        p: a.p.unwrap_or(0.7),
        horizon: a.horizon.unwrap_or(2000),
        seed: a.seed.unwrap_or(0),
        length_law: a.length_law.unwrap_or_else(|| "gaussian".into()),
        x0_norm: a.x0_norm,
    };
    let system = a.system.as_deref().map(load_system).transpose()?;
    let (system, traj) = spec.run(system)?;
    match &a.out {
        Some(path) => write_to(path, |w| traj.write_csv(w))?,
        None => traj.write_csv(&mut &mut *out).map_err(stdout_err)?,
    }
    if let Some(path) = &a.system_out {
        write_matrix_file(path, system.a_true())?;
    }
    if a.out.is_some() {
        writeln!(
            out,
            "n={} horizon={} attacks={} rho={:.6}",
            system.n(),
            traj.horizon(),
            traj.attack_set().len(),
            system.rho()
        )
        .map_err(stdout_err)?;
    }
    Ok(())
}

fn summary_line(policy: &str, n: usize, out: &RunOutput) -> String {
    let m = &out.metrics;
    let mut line = format!("policy={policy} n={n} updates={}", m.records.len());
    if m.final_sol_gap.is_finite() {
        line.push_str(&format!(" final_sol_gap={:.6e}", m.final_sol_gap));
    }
    if let Some(last) = m.records.last() {
        if last.loss_gap.is_finite() {
            line.push_str(&format!(" last_loss_gap={:.6e}", last.loss_gap));
        }
    }
    if let Some(b) = m.empirical_burn_in {
        line.push_str(&format!(" empirical_burn_in={b}"));
    }
    line
}

fn cmd_identify(a: IdentifyArgs, out: &mut dyn Write) -> Result<()> {
    let policy_spec: PolicySpec = a.policy.as_deref().unwrap_or("polyak").parse()?;
    let init = parse_init(a.init.as_deref().unwrap_or("zeros"))?;
    let seed = a.seed.unwrap_or(0);
    let init_seed = derive_seed(seed, &[3]);
    let system = a.system.as_deref().map(load_system).transpose()?;

    let (system, traj) = match &a.trajectory {
        Some(path) => (system, load_trajectory(path)?),
        None => {
            let spec = SimSpec {
                n: a.n.unwrap_or(5),
                p: a.p.unwrap_or(0.7),
                horizon: a.horizon.unwrap_or(2000).max(2) - 1,
                seed,
                length_law: a.length_law.clone().unwrap_or_else(|| "gaussian".into()),
                x0_norm: a.x0_norm,
            };
            let (s, t) = spec.run(system)?;
            (Some(s), t)
        }
    };
    let n = traj.dim();
    let horizon = a.horizon.unwrap_or(traj.horizon() + 1);
    let a_init = EstimatorState::init(n, init, init_seed)?.a_hat;

    let mut exp = ExperimentConfig::new("identify");
    exp.horizon = horizon;
    if let Some(c) = a.c_scale {
        exp.c_scale = c;
    }
    let policy = match &system {
        Some(sys) => {
            let model = DisturbanceModel::for_dimension(n, a.p.unwrap_or(0.7), 0)?;
            resolve_policy(policy_spec, &exp, sys, &model, &a_init)?
        }
        None => match policy_spec {
            PolicySpec::Best => StepSizePolicy::Best,
            PolicySpec::Polyak => StepSizePolicy::Polyak,
            PolicySpec::Backtracking => StepSizePolicy::Backtracking(exp.backtracking),
            PolicySpec::Constant(Some(beta)) => StepSizePolicy::Constant { beta },
            PolicySpec::Diminishing(Some(beta0)) => StepSizePolicy::Diminishing { beta0 },
            PolicySpec::Constant(None) | PolicySpec::Diminishing(None) => {
                return Err(Error::Config(
                    "theory-scaled steps need --system; give an explicit value such as constant=0.01".into(),
                ))
            }
        },
    };

    let mut cfg = RunConfig::new(policy, horizon);
    cfg.init = init;
    cfg.init_seed = init_seed;
    cfg.early_stop_tol = a.early_stop;
    let result = match &system {
        Some(sys) => {
            cfg.certificate = Some(CertificateConfig {
                seed: derive_seed(seed, &[4]),
                ..Default::default()
            });
            run_simulation(sys, &traj, &cfg)?
        }
        None => run_blind(traj.states(), &cfg, a.f_star)?,
    };
    let path = a
        .out
        .unwrap_or_else(|| default_output_root().join(format!("identify_{}_seed{seed}.csv", policy_spec.label())));
    write_to(&path, |w| write_metrics_csv(w, &result.metrics.records))?;
    writeln!(
        out,
        "{} metrics={}",
        summary_line(&policy_spec.label(), n, &result),
        path.display()
    )
    .map_err(stdout_err)?;
    Ok(())
}

fn cmd_experiment(a: ExperimentArgs, config: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let mut configs = match config {
        Some(path) => load_experiments(path)?,
        None => vec![ExperimentConfig::new(
            a.name.clone().unwrap_or_else(|| "default".into()),
        )],
    };
    if let (Some(name), Some(_)) = (&a.name, config) {
        configs.retain(|c| &c.name == name);
        if configs.is_empty() {
            return Err(Error::Config(format!("no experiment named {name:?}")));
        }
    }
    if configs.is_empty() {
        return Err(Error::Config("config file defines no [experiment.<name>] table".into()));
    }
    for cfg in &mut configs {
        if let Some(v) = &a.n {
            cfg.n_list = v.clone();
        }
        if let Some(v) = &a.p {
            cfg.p_list = v.clone();
        }
        if let Some(v) = &a.policies {
            cfg.policies = v.iter().map(|s| s.parse()).collect::<Result<_>>()?;
        }
        if let Some(v) = a.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = a.trials {
            cfg.trials = v;
        }
        if let Some(v) = a.trajectories_per_system {
            cfg.trajectories_per_system = v;
        }
        if let Some(v) = a.base_seed {
            cfg.base_seed = v;
        }
        if let Some(v) = a.workers {
            cfg.workers = v;
        }
        if let Some(v) = &a.window_start {
            cfg.window_start = v.parse::<WindowStart>()?;
        }
        if let Some(v) = &a.output_dir {
            // With a config file the flag names a root holding one directory per
            // experiment.
            cfg.output_dir = if config.is_some() { v.join(&cfg.name) } else { v.clone() };
        }
        if a.no_plot {
            cfg.plot = false;
        }
        cfg.validate()?;
    }
    for cfg in &configs {
        let result = run_experiment(cfg)?;
        for g in &result.groups {
            writeln!(
                out,
                "{} n={} p={} policy={} mean_final_sol_gap={:.6e} mean_lse_sol_gap={:.6e}",
                result.name,
                g.n,
                g.p,
                g.policy.label(),
                g.mean_final_sol_gap(),
                g.mean_lse_sol_gap()
            )
            .map_err(stdout_err)?;
        }
        writeln!(
            out,
            "{}: {} files in {}",
            result.name,
            result.files.len(),
            cfg.output_dir.display()
        )
        .map_err(stdout_err)?;
    }
    Ok(())
}

fn cmd_theory(a: TheoryArgs, out: &mut dyn Write) -> Result<()> {
    let n = a.n.unwrap_or(1);
    let scale = 1.0 / (n.max(1) as f64).sqrt();
    let (sigma, lambda) = match a.kappa {
        Some(k) => (k, 1.0),
        None => (a.sigma.unwrap_or(scale), a.lambda.unwrap_or(scale)),
    };
    let params = TheoryParams {
        p: a.p.unwrap_or(0.5),
        rho: a.rho.unwrap_or(0.5),
        sigma,
        lambda,
        delta: a.delta.unwrap_or(0.05),
        c_burn: a.c_burn.unwrap_or(1.0),
    };
    let r = report(
        &params,
        n,
        a.c_gamma.unwrap_or(1.0),
        a.d.unwrap_or(1.0),
        a.eps.unwrap_or(1e-3),
    )?;
    let t_conv = if r.t_conv.is_finite() {
        format!("{}", r.t_conv.ceil())
    } else {
        "inf".into()
    };
    writeln!(
        out,
        "kappa = {}\nburn_in = {}\ngamma = {:.6}\nt_conv = {}",
        r.kappa, r.burn_in, r.gamma, t_conv
    )
    .map_err(stdout_err)
}

fn cmd_baseline(a: BaselineArgs, out: &mut dyn Write) -> Result<()> {
    let seed = a.seed.unwrap_or(0);
    let system = a.system.as_deref().map(load_system).transpose()?;
    let (system, traj) = match &a.trajectory {
        Some(path) => (system, load_trajectory(path)?),
        None => {
            let spec = SimSpec {
                n: a.n.unwrap_or(5),
                p: a.p.unwrap_or(0.7),
                horizon: a.horizon.unwrap_or(2000).max(2) - 1,
                seed,
                length_law: a.length_law.clone().unwrap_or_else(|| "gaussian".into()),
                x0_norm: a.x0_norm,
            };
            let (s, t) = spec.run(system)?;
            (Some(s), t)
        }
    };
    let periods = a.horizon.map_or(traj.horizon(), |h| h.saturating_sub(1));
    let fit = lse_fit(&traj, periods, a.ridge.unwrap_or(0.0))?;
    let mut line = format!(
        "periods={periods} gram_condition={:.6e} regularized={}",
        fit.gram_condition, fit.regularized
    );
    if let Some(sys) = &system {
        line.push_str(&format!(" lse_sol_gap={:.6e}", (&fit.a_lse - sys.a_true()).norm()));
        let compare = a.compare.as_deref().unwrap_or("polyak");
        if compare != "none" {
            let spec: PolicySpec = compare.parse()?;
            let n = traj.dim();
            let mut exp = ExperimentConfig::new("baseline");
            exp.horizon = periods + 1;
            let model = DisturbanceModel::for_dimension(n, a.p.unwrap_or(0.7), 0)?;
            let policy = resolve_policy(spec, &exp, sys, &model, &DMatrix::zeros(n, n))?;
            let result = run_simulation(sys, &traj, &RunConfig::new(policy, periods + 1))?;
            line.push_str(&format!(
                " nse_sol_gap={:.6e} policy={}",
                result.metrics.final_sol_gap,
                spec.label()
            ));
        }
    }
    if let Some(path) = &a.out {
        write_matrix_file(path, &fit.a_lse)?;
    }
    writeln!(out, "{line}").map_err(stdout_err)
}
