//! Seeded multi-trial experiments, CSV persistence and plots.
//!
//! For every `(n, p)` pair the harness draws `trials` systems, simulates
//! `trajectories_per_system` trajectories on each, and runs every policy on
//! the same trajectories. Seeds depend on the base seed, the pair and the
//! trial index only, so adding a policy leaves the other runs unchanged.

pub mod config;
pub mod plot;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::baseline::lse_fit;
use crate::linalg::fmt_f64;
use crate::rng::{derive_seed, fnv1a};
use crate::sim::{default_initial_state, generate_system, simulate, DisturbanceModel, SystemInstance, Trajectory};
use crate::solver::{run_simulation, write_metrics_csv, CertificateConfig, EstimatorState, RunConfig, StepRecord};
use crate::stepsize::{constant_step, default_prior_distance, diminishing_scale, StepSizePolicy, TheoryScales};
use crate::theory::{burn_in_estimate, TheoryParams};
use crate::{Error, Result};

pub use config::{ExperimentConfig, PolicySpec, WindowStart};

const TAG_SYSTEM: u64 = 0;
const TAG_TRAJECTORY: u64 = 1;
const TAG_CERTIFICATE: u64 = 2;
const TAG_INIT: u64 = 3;

fn group_key(n: usize, p: f64) -> u64 {
    fnv1a(format!("n={n};p={p:?}").as_bytes())
}

/// Seeds for one `(n, p, trial, trajectory)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellSeeds {
    pub system: u64,
    pub trajectory: u64,
    pub certificate: u64,
    pub init: u64,
}

pub fn cell_seeds(base_seed: u64, n: usize, p: f64, trial: usize, trajectory: usize) -> CellSeeds {
    let key = group_key(n, p);
    let t = trial as u64;
    let j = trajectory as u64;
    CellSeeds {
        system: derive_seed(base_seed, &[key, t, TAG_SYSTEM]),
        trajectory: derive_seed(base_seed, &[key, t, TAG_TRAJECTORY, j]),
        certificate: derive_seed(base_seed, &[key, t, TAG_CERTIFICATE, j]),
        init: derive_seed(base_seed, &[key, t, TAG_INIT, j]),
    }
}

/// Scalar outcomes of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub trial: usize,
    pub trajectory: usize,
    pub rho: f64,
    pub final_sol_gap: f64,
    pub window_start: Option<usize>,
    pub min_sol_gap: Option<f64>,
    pub empirical_burn_in: Option<usize>,
    pub log_slope: Option<f64>,
    pub lse_sol_gap: f64,
}

#[derive(Debug, Clone)]
pub struct TrialRun {
    pub summary: TrialSummary,
    pub records: Vec<StepRecord>,
}

/// All runs of one `(n, p, policy)` triple plus the across-trial means.
#[derive(Debug, Clone)]
pub struct GroupResult {
    pub n: usize,
    pub p: f64,
    pub policy: PolicySpec,
    pub runs: Vec<TrialRun>,
    pub mean_sol_gap: Vec<f64>,
    pub mean_loss_gap: Vec<f64>,
}

impl GroupResult {
    pub fn label(&self) -> String {
        format!("n{}_p{}_{}", self.n, self.p, self.policy.label())
    }

    pub fn mean_final_sol_gap(&self) -> f64 {
        mean(self.runs.iter().map(|r| r.summary.final_sol_gap))
    }

    pub fn mean_lse_sol_gap(&self) -> f64 {
        mean(self.runs.iter().map(|r| r.summary.lse_sol_gap))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Arithmetic mean per period, in trial order.
pub fn mean_series(series: &[Vec<f64>]) -> Vec<f64> {
    let len = series.iter().map(Vec::len).min().unwrap_or(0);
    (0..len).map(|t| mean(series.iter().map(|s| s[t]))).collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub name: String,
    pub groups: Vec<GroupResult>,
    pub files: Vec<PathBuf>,
}

/// Builds the step-size rule for one trial. Theory-scaled rules use
/// `D = ‖Â^(1)‖_F + √n`, `σ` from the model and `T_burn = 1`.
pub fn resolve_policy(
    spec: PolicySpec,
    cfg: &ExperimentConfig,
    system: &SystemInstance,
    model: &DisturbanceModel,
    a_init: &nalgebra::DMatrix<f64>,
) -> Result<StepSizePolicy> {
    let scales = || TheoryScales {
        d: default_prior_distance(a_init),
        rho: system.rho(),
        sigma: model.sigma,
        t_burn: 1,
        t_bar: cfg.horizon as u64,
        c_scale: cfg.c_scale,
    };
    Ok(match spec {
        PolicySpec::Best => StepSizePolicy::Best,
        PolicySpec::Polyak => StepSizePolicy::Polyak,
        PolicySpec::Backtracking => StepSizePolicy::Backtracking(cfg.backtracking),
        PolicySpec::Constant(Some(beta)) => StepSizePolicy::Constant { beta },
        PolicySpec::Constant(None) => StepSizePolicy::Constant {
            beta: constant_step(&scales()),
        },
        PolicySpec::Diminishing(Some(beta0)) => StepSizePolicy::Diminishing { beta0 },
        PolicySpec::Diminishing(None) => StepSizePolicy::Diminishing {
            beta0: diminishing_scale(&scales())?,
        },
    })
}

struct Cell {
    n: usize,
    p: f64,
    trial: usize,
    trajectory: usize,
}

fn run_cell(cfg: &ExperimentConfig, cell: &Cell) -> Result<Vec<TrialRun>> {
    let seeds = cell_seeds(cfg.base_seed, cell.n, cell.p, cell.trial, cell.trajectory);
    let system = generate_system(cell.n, seeds.system)?;
    let sigma = 1.0 / (cell.n as f64).sqrt();
    let model = DisturbanceModel::new(cell.p, sigma, cfg.length_law, seeds.trajectory)?;
    let traj: Trajectory = simulate(&system, &model, &default_initial_state(cell.n), cfg.horizon - 1)?;
    let lse = lse_fit(&traj, cfg.horizon - 1, cfg.ridge)?;
    let lse_sol_gap = (&lse.a_lse - system.a_true()).norm();
    let a_init = EstimatorState::init(cell.n, cfg.init, seeds.init)?.a_hat;

    let fixed_window = match cfg.window_start {
        WindowStart::Fixed(k) => Some(k),
        WindowStart::Theory => {
            let params = TheoryParams::for_dimension(cell.n, cell.p, system.rho());
            Some(usize::try_from(burn_in_estimate(&params, cell.n)).unwrap_or(usize::MAX))
        }
        WindowStart::Empirical => None,
    };

    cfg.policies
        .iter()
        .map(|&spec| {
            let mut run_cfg = RunConfig::new(resolve_policy(spec, cfg, &system, &model, &a_init)?, cfg.horizon);
            run_cfg.init = cfg.init;
            run_cfg.init_seed = seeds.init;
            run_cfg.window_start = fixed_window.unwrap_or(1);
            run_cfg.slope_window = cfg.slope_window;
            run_cfg.certificate = cfg.certificate.then_some(CertificateConfig {
                n_dirs: cfg.certificate_dirs,
                seed: seeds.certificate,
                streak: cfg.certificate_streak,
            });
            let out = run_simulation(&system, &traj, &run_cfg)?;
            let m = out.metrics;
            let window_start = fixed_window.or(m.empirical_burn_in);
            let min_sol_gap = window_start.and_then(|w| m.min_sol_gap_from(w));
            Ok(TrialRun {
                summary: TrialSummary {
                    trial: cell.trial,
                    trajectory: cell.trajectory,
                    rho: system.rho(),
                    final_sol_gap: m.final_sol_gap,
                    window_start,
                    min_sol_gap,
                    empirical_burn_in: m.empirical_burn_in,
                    log_slope: m.log_slope,
                    lse_sol_gap,
                },
                records: m.records,
            })
        })
        .collect()
}

/// Runs every cell; results are ordered by `(n, p, policy, trial,
/// trajectory)` regardless of scheduling.
pub fn compute(cfg: &ExperimentConfig) -> Result<Vec<GroupResult>> {
    cfg.validate()?;
    let pairs: Vec<(usize, f64)> = cfg
        .n_list
        .iter()
        .flat_map(|&n| cfg.p_list.iter().map(move |&p| (n, p)))
        .collect();
    let cells: Vec<Cell> = pairs
        .iter()
        .flat_map(|&(n, p)| {
            (0..cfg.trials).flat_map(move |trial| {
                (0..cfg.trajectories_per_system).map(move |trajectory| Cell {
                    n,
                    p,
                    trial,
                    trajectory,
                })
            })
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<Vec<TrialRun>> =
        pool.install(|| cells.par_iter().map(|cell| run_cell(cfg, cell)).collect::<Result<_>>())?;

    let per_pair = cfg.trials * cfg.trajectories_per_system;
    let mut groups = Vec::new();
    for (k, &(n, p)) in pairs.iter().enumerate() {
        let cell_runs = &results[k * per_pair..(k + 1) * per_pair];
        for (j, &policy) in cfg.policies.iter().enumerate() {
            let runs: Vec<TrialRun> = cell_runs.iter().map(|r| r[j].clone()).collect();
            let sol: Vec<Vec<f64>> = runs
                .iter()
                .map(|r| r.records.iter().map(|x| x.sol_gap).collect())
                .collect();
            let loss: Vec<Vec<f64>> = runs
                .iter()
                .map(|r| r.records.iter().map(|x| x.loss_gap).collect())
                .collect();
            groups.push(GroupResult {
                n,
                p,
                policy,
                mean_sol_gap: mean_series(&sol),
                mean_loss_gap: mean_series(&loss),
                runs,
            });
        }
    }
    Ok(groups)
}

pub const MEAN_HEADER: &str = "T,sol_gap,loss_gap";
pub const SUMMARY_HEADER: &str =
    "n,p,policy,trial,trajectory,rho,final_sol_gap,window_start,min_sol_gap,empirical_burn_in,log_slope,lse_sol_gap";

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn opt_usize(v: Option<usize>) -> String {
    v.map(|k| k.to_string()).unwrap_or_default()
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn write_mean_csv<W: Write>(out: &mut W, group: &GroupResult) -> std::io::Result<()> {
    writeln!(out, "{MEAN_HEADER}")?;
    for (t, (s, l)) in group.mean_sol_gap.iter().zip(&group.mean_loss_gap).enumerate() {
        writeln!(out, "{},{},{}", t + 1, fmt_f64(*s), fmt_f64(*l))?;
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(out: &mut W, groups: &[GroupResult]) -> std::io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for g in groups {
        for r in &g.runs {
            let s = &r.summary;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                g.n,
                g.p,
                g.policy.label(),
                s.trial,
                s.trajectory,
                fmt_f64(s.rho),
                fmt_f64(s.final_sol_gap),
                opt_usize(s.window_start),
                opt_f64(s.min_sol_gap),
                opt_usize(s.empirical_burn_in),
                opt_f64(s.log_slope),
                fmt_f64(s.lse_sol_gap)
            )?;
        }
    }
    Ok(())
}

fn series_of(values: &[f64]) -> Vec<(f64, f64)> {
    values.iter().enumerate().map(|(t, &v)| ((t + 1) as f64, v)).collect()
}

fn gap_plot(title: &str, curves: &[(&str, &GroupResult)]) -> String {
    let panel = |name: &str, pick: fn(&GroupResult) -> &Vec<f64>| plot::Panel {
        title: format!("average {name}"),
        y_label: name.into(),
        series: curves
            .iter()
            .map(|(label, g)| plot::Series {
                label: (*label).into(),
                points: series_of(pick(g)),
            })
            .collect(),
    };
    plot::render_svg(
        title,
        &[
            panel("sol_gap", |g| &g.mean_sol_gap),
            panel("loss_gap", |g| &g.mean_loss_gap),
        ],
    )
}

/// Writes per-run metrics, per-group means, `summary.csv` and plots.
pub fn write_outputs(cfg: &ExperimentConfig, groups: &[GroupResult]) -> Result<Vec<PathBuf>> {
    let dir = &cfg.output_dir;
    let trials_dir = dir.join("trials");
    fs::create_dir_all(&trials_dir).map_err(|e| Error::io(&trials_dir, e))?;
    let mut files = Vec::new();

    for g in groups {
        for r in &g.runs {
            let path = trials_dir.join(format!(
                "{}_t{:03}_j{:02}.csv",
                g.label(),
                r.summary.trial,
                r.summary.trajectory
            ));
            write_file(&path, |w| write_metrics_csv(w, &r.records))?;
            files.push(path);
        }
        let path = dir.join(format!("mean_{}.csv", g.label()));
        write_file(&path, |w| write_mean_csv(w, g))?;
        files.push(path);
    }
    let path = dir.join("summary.csv");
    write_file(&path, |w| write_summary_csv(w, groups))?;
    files.push(path);

    if cfg.plot {
        let mut plots: Vec<(PathBuf, String)> = Vec::new();
        for &n in &cfg.n_list {
            for &p in &cfg.p_list {
                let curves: Vec<(String, &GroupResult)> = groups
                    .iter()
                    .filter(|g| g.n == n && g.p == p)
                    .map(|g| (g.policy.label(), g))
                    .collect();
                let refs: Vec<(&str, &GroupResult)> = curves.iter().map(|(l, g)| (l.as_str(), *g)).collect();
                plots.push((
                    dir.join(format!("plot_n{n}_p{p}.svg")),
                    gap_plot(&format!("{}: n = {n}, p = {p}", cfg.name), &refs),
                ));
            }
        }
        if cfg.n_list.len() * cfg.p_list.len() > 1 {
            for policy in &cfg.policies {
                let curves: Vec<(String, &GroupResult)> = groups
                    .iter()
                    .filter(|g| g.policy == *policy)
                    .map(|g| (format!("n = {}, p = {}", g.n, g.p), g))
                    .collect();
                let refs: Vec<(&str, &GroupResult)> = curves.iter().map(|(l, g)| (l.as_str(), *g)).collect();
                plots.push((
                    dir.join(format!("plot_{}.svg", policy.label())),
                    gap_plot(&format!("{}: {}", cfg.name, policy.label()), &refs),
                ));
            }
        }
        for (path, svg) in plots {
            fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
            files.push(path);
        }
    }
    Ok(files)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let groups = compute(cfg)?;
    let files = write_outputs(cfg, &groups)?;
    Ok(ExperimentResult {
        name: cfg.name.clone(),
        groups,
        files,
    })
}
