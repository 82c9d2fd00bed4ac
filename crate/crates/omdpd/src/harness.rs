//! Experiment driver: expands a config into (cost mode, seed) cells, solves
//! the offline baseline, runs the learner, and writes CSV traces and SVG
//! summary plots.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::algo::{run_omdpd, RunOptions};
use crate::cmdp::{ExtendedOccupancy, TabularCmdp};
use crate::config::Config;
use crate::env::{adversarial_cost_stream, CostMode, EnvConfig, Simulator};
use crate::error::{Error, Result};
use crate::metrics::{
    compute_regret, compute_violation, fit_power_exponent, fit_sqrt_coefficient, mean_series,
    ViolationMode,
};
use crate::plot::{write_chart, Curve};
use crate::polytope::solve_baseline_lp;
use crate::trace::{write_csv, RunTrace};

/// Exit codes of the experiment driver.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

/// Offline baseline for one cell. In adversarial mode the comparator must
/// satisfy every episode's cost constraint; if that intersection is empty
/// the driver falls back to the mean cost vector and flags it.
pub struct BaselineResult {
    pub occupancy: ExtendedOccupancy,
    pub value: f64,
    pub fallback: bool,
}

pub fn solve_cell_baseline(
    env: &TabularCmdp,
    env_cfg: &EnvConfig,
    episodes: usize,
) -> Result<BaselineResult> {
    match env_cfg.cost_mode {
        CostMode::Stochastic => {
            let (occupancy, value) = solve_baseline_lp(env, &[(env.mean_cost.clone(), 0.0)])?;
            Ok(BaselineResult {
                occupancy,
                value,
                fallback: false,
            })
        }
        CostMode::Adversarial => {
            let mut constraints = Vec::with_capacity(episodes);
            for k in 1..=episodes {
                constraints.push((adversarial_cost_stream(env_cfg, k as u64)?, 0.0));
            }
            match solve_baseline_lp(env, &constraints) {
                Ok((occupancy, value)) => Ok(BaselineResult {
                    occupancy,
                    value,
                    fallback: false,
                }),
                Err(Error::Infeasible(_)) => {
                    let n = env.dims.marginal_len();
                    let mut mean = vec![0.0; n];
                    for (c, _) in &constraints {
                        for (m, &v) in mean.iter_mut().zip(c) {
                            *m += v;
                        }
                    }
                    for m in mean.iter_mut() {
                        *m /= episodes as f64;
                    }
                    let (occupancy, value) = solve_baseline_lp(env, &[(mean, 0.0)])?;
                    Ok(BaselineResult {
                        occupancy,
                        value,
                        fallback: true,
                    })
                }
                Err(e) => Err(e),
            }
        }
    }
}

/// Completed cell: trace plus derived series.
pub struct CellResult {
    pub mode: CostMode,
    pub seed: u64,
    pub trace: RunTrace,
    pub baseline_value: f64,
    pub baseline_fallback: bool,
    pub cum_regret: Vec<f64>,
    pub cum_violation: Vec<f64>,
}

fn mode_name(mode: CostMode) -> &'static str {
    match mode {
        CostMode::Stochastic => "stochastic",
        CostMode::Adversarial => "adversarial",
    }
}

/// Runs one (mode, seed) cell end to end.
pub fn run_cell(cfg: &Config, mode: CostMode, seed: u64) -> Result<CellResult> {
    let env_cfg = cfg.env_config(mode, seed);
    let mut sim = Simulator::from_config(env_cfg.clone())?;
    let baseline = solve_cell_baseline(&sim.env, &env_cfg, cfg.run.episodes)?;
    let mut opts = RunOptions::new(cfg.params()?);
    opts.reference_occupancy = Some(baseline.occupancy.clone());
    let trace = run_omdpd(&mut sim, &opts)?;
    let rewards: Vec<f64> = trace.records.iter().map(|r| r.value_reward_true).collect();
    let costs: Vec<f64> = trace.records.iter().map(|r| r.value_cost_true).collect();
    Ok(CellResult {
        mode,
        seed,
        cum_regret: compute_regret(baseline.value, &rewards),
        cum_violation: compute_violation(&costs, ViolationMode::Strong),
        baseline_value: baseline.value,
        baseline_fallback: baseline.fallback,
        trace,
    })
}

fn thread_count() -> usize {
    std::env::var("OMDPD_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Runs all cells, possibly in parallel; output order is deterministic.
pub fn run_all_cells(cfg: &Config) -> Result<Vec<CellResult>> {
    let cells = cfg.cells();
    let threads = thread_count().min(cells.len().max(1));
    if threads <= 1 {
        return cells
            .iter()
            .map(|&(mode, seed)| run_cell(cfg, mode, seed))
            .collect();
    }
    let slots: Vec<Mutex<Option<Result<CellResult>>>> =
        cells.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for t in 0..threads {
            let slots = &slots;
            let cells = &cells;
            scope.spawn(move || {
                for i in (t..cells.len()).step_by(threads) {
                    let (mode, seed) = cells[i];
                    *slots[i].lock().unwrap() = Some(run_cell(cfg, mode, seed));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("cell not executed"))
        .collect()
}

fn plot_metric(
    path: &Path,
    title: &str,
    y_label: &str,
    results: &[CellResult],
    select: impl Fn(&CellResult) -> &Vec<f64>,
) -> Result<()> {
    let mut curves = Vec::new();
    for mode in [CostMode::Stochastic, CostMode::Adversarial] {
        let series: Vec<Vec<f64>> = results
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| select(r).clone())
            .collect();
        if series.is_empty() {
            continue;
        }
        let mean = mean_series(&series);
        let coeff = fit_sqrt_coefficient(&mean);
        let reference: Vec<f64> = (1..=mean.len())
            .map(|k| coeff * (k as f64).sqrt())
            .collect();
        curves.push(Curve {
            label: format!("{} (mean of {} seeds)", mode_name(mode), series.len()),
            values: mean,
            dashed: false,
        });
        curves.push(Curve {
            label: format!("{:.3} * sqrt(k) reference", coeff),
            values: reference,
            dashed: true,
        });
    }
    let mut buf = Vec::new();
    write_chart(&mut buf, title, y_label, &curves)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Full experiment: all cells, CSV traces, and the two summary plots.
/// Returns the process exit code.
pub fn run_experiment(cfg: &Config, out_dir: Option<&Path>, quiet: bool) -> Result<i32> {
    let dir: PathBuf = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    fs::create_dir_all(&dir)?;
    let results = run_all_cells(cfg)?;

    let mut any_fallback = false;
    let mut any_abort = false;
    let stdout = std::io::stdout();
    for r in &results {
        let name = dir.join(format!("trace_{}_{}.csv", mode_name(r.mode), r.seed));
        let mut buf = Vec::new();
        write_csv(&mut buf, &r.trace, &r.cum_regret, &r.cum_violation)?;
        fs::write(&name, buf)?;
        any_fallback |= r.baseline_fallback;
        any_abort |= r.trace.aborted.is_some();
        if !quiet {
            let mut lock = stdout.lock();
            let k = r.trace.records.len();
            writeln!(
                lock,
                "{} seed={} episodes={} baseline={:.6}{} regret={:.3} violation={:.3} gamma_v={:.3}{}",
                mode_name(r.mode),
                r.seed,
                k,
                r.baseline_value,
                if r.baseline_fallback { " (fallback)" } else { "" },
                r.cum_regret.last().copied().unwrap_or(0.0),
                r.cum_violation.last().copied().unwrap_or(0.0),
                fit_power_exponent(&r.cum_violation),
                r.trace
                    .aborted
                    .as_deref()
                    .map(|m| format!(" ABORTED: {m}"))
                    .unwrap_or_default(),
            )?;
        }
    }
    plot_metric(
        &dir.join("violation.svg"),
        "Cumulative strong constraint violation",
        "cumulative violation",
        &results,
        |r| &r.cum_violation,
    )?;
    plot_metric(
        &dir.join("regret.svg"),
        "Cumulative regret",
        "cumulative regret",
        &results,
        |r| &r.cum_regret,
    )?;

    Ok(if any_abort {
        EXIT_SOLVER
    } else if any_fallback {
        EXIT_INFEASIBLE
    } else {
        EXIT_OK
    })
}

/// Diagnostic suite behind the `check` subcommand: reruns every cell with
/// good-event tracking enabled and prints one verdict line per cell (drift
/// inequality, good event, comparator feasibility against the optimistic
/// cost, violation sublinearity fit on the second half).
pub fn run_check(cfg: &Config) -> Result<i32> {
    let params = cfg.params()?;
    println!(
        "config ok: {} cells, K={}, alpha={:.6e}, beta={:.6e}, C={}",
        cfg.cells().len(),
        params.k_total,
        params.alpha,
        params.beta,
        params.c
    );
    for (mode, seed) in cfg.cells() {
        let env_cfg = cfg.env_config(mode, seed);
        let mut sim = Simulator::from_config(env_cfg.clone())?;
        let baseline = solve_cell_baseline(&sim.env, &env_cfg, cfg.run.episodes)?;
        let mut opts = RunOptions::new(cfg.params()?);
        opts.reference_occupancy = Some(baseline.occupancy.clone());
        opts.track_good_event = true;
        let trace = run_omdpd(&mut sim, &opts)?;
        let costs: Vec<f64> = trace.records.iter().map(|r| r.value_cost_true).collect();
        let violation = compute_violation(&costs, ViolationMode::Strong);
        let gamma = fit_power_exponent(&violation);
        let drift_ok = trace.records.iter().all(|r| r.drift_ok);
        let good = trace.records.iter().all(|r| r.good_event.unwrap_or(true));
        let feasibility = trace
            .records
            .iter()
            .filter_map(|r| r.dtilde_qstar)
            .fold(f64::NEG_INFINITY, f64::max);
        println!(
            "{} seed={}: drift={} good_event={} comparator_max_dq={:.3e} gamma_v={:.3} sublinear={}{}",
            mode_name(mode),
            seed,
            if drift_ok { "ok" } else { "VIOLATED" },
            if good { "held" } else { "failed" },
            feasibility,
            gamma,
            if gamma <= 0.75 { "pass" } else { "FAIL" },
            trace
                .aborted
                .as_deref()
                .map(|m| format!(" ABORTED: {m}"))
                .unwrap_or_default(),
        );
    }
    Ok(EXIT_OK)
}

/// Maps an error to the documented process exit code.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::Infeasible(_) | Error::Unbounded(_) => EXIT_INFEASIBLE,
        Error::Convergence { .. } => EXIT_SOLVER,
        _ => 1,
    }
}
