//! The four verbs: `run`, `baseline`, `sweep` and `reference`.

use std::path::Path;

use hpinn_core::hpinn::{error_report, march, StepDiagnostics, Trajectory};
use hpinn_core::refsolver::{solve, to_csv, Snapshots, SolverConfig};
use hpinn_core::PdeSpec;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{cell_seed, ExperimentConfig};
use crate::output::{profile_csv, resample, time_tag, write_atomic, JsonLines};
use crate::CliError;

#[derive(Debug, Clone, Copy)]
struct Variant {
    label: &'static str,
    column: &'static str,
    hybrid: bool,
}

const HPINN: Variant = Variant {
    label: "hpinn",
    column: "u_hpinn",
    hybrid: true,
};

const BASELINE: Variant = Variant {
    label: "baseline",
    column: "u_pinn_baseline",
    hybrid: false,
};

#[derive(Serialize)]
struct ConfigRecord<'a> {
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct StepRecord<'a> {
    run: &'a str,
    step: usize,
    t: f64,
    iterations: usize,
    converged: bool,
    final_loss: f64,
    l_pde: f64,
    l_bc: f64,
    flagged_cells: usize,
    lambda: f64,
    wall_time: f64,
}

impl<'a> StepRecord<'a> {
    fn new(run: &'a str, d: &StepDiagnostics) -> Self {
        Self {
            run,
            step: d.step,
            t: d.t,
            iterations: d.iterations,
            converged: d.converged,
            final_loss: d.final_loss.total,
            l_pde: d.final_loss.l_pde,
            l_bc: d.final_loss.l_bc,
            flagged_cells: d.flagged_cells,
            lambda: d.lambda,
            wall_time: d.wall_time,
        }
    }
}

#[derive(Serialize)]
struct FailureRecord<'a> {
    run: &'a str,
    error: String,
}

/// Per-variant result of a run: errors at every step time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub label: String,
    pub errors: Vec<(f64, f64)>,
    pub converged: bool,
    pub total_iterations: usize,
}

fn reference_solution(
    cfg: &ExperimentConfig,
    pde: &PdeSpec,
    times: Vec<f64>,
) -> Result<Snapshots, CliError> {
    let mut solver = SolverConfig::new(pde.clone(), times);
    solver.settings = cfg.reference;
    solver.weno = cfg.discretization.weno;
    Ok(solve(solver)?)
}

fn march_variant(
    cfg: &ExperimentConfig,
    pde: &PdeSpec,
    variant: Variant,
    log: &mut JsonLines,
) -> Result<Trajectory, CliError> {
    let mut disc = cfg.discretization.clone();
    disc.t_final = cfg.end_time();
    disc.hybrid = variant.hybrid;
    let net = cfg.network.to_config(disc.q);
    let result = march(pde, &disc, &net, &cfg.training, |d| {
        eprintln!(
            "[{}] step {} t={:.3} iterations={} loss={:.3e} flagged={} converged={} ({:.1}s)",
            variant.label,
            d.step,
            d.t,
            d.iterations,
            d.final_loss.total,
            d.flagged_cells,
            d.converged,
            d.wall_time
        );
        log.push(&StepRecord::new(variant.label, d));
    });
    result.map_err(|e| {
        log.push(&FailureRecord {
            run: variant.label,
            error: e.to_string(),
        });
        CliError::from(e)
    })
}

fn execute(
    cfg: &ExperimentConfig,
    variants: &[Variant],
    prefix: &str,
) -> Result<Vec<VariantSummary>, CliError> {
    cfg.validate()?;
    let dir = cfg.outputs.directory.as_path();
    let pde = cfg.pde.to_spec();
    let step_times: Vec<f64> = {
        let mut d = cfg.discretization.clone();
        d.t_final = cfg.end_time();
        (1..=d.steps()?).map(|k| k as f64 * d.dt).collect()
    };
    let mut log = JsonLines::default();
    log.push(&ConfigRecord { config: cfg });
    let mut trajectories = Vec::new();
    for &v in variants {
        match march_variant(cfg, &pde, v, &mut log) {
            Ok(t) => trajectories.push(t),
            Err(e) => {
                log.write(&dir.join(format!("{prefix}diagnostics.jsonl")))?;
                return Err(e);
            }
        }
    }
    log.write(&dir.join(format!("{prefix}diagnostics.jsonl")))?;
    let reference = reference_solution(cfg, &pde, step_times.clone())?;

    for &t in &cfg.profile_times() {
        let r = reference
            .at(t)
            .ok_or_else(|| CliError::Config(format!("no reference snapshot at t = {t}")))?;
        let fields: Vec<_> = trajectories
            .iter()
            .map(|tr| tr.at(t).expect("profile time lies on the step grid"))
            .collect();
        let grid = fields[0];
        let u_ref = resample(r, grid);
        let mut columns: Vec<(&str, &[f64])> = variants
            .iter()
            .zip(&fields)
            .map(|(v, f)| (v.column, f.values.as_slice()))
            .collect();
        columns.push(("u_ref", &u_ref));
        let csv = profile_csv(&grid.coordinates(), &columns);
        write_atomic(&dir.join(format!("{prefix}profile_t{}.csv", time_tag(t))), &csv)?;
    }

    let mut summaries = Vec::new();
    for (v, tr) in variants.iter().zip(&trajectories) {
        let errors = error_report(tr, &reference)?
            .into_iter()
            .map(|e| (e.t, e.rel_error))
            .collect();
        summaries.push(VariantSummary {
            label: v.label.to_string(),
            errors,
            converged: tr.converged(),
            total_iterations: tr.total_iterations(),
        });
        write_atomic(
            &dir.join(format!("{prefix}{}_network.json", v.label)),
            &tr.params.to_checkpoint_string(),
        )?;
    }
    let mut errors = String::from("t");
    for v in variants {
        errors.push_str(&format!(",rel_error_{}", v.label));
    }
    errors.push('\n');
    for (k, &t) in step_times.iter().enumerate() {
        errors.push_str(&format!("{t}"));
        for s in &summaries {
            errors.push_str(&format!(",{:e}", s.errors[k].1));
        }
        errors.push('\n');
    }
    write_atomic(&dir.join(format!("{prefix}errors.csv")), &errors)?;
    Ok(summaries)
}

/// hPINN march plus reference solve; the baseline too if configured.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<VariantSummary>, CliError> {
    if cfg.outputs.include_baseline {
        execute(cfg, &[HPINN, BASELINE], "")
    } else {
        execute(cfg, &[HPINN], "")
    }
}

/// The same pipeline with the hybrid switch off: the plain discrete-time PINN.
pub fn baseline(cfg: &ExperimentConfig) -> Result<Vec<VariantSummary>, CliError> {
    execute(cfg, &[BASELINE], "baseline_")
}

/// Reference solutions alone, one `x,u` file per profile time.
pub fn reference(cfg: &ExperimentConfig) -> Result<(), CliError> {
    cfg.validate()?;
    let pde = cfg.pde.to_spec();
    let snaps = reference_solution(cfg, &pde, cfg.profile_times())?;
    for (t, field) in snaps.times.iter().zip(&snaps.fields) {
        let path = cfg
            .outputs
            .directory
            .join(format!("reference_t{}.csv", time_tag(*t)));
        write_atomic(&path, &to_csv(field))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub q: usize,
    pub dt: f64,
    pub nu: f64,
    pub rel_error: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

impl SweepRow {
    fn csv_line(&self) -> String {
        let err = self
            .error
            .as_deref()
            .unwrap_or("")
            .replace([',', '\n', '"'], " ");
        format!(
            "{},{},{:e},{},{},{},{}\n",
            self.q,
            self.dt,
            self.nu,
            self.rel_error.map_or(String::new(), |e| format!("{e:e}")),
            self.iterations,
            self.converged,
            err
        )
    }
}

fn sweep_cell(
    base: &ExperimentConfig,
    q: usize,
    dt: f64,
    nu: f64,
    reference: &Snapshots,
) -> (SweepRow, Vec<StepDiagnostics>) {
    let mut cfg = base.clone();
    cfg.discretization.q = q;
    cfg.discretization.dt = dt;
    cfg.pde.viscosity = nu;
    cfg.network.seed = cell_seed(base.network.seed, q, dt, nu);
    let t_final = cfg.discretization.t_final;
    let mut row = SweepRow {
        q,
        dt,
        nu,
        rel_error: None,
        iterations: 0,
        converged: false,
        error: None,
    };
    let pde = cfg.pde.to_spec();
    let net = cfg.network.to_config(q);
    let outcome = march(&pde, &cfg.discretization, &net, &cfg.training, |d| {
        eprintln!(
            "[q={q} dt={dt} nu={nu:e}] step {} iterations={} loss={:.3e} converged={}",
            d.step, d.iterations, d.final_loss.total, d.converged
        );
    });
    let traj = match outcome {
        Ok(t) => t,
        Err(e) => {
            row.error = Some(e.to_string());
            return (row, Vec::new());
        }
    };
    row.iterations = traj.total_iterations();
    row.converged = traj.converged();
    match (traj.at(t_final), reference.at(t_final)) {
        (Some(p), Some(r)) => match hpinn_core::refsolver::relative_error(p, r) {
            Ok(e) => row.rel_error = Some(e),
            Err(e) => row.error = Some(e.to_string()),
        },
        _ => row.error = Some(format!("no solution at t = {t_final}")),
    }
    (row, traj.diagnostics)
}

/// One hPINN march per `(nu, q, dt)` cell, up to `jobs` at a time; cell
/// failures are recorded in their row.
pub fn sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<SweepRow>, CliError> {
    cfg.validate()?;
    let t_final = cfg.discretization.t_final;
    let references: Vec<(f64, Snapshots)> = cfg
        .sweep
        .viscosity
        .iter()
        .map(|&nu| {
            let mut pde = cfg.pde.clone();
            pde.viscosity = nu;
            reference_solution(cfg, &pde.to_spec(), vec![t_final]).map(|s| (nu, s))
        })
        .collect::<Result<_, _>>()?;
    let cells: Vec<(usize, f64, usize)> = references
        .iter()
        .enumerate()
        .flat_map(|(k, _)| {
            cfg.sweep
                .q
                .iter()
                .flat_map(move |&q| cfg.sweep.dt.iter().map(move |&dt| (q, dt, k)))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    let results: Vec<(SweepRow, Vec<StepDiagnostics>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(q, dt, k)| sweep_cell(cfg, q, dt, references[k].0, &references[k].1))
            .collect()
    });

    let dir = cfg.outputs.directory.as_path();
    let mut log = JsonLines::default();
    log.push(&ConfigRecord { config: cfg });
    let mut csv = String::from("q,dt,nu,rel_error,iterations,converged,error\n");
    for (row, diags) in &results {
        csv.push_str(&row.csv_line());
        let label = format!("q={},dt={},nu={:e}", row.q, row.dt, row.nu);
        for d in diags {
            log.push(&StepRecord::new(&label, d));
        }
        if let Some(e) = &row.error {
            log.push(&FailureRecord {
                run: &label,
                error: e.clone(),
            });
        }
    }
    write_atomic(&dir.join("sweep.csv"), &csv)?;
    log.write(&dir.join("sweep_diagnostics.jsonl"))?;
    Ok(results.into_iter().map(|(r, _)| r).collect())
}

/// Loads `path`, or the built-in defaults when no path is given.
pub fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}
