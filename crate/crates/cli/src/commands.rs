//! The three subcommands, callable in-process.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;
use utmost_core::model::{orientation_to_angles, scale_criterion};
use utmost_core::par::Execution;
use utmost_core::sanity::{self, Tolerances};
use utmost_core::sim::{
    layout_rng, optimal_placement, random_placement, run_monte_carlo, uniform_placement, MeasurementModel, Placement, SimReport,
    SimScenario,
};
use utmost_core::{solve, theoretical_optimum, Criterion, Error, PlacementResult};

use crate::config::{self, PlacementName, SimPlan};
use crate::error::{CliError, CliResult};
use crate::output::{fmt_f64, matrix_rows, to_json, write_file};

#[derive(Debug, Serialize)]
struct AnglesOut {
    azimuth: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    elevation: Option<f64>,
}

#[derive(Debug, Serialize)]
struct DiagnosticsOut {
    max_x_mm_increase: f64,
    max_h_mm_increase: f64,
    x_mm_iterations: usize,
    h_mm_iterations: usize,
    degenerate_row_events: usize,
    degenerate_fim_iterations: usize,
    rho_changes: usize,
    final_rho: f64,
}

#[derive(Debug, Serialize)]
struct SolveOut {
    command: &'static str,
    model: &'static str,
    m: usize,
    n: usize,
    criterion: String,
    termination: &'static str,
    iterations: usize,
    /// Criterion of `(HᵀΦᵀR⁻¹ΦH)⁻¹`.
    objective: f64,
    /// The same criterion of the model CRLB.
    model_objective: f64,
    initial_objective: f64,
    primal_residual: f64,
    dual_residual: f64,
    row_norms: Vec<f64>,
    h: Vec<Vec<f64>>,
    angles: Vec<AnglesOut>,
    diagnostics: DiagnosticsOut,
    wall_time: f64,
}

fn diagnostics(res: &PlacementResult) -> DiagnosticsOut {
    let d = &res.diagnostics;
    DiagnosticsOut {
        max_x_mm_increase: d.max_x_mm_increase,
        max_h_mm_increase: d.max_h_mm_increase,
        x_mm_iterations: d.x_mm_iterations,
        h_mm_iterations: d.h_mm_iterations,
        degenerate_row_events: d.degenerate_row_events,
        degenerate_fim_iterations: d.degenerate_fim_iterations,
        rho_changes: d.rho_changes,
        final_rho: d.final_rho,
    }
}

pub fn trace_csv(res: &PlacementResult) -> String {
    let mut s = String::from("iter,objective,primal_residual,dual_residual\n");
    for t in &res.trace {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            t.iter,
            fmt_f64(t.objective),
            fmt_f64(t.primal_residual),
            fmt_f64(t.dual_residual)
        );
    }
    s
}

/// Renders the result document of a finished solve.
pub fn solve_document(v: &config::Validated, res: &PlacementResult) -> CliResult<String> {
    let angles = orientation_to_angles(&res.h_opt)?
        .into_iter()
        .map(|a| AnglesOut {
            azimuth: a.azimuth,
            elevation: a.elevation,
        })
        .collect();
    let out = SolveOut {
        command: "solve",
        model: v.spec.kind.name(),
        m: v.spec.m,
        n: v.spec.n,
        criterion: v.criterion.to_string(),
        termination: res.termination.as_str(),
        iterations: res.iterations,
        objective: res.objective,
        model_objective: scale_criterion(res.objective, v.criterion, v.spec.crlb_scale(), v.spec.n),
        initial_objective: res.initial_objective,
        primal_residual: res.primal_residual,
        dual_residual: res.dual_residual,
        row_norms: v.spec.norms(),
        h: matrix_rows(res.h_opt.matrix()),
        angles,
        diagnostics: diagnostics(res),
        wall_time: res.wall_time.as_secs_f64(),
    };
    Ok(to_json(&out))
}

/// `utmost solve`.
pub fn run_solve(config: &Path, out: &Path, trace: &Path) -> CliResult<PlacementResult> {
    let v = config::load(config)?;
    let res = solve(&v.spec, &v.noise, v.criterion, &v.solver)?;
    write_file(out, &solve_document(&v, &res)?)?;
    write_file(trace, &trace_csv(&res))?;
    Ok(res)
}

/// Offset added to one cell's reference value; exists to exercise the
/// failure path of `utmost sanity`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub m: usize,
    pub criterion: Criterion,
    pub delta: f64,
}

pub fn sanity_tolerances(tol_a: Option<f64>, tol_e: Option<f64>) -> CliResult<Tolerances> {
    let mut tol = Tolerances::default();
    for (field, v) in [("tol-a", tol_a), ("tol-e", tol_e)] {
        if let Some(v) = v {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::field(field, format!("must be positive, got {v}")));
            }
        }
    }
    if let Some(a) = tol_a {
        tol.a = a;
        tol.d = a;
    }
    if let Some(e) = tol_e {
        tol.e = e;
    }
    Ok(tol)
}

/// `utmost sanity`: writes the table to `out` and fails if any cell is out
/// of tolerance.
pub fn run_sanity(tol: &Tolerances, perturb: Option<Perturbation>, out: &mut impl std::io::Write) -> CliResult<()> {
    let cells = sanity::run(tol, Execution::default(), |m, c| {
        let v = theoretical_optimum(m, 1.0, c);
        match perturb {
            Some(p) if p.m == m && p.criterion == c => v + p.delta,
            _ => v,
        }
    })?;
    let mut s = format!(
        "{:>3} {:>3} {:>13} {:>13} {:>10} {:>10} {:>6} {:>15} {:>6}\n",
        "m", "f", "expected", "objective", "error", "structure", "iters", "termination", "status"
    );
    for c in &cells {
        let _ = writeln!(
            s,
            "{:>3} {:>3} {:>13.9} {:>13.9} {:>10.3e} {:>10.3e} {:>6} {:>15} {:>6}",
            c.m,
            c.criterion.to_string(),
            c.expected,
            c.objective,
            (c.objective - c.expected).abs(),
            c.structure_error,
            c.iterations,
            c.termination.as_str(),
            if c.passed() { "PASS" } else { "FAIL" }
        );
    }
    let failed = cells.iter().filter(|c| !c.passed()).count();
    let _ = writeln!(s, "sanity: {} ({}/{} cells pass)", if failed == 0 { "PASS" } else { "FAIL" }, cells.len() - failed, cells.len());
    out.write_all(s.as_bytes()).map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
    if failed > 0 {
        return Err(CliError::Sanity {
            failed,
            total: cells.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct DesignOut {
    /// Design criterion of the laid-out sensors seen from the design point.
    objective: f64,
    model_objective: f64,
    design_point: Vec<f64>,
    iterations: usize,
    termination: &'static str,
}

#[derive(Debug, Serialize)]
struct PlacementOut {
    name: String,
    sensors: Vec<Vec<f64>>,
    mse: f64,
    bias: f64,
    crlb_trace: f64,
    excluded: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    design: Option<DesignOut>,
}

#[derive(Debug, Serialize)]
struct SimulateOut {
    command: &'static str,
    model: &'static str,
    m: usize,
    n: usize,
    criterion: String,
    target: Vec<f64>,
    trials: usize,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    noise_std: Option<f64>,
    noiseless: bool,
    grid_resolution: usize,
    placements: Vec<PlacementOut>,
    wall_time: f64,
}

/// Reports of a simulation together with its rendered documents.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub reports: Vec<SimReport>,
    pub placements: Vec<Placement>,
    pub document: String,
    pub per_trial: String,
}

fn model_scale(model: MeasurementModel) -> f64 {
    match model {
        MeasurementModel::Toa => 0.25,
        MeasurementModel::Tdoa { .. } => 1.0,
        MeasurementModel::Rss { path_loss } => 1.0 / (path_loss * path_loss),
    }
}

fn scenario_error(e: Error) -> CliError {
    match e {
        Error::InvalidScenario(msg) | Error::DimensionMismatch(msg) => CliError::field("simulate", msg),
        other => CliError::Solver(other),
    }
}

fn per_trial_csv(plan: &SimPlan, reports: &[SimReport]) -> String {
    let coords = ["x", "y", "z"];
    let mut s = format!("placement,trial,{},squared_error,excluded\n", coords[..plan.target.len()].join(","));
    for r in reports {
        for (t, est) in r.estimates.iter().enumerate() {
            match est {
                Some(p) => {
                    let xs: Vec<String> = p.iter().map(|v| fmt_f64(*v)).collect();
                    let _ = writeln!(s, "{},{t},{},{},0", r.placement, xs.join(","), fmt_f64((p - &plan.target).norm_squared()));
                }
                None => {
                    let _ = writeln!(s, "{},{t},{},nan,1", r.placement, vec!["nan"; plan.target.len()].join(","));
                }
            }
        }
    }
    s
}

/// Designs and simulates every placement of the plan.
pub fn simulate(v: &config::Validated) -> CliResult<Simulation> {
    let start = Instant::now();
    let plan = v
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::field("simulate", "required by the simulate command"))?;
    let (m, n) = (v.spec.m, v.spec.n);
    let mut placements = Vec::new();
    let mut designs = Vec::new();
    for p in &plan.placements {
        let (name, sensors, design) = match p {
            PlacementName::Optimal | PlacementName::Coarse => {
                let point: &DVector<f64> = if *p == PlacementName::Optimal { &plan.target } else { &plan.coarse_target };
                let d = optimal_placement(plan.model, &plan.noise, v.criterion, point, plan.radius, &v.solver)?;
                let out = DesignOut {
                    objective: d.objective,
                    model_objective: scale_criterion(d.objective, v.criterion, model_scale(plan.model), n),
                    design_point: point.iter().copied().collect(),
                    iterations: d.result.iterations,
                    termination: d.result.termination.as_str(),
                };
                let name = if *p == PlacementName::Optimal { "optimal" } else { "coarse" };
                (name.to_string(), d.sensors, Some(out))
            }
            PlacementName::Uniform => ("uniform".to_string(), uniform_placement(m, n, plan.radius)?, None),
            PlacementName::Random => (
                "random".to_string(),
                random_placement(m, n, plan.radius, &mut layout_rng(plan.seed))?,
                None,
            ),
        };
        placements.push(Placement { name, sensors });
        designs.push(design);
    }
    for (name, sensors) in &plan.custom {
        placements.push(Placement {
            name: name.clone(),
            sensors: sensors.clone(),
        });
        designs.push(None);
    }
    let scenario = SimScenario {
        target: plan.target.clone(),
        model: plan.model,
        noise: plan.noise.clone(),
        trials: plan.trials,
        seed: plan.seed,
        grid: plan.grid.clone(),
        noiseless: plan.noiseless,
    };
    let reports = run_monte_carlo(&scenario, &placements).map_err(scenario_error)?;
    let out = SimulateOut {
        command: "simulate",
        model: plan.model.name(),
        m,
        n,
        criterion: v.criterion.to_string(),
        target: plan.target.iter().copied().collect(),
        trials: plan.trials,
        seed: plan.seed,
        noise_std: plan.noise_std,
        noiseless: plan.noiseless,
        grid_resolution: plan.grid.resolution,
        placements: placements
            .iter()
            .zip(&reports)
            .zip(designs)
            .map(|((p, r), design)| PlacementOut {
                name: p.name.clone(),
                sensors: p.sensors.iter().map(|s| s.iter().copied().collect()).collect(),
                mse: r.mse,
                bias: r.bias,
                crlb_trace: r.crlb_trace,
                excluded: r.excluded,
                design,
            })
            .collect(),
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok(Simulation {
        per_trial: per_trial_csv(plan, &reports),
        document: to_json(&out),
        reports,
        placements,
    })
}

/// `utmost simulate`.
pub fn run_simulate(config: &Path, out: &Path, per_trial: Option<&Path>) -> CliResult<Simulation> {
    let v = config::load(config)?;
    let sim = simulate(&v)?;
    write_file(out, &sim.document)?;
    if let Some(p) = per_trial {
        write_file(p, &sim.per_trial)?;
    }
    Ok(sim)
}
