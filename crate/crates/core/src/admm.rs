//! ADMM over the splitting `Φ H = X`, with majorization-minimization inner
//! loops for both subproblems.
//!
//! The augmented Lagrangian is
//!
//! ```text
//! L_ρ(X, H, G) = f((Xᵀ R⁻¹ X)⁻¹) + Tr(Gᵀ(Φ H − X)) + ρ/2 ‖Φ H − X‖²_F
//! ```
//!
//! and one outer iteration runs [`update_x`], [`update_h`] and [`update_g`]
//! in that order.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{max_eig_psd, thin_svd};
use crate::model::{
    build_phi, criterion_value, scale_criterion, tdoa_covariance, Criterion, MappingMatrix, ModelKind, ModelSpec, NoiseCovariance,
    OrientationMatrix,
};
use crate::prox::{prox, ProxInput};

/// Initial orientation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// The ±axis pattern of [`OrientationMatrix::uniform`].
    Uniform,
    /// Rows uniform on the sphere from a seeded stream.
    RandomSeeded(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub rho: f64,
    pub max_outer: usize,
    /// Threshold on `‖Φ H − X‖_F`.
    pub tol_primal: f64,
    /// Threshold on `ρ ‖Φᵀ (X_{k+1} − X_k)‖_F`.
    pub tol_dual: f64,
    pub mm_x_max: usize,
    /// Relative decrease of the X-subproblem objective that ends the MM loop.
    pub mm_x_tol: f64,
    pub mm_h_max: usize,
    pub mm_h_tol: f64,
    pub init: Init,
    /// Raise `ρ` when the residuals stop shrinking. `None` keeps `ρ` fixed.
    pub adapt_rho: Option<RhoAdaptation>,
}

/// Penalty adjustment, checked every `period` outer iterations. Let `q` be
/// the best `max(primal, dual)` of the period divided by that of the previous
/// period.
///
/// * `q > progress`: the iterates oscillate and `ρ` is multiplied by `factor`.
/// * `q > slow` and the dual residual exceeds `imbalance` times the primal
///   one: the penalty is too stiff and `ρ` is divided by `factor`.
///
/// A value of `ρ` at which oscillation was seen may be returned to once by a
/// later decrease; oscillating there again excludes it. The exclusion lapses
/// once the residual has fallen by `floor_release` since it was imposed. `ρ` stays within
/// `[min_rho, max_rho]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoAdaptation {
    pub period: usize,
    pub progress: f64,
    pub slow: f64,
    pub factor: f64,
    pub imbalance: f64,
    pub floor_release: f64,
    pub min_rho: f64,
    pub max_rho: f64,
}

impl Default for RhoAdaptation {
    fn default() -> Self {
        RhoAdaptation {
            period: 50,
            progress: 0.99,
            slow: 0.5,
            factor: 2.0,
            imbalance: 10.0,
            floor_release: 1e-2,
            min_rho: 1e-4,
            max_rho: 1e4,
        }
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rho: 1.0,
            max_outer: 5000,
            tol_primal: 1e-8,
            tol_dual: 1e-8,
            mm_x_max: 100,
            mm_x_tol: 1e-10,
            mm_h_max: 100,
            mm_h_tol: 1e-10,
            init: Init::Uniform,
            adapt_rho: Some(RhoAdaptation::default()),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho", self.rho),
            ("tol_primal", self.tol_primal),
            ("tol_dual", self.tol_dual),
            ("mm_x_tol", self.mm_x_tol),
            ("mm_h_tol", self.mm_h_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("max_outer", self.max_outer), ("mm_x_max", self.mm_x_max), ("mm_h_max", self.mm_h_max)] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if let Some(a) = self.adapt_rho {
            if a.period == 0 {
                return Err(Error::InvalidConfig("rho adaptation period must be at least 1".into()));
            }
            if !(a.slow > 0.0 && a.slow <= a.progress && a.progress <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "rho thresholds must satisfy 0 < slow <= progress <= 1, got slow {} progress {}",
                    a.slow, a.progress
                )));
            }
            if !(a.factor > 1.0 && a.factor.is_finite()) {
                return Err(Error::InvalidConfig(format!("rho factor must exceed 1, got {}", a.factor)));
            }
            if !(a.floor_release > 0.0 && a.floor_release < 1.0) {
                return Err(Error::InvalidConfig(format!("rho floor_release must lie in (0, 1), got {}", a.floor_release)));
            }
            if !(a.imbalance >= 1.0 && a.imbalance.is_finite()) {
                return Err(Error::InvalidConfig(format!("rho imbalance must be at least 1, got {}", a.imbalance)));
            }
            if !(a.min_rho > 0.0 && a.min_rho <= self.rho && self.rho <= a.max_rho && a.max_rho.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "rho bounds must satisfy 0 < min_rho <= rho <= max_rho < inf, got {} <= {} <= {}",
                    a.min_rho, self.rho, a.max_rho
                )));
            }
        }
        Ok(())
    }
}

/// Noise covariance seen by the optimizer. For TDOA an `m`-dimensional
/// range-noise covariance is differenced into `K Σ Kᵀ`; an `(m−1)`-dimensional
/// one is taken as already differenced.
pub fn effective_covariance(spec: &ModelSpec, phi: &MappingMatrix, r: &NoiseCovariance) -> Result<NoiseCovariance> {
    let want = spec.measurement_dim();
    match spec.kind {
        ModelKind::Tdoa { .. } if r.dim() == spec.m => tdoa_covariance(r, phi),
        _ if r.dim() == want => Ok(r.clone()),
        _ => Err(Error::DimensionMismatch(format!(
            "noise covariance is {}x{}, model expects {want}x{want}",
            r.dim(),
            r.dim()
        ))),
    }
}

/// ADMM iterates and the quantities cached once per solve.
///
/// The iteration runs on `Φ / ‖Φ‖₂` and `R / λ_max(R)`. This leaves the
/// minimizer over `H` unchanged and makes `ρ` and the residual tolerances
/// independent of the units of `Φ` and `R`. `X` and `G` live in these
/// normalized coordinates; [`SolverState::objective`] reports the original
/// units.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub x: DMatrix<f64>,
    pub h: OrientationMatrix,
    pub g: DMatrix<f64>,
    pub k: usize,
    /// Current penalty.
    pub rho: f64,
    phi: MappingMatrix,
    r: NoiseCovariance,
    norms: Vec<f64>,
    /// `ΦᵀΦ − λ_max(ΦᵀΦ) I` when Φ is not diagonal.
    m_tilde: Option<DMatrix<f64>>,
    /// `λ_max(R) / ‖Φ‖₂²`, mapping normalized CRLB values to original ones.
    crlb_scale: f64,
}

impl SolverState {
    /// Starts from `h0` with `G = 0` and `X = Φ H₀`. `r` must already be the
    /// effective covariance (see [`effective_covariance`]).
    pub fn new(spec: &ModelSpec, r: NoiseCovariance, h0: OrientationMatrix, rho: f64) -> Result<Self> {
        let raw_phi = build_phi(spec)?;
        if r.dim() != raw_phi.matrix().nrows() {
            return Err(Error::DimensionMismatch(format!(
                "noise covariance is {}x{}, Φ has {} rows",
                r.dim(),
                r.dim(),
                raw_phi.matrix().nrows()
            )));
        }
        if h0.m() != spec.m || h0.n() != spec.n {
            return Err(Error::DimensionMismatch(format!(
                "initial H is {}x{}, model is {}x{}",
                h0.m(),
                h0.n(),
                spec.m,
                spec.n
            )));
        }
        let phi_norm2 = max_eig_psd(&(raw_phi.matrix().transpose() * raw_phi.matrix()));
        let r_max = r.factor().lambda_max;
        let phi = MappingMatrix(raw_phi.matrix() / phi_norm2.sqrt());
        let r = r.scaled(1.0 / r_max)?;
        let norms = spec.norms();
        let m_tilde = if phi.is_diagonal() {
            None
        } else {
            let m = phi.matrix().transpose() * phi.matrix();
            let lam = max_eig_psd(&m);
            Some(&m - DMatrix::identity(spec.m, spec.m) * lam)
        };
        let x = phi.matrix() * h0.matrix();
        let g = DMatrix::zeros(x.nrows(), x.ncols());
        Ok(SolverState {
            x,
            h: h0,
            g,
            k: 0,
            rho,
            phi,
            r,
            norms,
            m_tilde,
            crlb_scale: r_max / phi_norm2,
        })
    }

    pub fn phi(&self) -> &MappingMatrix {
        &self.phi
    }

    pub fn covariance(&self) -> &NoiseCovariance {
        &self.r
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    /// `‖Φ H − X‖_F`.
    pub fn primal_residual(&self) -> f64 {
        (self.phi.matrix() * self.h.matrix() - &self.x).norm()
    }

    /// Design objective at the feasible iterate `H`, in original units.
    pub fn objective(&self, criterion: Criterion) -> f64 {
        let f = crate::model::fim_raw(self.h.matrix(), self.phi.matrix(), self.r.factor().inverse.clone())
            .expect("state dimensions are consistent");
        scale_criterion(criterion_value(&f, criterion), criterion, self.crlb_scale, self.h.n())
    }
}

/// The X-subproblem in the whitened variable `Y = R^{-1/2} X`:
/// `f((YᵀY)⁻¹) + ρ/2 Tr(Yᵀ R Y) − Tr(Eᵀ Y)` with `E = R^{1/2}(G + ρ Φ H)`.
#[derive(Debug, Clone)]
pub struct XSubproblem {
    pub e: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// `R − λ_max(R) I`, negative semidefinite.
    pub r_tilde: DMatrix<f64>,
    pub lambda_max: f64,
    pub rho: f64,
    pub criterion: Criterion,
}

impl XSubproblem {
    pub fn new(state: &SolverState, rho: f64, criterion: Criterion) -> Self {
        let fac = state.r.factor();
        let d = &state.g + state.phi.matrix() * state.h.matrix() * rho;
        let e = &fac.sqrt * d;
        let r = state.r.matrix().clone();
        let dim = r.nrows();
        let r_tilde = &r - DMatrix::identity(dim, dim) * fac.lambda_max;
        XSubproblem {
            e,
            r,
            r_tilde,
            lambda_max: fac.lambda_max,
            rho,
            criterion,
        }
    }

    /// Exact subproblem objective (constant terms dropped).
    pub fn objective(&self, y: &DMatrix<f64>) -> f64 {
        let yty = y.transpose() * y;
        let f = criterion_value(&yty, self.criterion);
        f + 0.5 * self.rho * (y.transpose() * &self.r * y).trace() - self.e.dot(y)
    }

    /// `A_{k,τ} = E − ρ R̃ Y_τ`.
    pub fn linear_term(&self, y_tau: &DMatrix<f64>) -> DMatrix<f64> {
        &self.e - &self.r_tilde * y_tau * self.rho
    }

    /// Majorizer of [`XSubproblem::objective`] built at `y_tau`, tight there.
    pub fn surrogate(&self, y: &DMatrix<f64>, y_tau: &DMatrix<f64>) -> f64 {
        let yty = y.transpose() * y;
        let f = criterion_value(&yty, self.criterion);
        let a = self.linear_term(y_tau);
        f + 0.5 * self.rho * self.lambda_max * yty.trace()
            - a.dot(y)
            - 0.5 * self.rho * (y_tau.transpose() * &self.r_tilde * y_tau).trace()
    }

    /// Global minimizer of the surrogate at `y_tau`.
    pub fn minimize_surrogate(&self, y_tau: &DMatrix<f64>) -> DMatrix<f64> {
        let svd = thin_svd(&self.linear_term(y_tau));
        let gammas = prox(self.criterion, ProxInput::new(&svd.sigma, self.rho * self.lambda_max));
        svd.recompose(&gammas)
    }

    fn is_isotropic(&self) -> bool {
        self.r_tilde.amax() <= 1e-14 * self.lambda_max
    }
}

#[derive(Debug, Clone)]
pub struct XUpdate {
    pub x: DMatrix<f64>,
    /// Subproblem objective at `Y_0, Y_1, …`.
    pub objectives: Vec<f64>,
    pub iterations: usize,
}

/// X-update by MM on the whitened subproblem, warm-started at `R^{-1/2} X_k`.
pub fn update_x(state: &SolverState, config: &SolverConfig, criterion: Criterion) -> Result<XUpdate> {
    let sub = XSubproblem::new(state, state.rho, criterion);
    let fac = state.r.factor();
    let mut y = &fac.inv_sqrt * &state.x;
    let mut obj = sub.objective(&y);
    let mut objectives = vec![obj];
    let isotropic = sub.is_isotropic();
    let mut iterations = 0;
    for _ in 0..config.mm_x_max {
        let y_next = sub.minimize_surrogate(&y);
        if y_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: "x-update",
                iteration: state.k,
            });
        }
        let next = sub.objective(&y_next);
        if next.is_nan() {
            return Err(Error::NonFinite {
                stage: "x-update objective",
                iteration: state.k,
            });
        }
        iterations += 1;
        y = y_next;
        objectives.push(next);
        let decrease = obj - next;
        obj = next;
        // with R̃ = 0 the surrogate is the objective itself
        if isotropic || decrease <= config.mm_x_tol * next.abs().max(1.0) {
            break;
        }
    }
    Ok(XUpdate {
        x: &fac.sqrt * y,
        objectives,
        iterations,
    })
}

#[derive(Debug, Clone)]
pub struct HUpdate {
    pub h: OrientationMatrix,
    /// `ρ/2 Tr(HᵀΦᵀΦH) + Tr(Cᵀ Φ H)` at `H_0, H_1, …`.
    pub objectives: Vec<f64>,
    pub iterations: usize,
    /// Rows whose update direction vanished and were kept unchanged.
    pub degenerate_rows: Vec<usize>,
}

/// The part of `L_ρ(X_{k+1}, H, G_k)` that depends on `H`.
pub fn h_objective(state: &SolverState, rho: f64, c: &DMatrix<f64>, h: &DMatrix<f64>) -> f64 {
    let ph = state.phi.matrix() * h;
    0.5 * rho * ph.norm_squared() + c.dot(&ph)
}

/// Rows `h_i = −c_i b_i / ‖b_i‖`; zero rows keep `prev`.
fn project_rows(b: &DMatrix<f64>, prev: &DMatrix<f64>, norms: &[f64], degenerate: &mut Vec<usize>) -> DMatrix<f64> {
    let mut h = prev.clone();
    for i in 0..b.nrows() {
        let nb = b.row(i).norm();
        if nb > 0.0 && nb.is_finite() {
            let s = -norms[i] / nb;
            for j in 0..b.ncols() {
                h[(i, j)] = b[(i, j)] * s;
            }
        } else if !degenerate.contains(&i) {
            degenerate.push(i);
        }
    }
    h
}

/// H-update with the current `X` (already `X_{k+1}`) and `G_k`.
///
/// Diagonal `Φ` separates by rows and is solved in closed form; otherwise the
/// concave part `Tr(Hᵀ M̃ H)` is linearized and the row projection iterated.
pub fn update_h(state: &SolverState, config: &SolverConfig) -> Result<HUpdate> {
    let rho = state.rho;
    let c = &state.g - &state.x * rho;
    let phi_t_c = state.phi.matrix().transpose() * &c;
    let prev = state.h.matrix();
    let mut degenerate = Vec::new();
    let mut objectives = vec![h_objective(state, rho, &c, prev)];

    let (h, iterations) = match &state.m_tilde {
        None => {
            let h = project_rows(&phi_t_c, prev, &state.norms, &mut degenerate);
            objectives.push(h_objective(state, rho, &c, &h));
            (h, 1)
        }
        Some(m_tilde) => {
            let mut h = prev.clone();
            let mut obj = objectives[0];
            let mut iterations = 0;
            for _ in 0..config.mm_h_max {
                let b = m_tilde * &h * rho + &phi_t_c;
                let next_h = project_rows(&b, &h, &state.norms, &mut degenerate);
                let next = h_objective(state, rho, &c, &next_h);
                iterations += 1;
                h = next_h;
                objectives.push(next);
                let decrease = obj - next;
                obj = next;
                if decrease <= config.mm_h_tol * next.abs().max(1.0) {
                    break;
                }
            }
            (h, iterations)
        }
    };
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            stage: "h-update",
            iteration: state.k,
        });
    }
    Ok(HUpdate {
        h: OrientationMatrix::from_matrix_unchecked(h),
        objectives,
        iterations,
        degenerate_rows: degenerate,
    })
}

/// `G + ρ (Φ H − X)`.
pub fn update_g(state: &SolverState) -> DMatrix<f64> {
    &state.g + (state.phi.matrix() * state.h.matrix() - &state.x) * state.rho
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    /// `f(C(H_k))`; `+∞` while the FIM is singular.
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max_iterations",
        }
    }
}

/// Bookkeeping over all inner MM loops of a solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverDiagnostics {
    /// Largest relative step increase of any X-update MM objective sequence
    /// (`(next − prev) / max(1, |prev|)`); `≤ 0` means monotone.
    pub max_x_mm_increase: f64,
    /// Same for the H-update sequences.
    pub max_h_mm_increase: f64,
    pub x_mm_iterations: usize,
    pub h_mm_iterations: usize,
    pub degenerate_row_events: usize,
    /// Outer iterations whose feasible FIM was singular.
    pub degenerate_fim_iterations: usize,
    pub rho_changes: usize,
    pub final_rho: f64,
}

#[derive(Debug, Clone)]
pub struct PlacementResult {
    pub h_opt: OrientationMatrix,
    pub objective: f64,
    pub initial_objective: f64,
    pub trace: Vec<TraceRecord>,
    pub termination: Termination,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub diagnostics: SolverDiagnostics,
    pub wall_time: Duration,
}

impl PlacementResult {
    /// True when the final FIM is singular.
    pub fn is_degenerate(&self) -> bool {
        self.objective.is_infinite()
    }
}

fn max_step_increase(seq: &[f64]) -> f64 {
    seq.windows(2)
        .filter(|w| w[0].is_finite() && w[1].is_finite())
        .map(|w| (w[1] - w[0]) / w[0].abs().max(1.0))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Initial orientation matrix for `config.init`.
pub fn initial_orientation(spec: &ModelSpec, init: Init) -> OrientationMatrix {
    let norms = spec.norms();
    match init {
        Init::Uniform => OrientationMatrix::uniform(spec.m, spec.n, &norms),
        Init::RandomSeeded(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            OrientationMatrix::random(spec.m, spec.n, &norms, &mut rng)
        }
    }
}

/// Runs the full ADMM loop from `config.init`.
pub fn solve(spec: &ModelSpec, r: &NoiseCovariance, criterion: Criterion, config: &SolverConfig) -> Result<PlacementResult> {
    solve_from(spec, r, criterion, config, initial_orientation(spec, config.init))
}

/// Runs the full ADMM loop from a given initial orientation.
pub fn solve_from(
    spec: &ModelSpec,
    r: &NoiseCovariance,
    criterion: Criterion,
    config: &SolverConfig,
    h0: OrientationMatrix,
) -> Result<PlacementResult> {
    let start = Instant::now();
    spec.validate()?;
    config.validate()?;
    let phi = build_phi(spec)?;
    let r_eff = effective_covariance(spec, &phi, r)?;
    let mut state = SolverState::new(spec, r_eff, h0, config.rho)?;
    let initial_objective = state.objective(criterion);
    if initial_objective.is_nan() {
        return Err(Error::NonFinite {
            stage: "objective",
            iteration: 0,
        });
    }

    let mut trace = Vec::new();
    let mut diag = SolverDiagnostics {
        max_x_mm_increase: f64::NEG_INFINITY,
        max_h_mm_increase: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut termination = Termination::MaxIterations;
    let (mut primal, mut dual) = (state.primal_residual(), f64::INFINITY);

    let (mut period_start, mut period_best) = (f64::INFINITY, f64::INFINITY);
    let min_rho = config.adapt_rho.map_or(config.rho, |a| a.min_rho);
    let (mut rho_floor, mut floor_res) = (min_rho, f64::INFINITY);
    while state.k < config.max_outer {
        let xu = update_x(&state, config, criterion)?;
        diag.max_x_mm_increase = diag.max_x_mm_increase.max(max_step_increase(&xu.objectives));
        diag.x_mm_iterations += xu.iterations;
        let x_prev = std::mem::replace(&mut state.x, xu.x);

        let hu = update_h(&state, config)?;
        diag.max_h_mm_increase = diag.max_h_mm_increase.max(max_step_increase(&hu.objectives));
        diag.h_mm_iterations += hu.iterations;
        diag.degenerate_row_events += hu.degenerate_rows.len();
        state.h = hu.h;

        state.g = update_g(&state);
        state.k += 1;

        primal = state.primal_residual();
        dual = state.rho * (state.phi.matrix().transpose() * (&state.x - &x_prev)).norm();
        let objective = state.objective(criterion);
        if objective.is_nan() || !primal.is_finite() || !dual.is_finite() {
            return Err(Error::NonFinite {
                stage: "objective",
                iteration: state.k,
            });
        }
        if objective.is_infinite() {
            diag.degenerate_fim_iterations += 1;
        }
        trace.push(TraceRecord {
            iter: state.k,
            objective,
            primal_residual: primal,
            dual_residual: dual,
        });
        if primal <= config.tol_primal && dual <= config.tol_dual {
            termination = Termination::Converged;
            break;
        }
        if let Some(adapt) = config.adapt_rho {
            let res = primal.max(dual);
            period_best = period_best.min(res);
            if state.k % adapt.period == 0 {
                let ratio = period_best / period_start;
                if period_best < floor_res * adapt.floor_release {
                    rho_floor = min_rho;
                }
                let rho = if ratio > adapt.slow && dual > adapt.imbalance * primal {
                    (state.rho / adapt.factor).max(rho_floor)
                } else if ratio > adapt.progress {
                    // a level may be revisited once; oscillating there again rules it out
                    rho_floor = if state.rho <= rho_floor { state.rho * adapt.factor } else { state.rho };
                    floor_res = period_best;
                    (state.rho * adapt.factor).min(adapt.max_rho)
                } else {
                    state.rho
                };
                let changed = rho != state.rho;
                if changed {
                    state.rho = rho;
                    diag.rho_changes += 1;
                }
                // the period after a change is a transient and is not judged
                period_start = if changed { f64::INFINITY } else { period_best };
                period_best = f64::INFINITY;
            }
        }
    }

    diag.final_rho = state.rho;
    let objective = state.objective(criterion);
    Ok(PlacementResult {
        h_opt: state.h,
        objective,
        initial_objective,
        trace,
        termination,
        iterations: state.k,
        primal_residual: primal,
        dual_residual: dual,
        diagnostics: diag,
        wall_time: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> NoiseCovariance {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        NoiseCovariance::new(&a * a.transpose() + DMatrix::identity(n, n) * 0.3).unwrap()
    }

    fn state_with(spec: &ModelSpec, r: NoiseCovariance, rng: &mut ChaCha8Rng) -> SolverState {
        let h = OrientationMatrix::random(spec.m, spec.n, &spec.norms(), rng);
        let mut s = SolverState::new(spec, r, h, 1.0).unwrap();
        s.g = DMatrix::from_fn(s.x.nrows(), s.x.ncols(), |_, _| rng.random_range(-1.0..1.0));
        s
    }

    #[test]
    fn isotropic_x_update_is_exact_in_one_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = ModelSpec::toa(6, 3).unwrap();
        let state = state_with(&spec, NoiseCovariance::scaled_identity(6, 1.5).unwrap(), &mut rng);
        let cfg = SolverConfig::default();
        for c in Criterion::ALL {
            let xu = update_x(&state, &cfg, c).unwrap();
            assert_eq!(xu.iterations, 1);
            // the surrogate equals the objective, so one more step cannot move
            let sub = XSubproblem::new(&state, cfg.rho, c);
            let y = &state.r.factor().inv_sqrt * &xu.x;
            let y2 = sub.minimize_surrogate(&y);
            assert!((sub.objective(&y2) - sub.objective(&y)).abs() <= 1e-9 * sub.objective(&y).abs().max(1.0));
        }
    }

    #[test]
    fn x_update_monotone_d() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = ModelSpec::toa(6, 3).unwrap();
        let r = random_spd(&mut rng, 6);
        let state = state_with(&spec, r, &mut rng);
        let xu = update_x(&state, &SolverConfig::default(), Criterion::D).unwrap();
        assert!(xu.iterations > 1);
        for w in xu.objectives.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "{w:?}");
        }
    }

    #[test]
    fn x_update_matches_multistart_descent() {
        // multi-start gradient descent with backtracking on the exact objective
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = ModelSpec::toa(4, 2).unwrap();
        let r = random_spd(&mut rng, 4);
        let state = state_with(&spec, r, &mut rng);
        let cfg = SolverConfig {
            mm_x_max: 20_000,
            mm_x_tol: 1e-15,
            ..SolverConfig::default()
        };
        let sub = XSubproblem::new(&state, cfg.rho, Criterion::A);
        let xu = update_x(&state, &cfg, Criterion::A).unwrap();
        let got = sub.objective(&(&state.r.factor().inv_sqrt * &xu.x));

        let grad = |y: &DMatrix<f64>| {
            let yty = y.transpose() * y;
            let inv = yty.try_inverse().unwrap();
            y * (&inv * &inv) * -2.0 + &sub.r * y * sub.rho - &sub.e
        };
        let mut best = f64::INFINITY;
        for _ in 0..20 {
            let mut y = DMatrix::from_fn(4, 2, |_, _| rng.random_range(-2.0..2.0));
            let mut f = sub.objective(&y);
            let mut step = 1.0;
            for _ in 0..20_000 {
                let gr = grad(&y);
                if gr.norm() < 1e-12 {
                    break;
                }
                loop {
                    let cand = &y - &gr * step;
                    let fc = sub.objective(&cand);
                    if fc <= f - 0.25 * step * gr.norm_squared() {
                        y = cand;
                        f = fc;
                        step *= 1.5;
                        break;
                    }
                    step *= 0.5;
                    if step < 1e-20 {
                        break;
                    }
                }
                if step < 1e-20 {
                    break;
                }
            }
            best = best.min(f);
        }
        assert!((got - best).abs() <= 1e-4, "mm {got} vs descent {best}");
    }

    #[test]
    fn majorizer_tight_and_dominating() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..30 {
            let spec = ModelSpec::toa(5 + trial % 3, 3).unwrap();
            let r = random_spd(&mut rng, spec.m);
            let mut state = state_with(&spec, r, &mut rng);
            let rho = rng.random_range(0.1..5.0);
            state.x = DMatrix::from_fn(spec.m, 3, |_, _| rng.random_range(-1.0..1.0));
            for c in Criterion::ALL {
                let sub = XSubproblem::new(&state, rho, c);
                let y_tau = DMatrix::from_fn(spec.m, 3, |_, _| rng.random_range(-1.0..1.0));
                let exact = sub.objective(&y_tau);
                assert!((sub.surrogate(&y_tau, &y_tau) - exact).abs() <= 1e-10 * exact.abs().max(1.0));
                for _ in 0..20 {
                    let y = DMatrix::from_fn(spec.m, 3, |_, _| rng.random_range(-2.0..2.0));
                    assert!(sub.surrogate(&y, &y_tau) >= sub.objective(&y) - 1e-10 * sub.objective(&y).abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn h_update_normalizes() {
        let spec = ModelSpec::toa(4, 2).unwrap();
        let h0 = OrientationMatrix::uniform(4, 2, &[1.0; 4]);
        let mut state = SolverState::new(&spec, NoiseCovariance::identity(4), h0, 1.0).unwrap();
        let cfg = SolverConfig::default();
        state.g = DMatrix::zeros(4, 2);
        state.x = DMatrix::from_row_slice(4, 2, &[-3.0, -4.0, 0.0, -1.0, 1.0, 0.0, 0.0, 2.0]);
        let hu = update_h(&state, &cfg).unwrap();
        // C = −X, so h = X / ‖X‖
        let h = hu.h.matrix();
        assert!((h[(0, 0)] + 0.6).abs() < 1e-15 && (h[(0, 1)] + 0.8).abs() < 1e-15);
        assert!(hu.h.max_norm_error(&[1.0; 4]) <= 1e-12);

        // C = −ρ H row-wise is a fixed point
        state.x = state.h.matrix().clone();
        let hu = update_h(&state, &cfg).unwrap();
        assert_eq!(hu.h.matrix(), state.h.matrix());
    }

    #[test]
    fn h_update_zero_row_is_kept() {
        let spec = ModelSpec::toa(4, 2).unwrap();
        let h0 = OrientationMatrix::uniform(4, 2, &[1.0; 4]);
        let mut state = SolverState::new(&spec, NoiseCovariance::identity(4), h0.clone(), 1.0).unwrap();
        state.x = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 2.0]);
        let hu = update_h(&state, &SolverConfig::default()).unwrap();
        assert_eq!(hu.degenerate_rows, vec![0]);
        assert_eq!(hu.h.matrix().row(0), h0.matrix().row(0));
    }

    #[test]
    fn tdoa_h_update_monotone_and_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let spec = ModelSpec::tdoa(4, 2, 0).unwrap();
        let r = random_spd(&mut rng, 3);
        let mut state = state_with(&spec, r, &mut rng);
        state.x = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let hu = update_h(&state, &SolverConfig::default()).unwrap();
        assert!(hu.iterations >= 1);
        for w in hu.objectives.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
        }
        assert!(hu.h.max_norm_error(&[1.0; 4]) <= 1e-12);
    }

    #[test]
    fn g_update() {
        let spec = ModelSpec::toa(4, 2).unwrap();
        let h0 = OrientationMatrix::uniform(4, 2, &[1.0; 4]);
        let mut state = SolverState::new(&spec, NoiseCovariance::identity(4), h0, 1.0).unwrap();
        state.g = DMatrix::from_element(4, 2, 0.7);
        assert_eq!(update_g(&state), state.g);
        state.g = DMatrix::zeros(4, 2);
        state.x = state.h.matrix() - DMatrix::from_element(4, 2, 1.0);
        let g = update_g(&state);
        assert!((g - DMatrix::from_element(4, 2, 1.0)).amax() < 1e-15);
    }

    #[test]
    fn toa_identity_m6_a() {
        let spec = ModelSpec::toa(6, 3).unwrap();
        let res = solve(&spec, &NoiseCovariance::identity(6), Criterion::A, &SolverConfig::default()).unwrap();
        assert!((res.objective - 1.5).abs() < 1e-3);
        let hth = res.h_opt.matrix().transpose() * res.h_opt.matrix();
        assert!((hth - DMatrix::identity(3, 3) * 2.0).amax() < 1e-3);
        assert_eq!(res.termination, Termination::Converged);
    }

    #[test]
    fn config_validation() {
        let bad = SolverConfig {
            rho: 0.0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            mm_h_max: 0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
