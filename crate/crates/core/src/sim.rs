//! Monte Carlo evaluation of sensor placements: noisy measurement generation,
//! a grid-search plus Gauss-Newton MLE, and MSE/bias aggregation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::admm::{effective_covariance, initial_orientation, solve_from, PlacementResult, SolverConfig};
use crate::error::{Error, Result};
use crate::linalg::sample_correlated_noise;
use crate::model::{build_phi, objective, Criterion, ModelSpec, NoiseCovariance, OrientationMatrix};
use crate::par::{self, Execution};

/// Distance-noise standard deviation used when a scenario does not set one.
pub const DEFAULT_NOISE_STD: f64 = 0.3;
/// Smallest admissible sensor-to-target distance.
pub const MIN_SEPARATION: f64 = 1e-9;

/// Measurement equation used to simulate data. AOA is not simulated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasurementModel {
    /// `s = 2 g(p) + η`
    Toa,
    /// `s = K g(p) + K n`, differences against sensor `reference`.
    Tdoa { reference: usize },
    /// `z = −α ln g(p) + η`
    Rss { path_loss: f64 },
}

impl MeasurementModel {
    pub fn name(&self) -> &'static str {
        match self {
            MeasurementModel::Toa => "toa",
            MeasurementModel::Tdoa { .. } => "tdoa",
            MeasurementModel::Rss { .. } => "rss",
        }
    }
}

/// Search box for the grid stage and Gauss-Newton controls.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Points per axis.
    pub resolution: usize,
    pub gn_iters: usize,
    /// Gauss-Newton stops once a step is shorter than this (meters).
    pub gn_tol: f64,
}

impl GridSpec {
    /// Axis-aligned box `center ± half_width` with default controls.
    pub fn cube(center: &[f64], half_width: f64) -> Self {
        GridSpec {
            lower: center.iter().map(|c| c - half_width).collect(),
            upper: center.iter().map(|c| c + half_width).collect(),
            resolution: 201,
            gn_iters: 50,
            gn_tol: 1e-10,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::InvalidScenario(format!(
                "grid bounds have {} / {} axes, target has {n}",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (axis, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::InvalidScenario(format!("grid axis {axis}: need lower < upper, got [{lo}, {hi}]")));
            }
        }
        if self.resolution < 3 {
            return Err(Error::InvalidScenario(format!("grid resolution must be at least 3, got {}", self.resolution)));
        }
        if !(self.gn_tol > 0.0) {
            return Err(Error::InvalidScenario(format!("gn_tol must be positive, got {}", self.gn_tol)));
        }
        Ok(())
    }

    fn len(&self) -> usize {
        self.resolution.pow(self.lower.len() as u32)
    }

    /// Grid point with linear index `index`; the last axis varies fastest.
    fn point(&self, mut index: usize) -> DVector<f64> {
        let n = self.lower.len();
        let mut p = DVector::zeros(n);
        let steps = (self.resolution - 1) as f64;
        for axis in (0..n).rev() {
            let k = index % self.resolution;
            index /= self.resolution;
            p[axis] = self.lower[axis] + (self.upper[axis] - self.lower[axis]) * k as f64 / steps;
        }
        p
    }
}

/// A Monte Carlo experiment around a fixed true target.
#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub target: DVector<f64>,
    pub model: MeasurementModel,
    /// Per-sensor `m x m` covariance: range noise for TOA and TDOA (TDOA
    /// differences it), log-power noise for RSS.
    pub noise: NoiseCovariance,
    pub trials: usize,
    pub seed: u64,
    pub grid: GridSpec,
    /// Generate exact measurements.
    pub noiseless: bool,
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        let n = self.target.len();
        if n != 2 && n != 3 {
            return Err(Error::InvalidScenario(format!("target must be 2D or 3D, got {n} coordinates")));
        }
        if self.target.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidScenario("target has non-finite coordinates".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidScenario("trials must be at least 1".into()));
        }
        if let MeasurementModel::Rss { path_loss } = self.model {
            if !(path_loss > 0.0 && path_loss.is_finite()) {
                return Err(Error::InvalidScenario(format!("path loss must be positive, got {path_loss}")));
            }
        }
        self.grid.validate(n)
    }

    fn check_sensors(&self, sensors: &[DVector<f64>]) -> Result<()> {
        let (m, n) = (sensors.len(), self.target.len());
        if m != self.noise.dim() {
            return Err(Error::DimensionMismatch(format!("{m} sensors, noise covariance is {0}x{0}", self.noise.dim())));
        }
        if m < n + 1 {
            return Err(Error::InvalidScenario(format!("need at least {} sensors, got {m}", n + 1)));
        }
        if let MeasurementModel::Tdoa { reference } = self.model {
            if reference >= m {
                return Err(Error::InvalidScenario(format!("reference index {reference} out of range for m = {m}")));
            }
        }
        for (i, r) in sensors.iter().enumerate() {
            if r.len() != n || r.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidScenario(format!("sensor {i} is not a finite {n}-vector")));
            }
            let d = (&self.target - r).norm();
            if d <= MIN_SEPARATION {
                return Err(Error::InvalidScenario(format!("sensor {i} is {d:e} m from the target")));
            }
        }
        Ok(())
    }
}

/// A named sensor layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub name: String,
    pub sensors: Vec<DVector<f64>>,
}

/// Monte Carlo summary for one placement.
#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub placement: String,
    /// Mean of `‖p̂ − p‖²` over kept trials.
    pub mse: f64,
    /// `‖mean(p̂ − p)‖`.
    pub bias: f64,
    /// Per-trial estimates; `None` marks an excluded trial.
    pub estimates: Vec<Option<DVector<f64>>>,
    pub excluded: usize,
    /// Trace of the position-domain CRLB at the true target.
    pub crlb_trace: f64,
}

/// Mean function, Jacobian and weighting of one placement's likelihood.
struct Likelihood<'a> {
    sensors: &'a [DVector<f64>],
    model: MeasurementModel,
    /// Differencing matrix for TDOA.
    k: Option<DMatrix<f64>>,
    /// Chosen so that the negative log-likelihood is `rᵀ W r` up to constants.
    weight: DMatrix<f64>,
    /// Lower Cholesky factor of the per-sensor noise covariance.
    chol: DMatrix<f64>,
    // row-major copies for the grid stage
    flat_sensors: Vec<f64>,
    flat_weight: Vec<f64>,
    flat_k: Vec<f64>,
}

impl<'a> Likelihood<'a> {
    fn new(scenario: &SimScenario, sensors: &'a [DVector<f64>]) -> Result<Self> {
        let (m, n) = (sensors.len(), scenario.target.len());
        let (k, weight) = match scenario.model {
            MeasurementModel::Tdoa { reference } => {
                let k = build_phi(&ModelSpec::tdoa(m, n, reference)?)?.0;
                let cov = NoiseCovariance::new(&k * scenario.noise.matrix() * k.transpose())?;
                (Some(k), cov.factor().inverse.clone())
            }
            _ => (None, scenario.noise.factor().inverse.clone()),
        };
        let row_major = |a: &DMatrix<f64>| -> Vec<f64> { (0..a.nrows()).flat_map(|i| (0..a.ncols()).map(move |j| a[(i, j)])).collect() };
        Ok(Likelihood {
            flat_sensors: sensors.iter().flat_map(|r| r.iter().copied()).collect(),
            flat_weight: row_major(&weight),
            flat_k: k.as_ref().map_or_else(Vec::new, row_major),
            sensors,
            model: scenario.model,
            k,
            weight,
            chol: scenario.noise.factor().chol.clone(),
        })
    }

    fn ranges(&self, q: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.sensors.len(), self.sensors.iter().map(|r| (q - r).norm()))
    }

    fn mean(&self, q: &DVector<f64>) -> DVector<f64> {
        let g = self.ranges(q);
        match self.model {
            MeasurementModel::Toa => g * 2.0,
            MeasurementModel::Tdoa { .. } => self.k.as_ref().expect("tdoa differencing") * g,
            MeasurementModel::Rss { path_loss } => g.map(|d| -path_loss * d.ln()),
        }
    }

    fn jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let (m, n) = (self.sensors.len(), q.len());
        let mut j = DMatrix::zeros(m, n);
        for (i, r) in self.sensors.iter().enumerate() {
            let diff = q - r;
            let d = diff.norm();
            let s = match self.model {
                MeasurementModel::Toa => 2.0 / d,
                MeasurementModel::Tdoa { .. } => 1.0 / d,
                MeasurementModel::Rss { path_loss } => -path_loss / (d * d),
            };
            for c in 0..n {
                j[(i, c)] = s * diff[c];
            }
        }
        match &self.k {
            Some(k) => k * j,
            None => j,
        }
    }

    fn nll(&self, z: &DVector<f64>, q: &DVector<f64>) -> f64 {
        let r = z - self.mean(q);
        r.dot(&(&self.weight * &r))
    }

    fn sample<R: Rng + ?Sized>(&self, target: &DVector<f64>, noiseless: bool, rng: &mut R) -> DVector<f64> {
        let clean = self.mean(target);
        if noiseless {
            return clean;
        }
        let eta = sample_correlated_noise(&self.chol, rng);
        match &self.k {
            Some(k) => clean + k * eta,
            None => clean + eta,
        }
    }

    fn crlb_trace(&self, target: &DVector<f64>) -> f64 {
        let j = self.jacobian(target);
        let f = j.transpose() * &self.weight * &j;
        f.try_inverse().map_or(f64::INFINITY, |c| c.trace())
    }

    /// `nll` without allocation; `g` and `r` are scratch of length m and
    /// the measurement dimension.
    fn nll_flat(&self, z: &[f64], q: &[f64], g: &mut [f64], r: &mut [f64]) -> f64 {
        let (m, n, d) = (g.len(), q.len(), r.len());
        for (i, gi) in g.iter_mut().enumerate() {
            let row = &self.flat_sensors[i * n..(i + 1) * n];
            *gi = row.iter().zip(q).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt();
        }
        match self.model {
            MeasurementModel::Toa => r.iter_mut().zip(z).zip(g.iter()).for_each(|((ri, zi), gi)| *ri = zi - 2.0 * gi),
            MeasurementModel::Rss { path_loss } => {
                r.iter_mut().zip(z).zip(g.iter()).for_each(|((ri, zi), gi)| *ri = zi + path_loss * gi.ln())
            }
            MeasurementModel::Tdoa { .. } => {
                for (i, ri) in r.iter_mut().enumerate() {
                    let k = &self.flat_k[i * m..(i + 1) * m];
                    *ri = z[i] - k.iter().zip(g.iter()).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        let mut acc = 0.0;
        for i in 0..d {
            let w = &self.flat_weight[i * d..(i + 1) * d];
            acc += r[i] * w.iter().zip(r.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
        acc
    }

    /// Lowest-index grid point with the smallest finite `nll`.
    fn grid_argmin(&self, z: &DVector<f64>, grid: &GridSpec) -> Option<DVector<f64>> {
        let n = grid.lower.len();
        let (mut g, mut r) = (vec![0.0; self.sensors.len()], vec![0.0; z.len()]);
        let mut q = [0.0; 3];
        let steps = (grid.resolution - 1) as f64;
        let mut best = (usize::MAX, f64::INFINITY);
        for index in 0..grid.len() {
            let mut rest = index;
            for axis in (0..n).rev() {
                let k = rest % grid.resolution;
                rest /= grid.resolution;
                q[axis] = grid.lower[axis] + (grid.upper[axis] - grid.lower[axis]) * k as f64 / steps;
            }
            let v = self.nll_flat(z.as_slice(), &q[..n], &mut g, &mut r);
            if v < best.1 {
                best = (index, v);
            }
        }
        (best.0 != usize::MAX).then(|| grid.point(best.0))
    }

    fn estimate(&self, z: &DVector<f64>, grid: &GridSpec) -> Option<DVector<f64>> {
        let start = self.grid_argmin(z, grid)?;
        let start_value = self.nll(z, &start);
        let (mut q, mut value) = (start.clone(), start_value);
        let mut best = (start, start_value);
        let mut increases = 0;
        for _ in 0..grid.gn_iters {
            let r = z - self.mean(&q);
            let j = self.jacobian(&q);
            let jw = j.transpose() * &self.weight;
            let Some(chol) = (&jw * &j).cholesky() else { break };
            let step = chol.solve(&(&jw * r));
            if step.iter().any(|v| !v.is_finite()) {
                break;
            }
            q += &step;
            let next = self.nll(z, &q);
            if next < best.1 {
                best = (q.clone(), next);
            }
            // near the optimum nll changes drop below rounding, so a stall
            // returns the best iterate rather than the grid start
            if next <= value {
                increases = 0;
            } else {
                increases += 1;
                if increases >= 2 {
                    break;
                }
            }
            value = next;
            if step.norm() < grid.gn_tol {
                break;
            }
        }
        let q = if value <= best.1 { q } else { best.0 };
        q.iter().all(|v| v.is_finite()).then_some(q)
    }
}

/// Noise stream for one trial. The same trial index sees the same draws
/// under every placement.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Stream reserved for drawing random layouts, disjoint from trial streams.
pub fn layout_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    rng
}

/// One noisy measurement vector for `sensors`.
pub fn generate_measurements<R: Rng + ?Sized>(
    scenario: &SimScenario,
    sensors: &[DVector<f64>],
    rng: &mut R,
) -> Result<DVector<f64>> {
    scenario.validate()?;
    scenario.check_sensors(sensors)?;
    Ok(Likelihood::new(scenario, sensors)?.sample(&scenario.target, scenario.noiseless, rng))
}

/// Grid argmin of the negative log-likelihood refined by Gauss-Newton.
/// `None` when the likelihood is nowhere finite or the estimate is not.
pub fn mle_estimate(
    measurements: &DVector<f64>,
    scenario: &SimScenario,
    sensors: &[DVector<f64>],
) -> Result<Option<DVector<f64>>> {
    scenario.validate()?;
    scenario.check_sensors(sensors)?;
    let lik = Likelihood::new(scenario, sensors)?;
    if measurements.len() != lik.weight.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} measurements, model expects {}",
            measurements.len(),
            lik.weight.nrows()
        )));
    }
    Ok(lik.estimate(measurements, &scenario.grid))
}

/// Position-domain CRLB trace at the true target.
pub fn crlb_trace(scenario: &SimScenario, sensors: &[DVector<f64>]) -> Result<f64> {
    scenario.validate()?;
    scenario.check_sensors(sensors)?;
    Ok(Likelihood::new(scenario, sensors)?.crlb_trace(&scenario.target))
}

/// Runs `scenario.trials` paired trials for every placement.
pub fn run_monte_carlo(scenario: &SimScenario, placements: &[Placement]) -> Result<Vec<SimReport>> {
    run_monte_carlo_with(scenario, placements, Execution::default())
}

/// [`run_monte_carlo`] with an explicit execution mode. Reports do not
/// depend on the mode.
pub fn run_monte_carlo_with(scenario: &SimScenario, placements: &[Placement], exec: Execution) -> Result<Vec<SimReport>> {
    scenario.validate()?;
    for p in placements {
        scenario.check_sensors(&p.sensors)?;
    }
    placements.iter().map(|p| simulate_placement(scenario, p, exec)).collect()
}

fn simulate_placement(scenario: &SimScenario, placement: &Placement, exec: Execution) -> Result<SimReport> {
    let lik = Likelihood::new(scenario, &placement.sensors)?;
    let estimates = par::map_indexed_with(exec, scenario.trials, |t| {
        let z = lik.sample(&scenario.target, scenario.noiseless, &mut trial_rng(scenario.seed, t));
        lik.estimate(&z, &scenario.grid)
    });
    let n = scenario.target.len();
    let (mut sum_sq, mut sum_err, mut kept) = (0.0, DVector::zeros(n), 0usize);
    for e in estimates.iter().flatten() {
        let err = e - &scenario.target;
        sum_sq += err.norm_squared();
        sum_err += err;
        kept += 1;
    }
    if kept == 0 {
        return Err(Error::AllTrialsExcluded {
            placement: placement.name.clone(),
        });
    }
    Ok(SimReport {
        placement: placement.name.clone(),
        mse: sum_sq / kept as f64,
        bias: (sum_err / kept as f64).norm(),
        excluded: scenario.trials - kept,
        estimates,
        crlb_trace: lik.crlb_trace(&scenario.target),
    })
}

/// Distance `t > 0` with `‖origin + t·dir‖ = radius`, for unit `dir` and
/// `origin` strictly inside the sphere.
pub fn ray_to_sphere(origin: &DVector<f64>, dir: &DVector<f64>, radius: f64) -> Result<f64> {
    let inside = radius * radius - origin.norm_squared();
    if !(inside > 0.0) {
        return Err(Error::InvalidScenario(format!(
            "design point at distance {} is not inside radius {radius}",
            origin.norm()
        )));
    }
    let b = origin.dot(dir);
    Ok(-b + (b * b + inside).sqrt())
}

/// Sensors on the sphere of `radius` about the origin, seen from `design_point`
/// along the rows of `h` (each row points from its sensor toward the target).
pub fn sensors_from_orientation(h: &OrientationMatrix, design_point: &DVector<f64>, radius: f64) -> Result<Vec<DVector<f64>>> {
    let hm = h.matrix();
    (0..h.m())
        .map(|i| {
            let dir = -hm.row(i).transpose() / hm.row(i).norm();
            let t = ray_to_sphere(design_point, &dir, radius)?;
            Ok(design_point + dir * t)
        })
        .collect()
}

/// The ±axis pattern laid out on the sphere about the origin.
pub fn uniform_placement(m: usize, n: usize, radius: f64) -> Result<Vec<DVector<f64>>> {
    sensors_from_orientation(&OrientationMatrix::uniform(m, n, &vec![1.0; m]), &DVector::zeros(n), radius)
}

/// Sensors drawn uniformly on the sphere about the origin.
pub fn random_placement<R: Rng + ?Sized>(m: usize, n: usize, radius: f64, rng: &mut R) -> Result<Vec<DVector<f64>>> {
    let h = OrientationMatrix::random(m, n, &vec![1.0; m], rng);
    sensors_from_orientation(&h, &DVector::zeros(n), radius)
}

/// Per-sensor covariance for i.i.d. noise of standard deviation `std`. For
/// TOA and TDOA `std` is one-way range noise (TOA measures twice the range,
/// so its measurement noise is `2·std`); for RSS it is log-power noise.
pub fn iid_noise(model: MeasurementModel, m: usize, std: f64) -> Result<NoiseCovariance> {
    match model {
        MeasurementModel::Toa => NoiseCovariance::scaled_identity(m, 2.0 * std),
        _ => NoiseCovariance::scaled_identity(m, std),
    }
}

/// A designed layout and the solver run that produced it.
#[derive(Debug, Clone)]
pub struct DesignedPlacement {
    pub sensors: Vec<DVector<f64>>,
    /// Orientations of the laid-out sensors; rows may differ in sign from
    /// `result.h_opt`.
    pub orientation: OrientationMatrix,
    /// Design objective of the layout, in unified units.
    pub objective: f64,
    pub result: PlacementResult,
}

/// Sign patterns are searched exhaustively up to this many sensors and
/// greedily beyond.
const EXHAUSTIVE_SIDES_MAX: usize = 12;
const SIDE_TOL: f64 = 1e-9;

fn design_spec(model: MeasurementModel, m: usize, n: usize, ranges: Option<Vec<f64>>) -> Result<ModelSpec> {
    match model {
        MeasurementModel::Toa => ModelSpec::toa(m, n),
        MeasurementModel::Tdoa { reference } => ModelSpec::tdoa(m, n, reference),
        MeasurementModel::Rss { path_loss } => ModelSpec::rss(ranges.expect("rss ranges"), n, path_loss),
    }
}

/// Sensors at `design_point − d_i ĥ_i` for fixed ranges `d_i`.
pub fn sensors_at_ranges(h: &OrientationMatrix, design_point: &DVector<f64>, ranges: &[f64]) -> Vec<DVector<f64>> {
    let hm = h.matrix();
    (0..h.m())
        .map(|i| design_point - hm.row(i).transpose() * (ranges[i] / hm.row(i).norm()))
        .collect()
}

/// Lays `h` out and scores it: design objective and the length of the
/// resultant of the sensor directions.
#[allow(clippy::too_many_arguments)]
fn score_layout(
    h: &OrientationMatrix,
    model: MeasurementModel,
    noise: &NoiseCovariance,
    criterion: Criterion,
    design_point: &DVector<f64>,
    radius: f64,
    ranges: Option<&[f64]>,
) -> Result<(Vec<DVector<f64>>, f64, f64)> {
    let (m, n) = (h.m(), h.n());
    let sensors = match ranges {
        Some(d) => sensors_at_ranges(h, design_point, d),
        None => sensors_from_orientation(h, design_point, radius)?,
    };
    let spec = design_spec(model, m, n, ranges.map(<[f64]>::to_vec))?;
    let phi = build_phi(&spec)?;
    let obj = objective(h, &phi, &effective_covariance(&spec, &phi, noise)?, criterion)?;
    let mut resultant = DVector::zeros(n);
    for i in 0..m {
        resultant += h.matrix().row(i).transpose() / h.matrix().row(i).norm();
    }
    Ok((sensors, obj, resultant.norm()))
}

fn flip(h: &OrientationMatrix, signs: impl Fn(usize) -> bool) -> Result<OrientationMatrix> {
    let mut a = h.matrix().clone();
    for i in 0..h.m() {
        if signs(i) {
            a.row_mut(i).neg_mut();
        }
    }
    let norms: Vec<f64> = (0..h.m()).map(|i| h.matrix().row(i).norm()).collect();
    OrientationMatrix::new(a, &norms)
}

/// Chooses on which side of the design point each sensor sits. Flipping a
/// row leaves the FIM unchanged for diagonal `Φ` and `R` but moves the
/// sensor to the opposite side. The best objective wins; among ties the
/// most balanced set of directions is taken, which avoids co-located
/// sensors and the estimation ambiguities they cause.
#[allow(clippy::too_many_arguments)]
fn choose_sides(
    h: &OrientationMatrix,
    model: MeasurementModel,
    noise: &NoiseCovariance,
    criterion: Criterion,
    design_point: &DVector<f64>,
    radius: f64,
    ranges: Option<&[f64]>,
) -> Result<(OrientationMatrix, Vec<DVector<f64>>, f64)> {
    let m = h.m();
    let score = |h: &OrientationMatrix| score_layout(h, model, noise, criterion, design_point, radius, ranges);
    let better = |a: (f64, f64), b: (f64, f64)| {
        let tol = SIDE_TOL * b.0.abs().max(1.0);
        a.0 < b.0 - tol || (a.0 <= b.0 + tol && a.1 < b.1 - SIDE_TOL)
    };
    if m <= EXHAUSTIVE_SIDES_MAX {
        let mut scored = Vec::with_capacity(1 << m);
        for pattern in 0..1usize << m {
            let hp = flip(h, |i| pattern >> i & 1 == 1)?;
            let (_, obj, res) = score(&hp)?;
            scored.push((pattern, obj, res));
        }
        let best_obj = scored.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        let tol = SIDE_TOL * best_obj.abs().max(1.0);
        let (pattern, ..) = scored
            .iter()
            .filter(|s| s.1 <= best_obj + tol)
            .fold(None::<(usize, f64, f64)>, |acc, s| match acc {
                Some(a) if a.2 <= s.2 + SIDE_TOL => Some(a),
                _ => Some(*s),
            })
            .expect("at least one pattern");
        let hp = flip(h, |i| pattern >> i & 1 == 1)?;
        let (sensors, obj, _) = score(&hp)?;
        return Ok((hp, sensors, obj));
    }
    let mut current = h.clone();
    let (mut sensors, mut obj, mut res) = score(&current)?;
    loop {
        let mut improved = false;
        for i in 0..m {
            let cand = flip(&current, |k| k == i)?;
            let (s, o, r) = score(&cand)?;
            if better((o, r), (obj, res)) {
                (current, sensors, obj, res) = (cand, s, o, r);
                improved = true;
            }
        }
        if !improved {
            return Ok((current, sensors, obj));
        }
    }
}

/// Optimizes orientations as seen from `design_point` and lays the sensors
/// out, choosing each sensor's side as in [`choose_sides`].
///
/// TOA and TDOA information does not depend on range, so sensors are placed
/// on the sphere of `radius` about the origin. For RSS the ranges enter the
/// design: they are measured from `design_point` to the uniform layout on
/// that sphere and each sensor keeps its range, so the layout realizes
/// exactly the ranges the design assumed.
pub fn optimal_placement(
    model: MeasurementModel,
    noise: &NoiseCovariance,
    criterion: Criterion,
    design_point: &DVector<f64>,
    radius: f64,
    config: &SolverConfig,
) -> Result<DesignedPlacement> {
    let (m, n) = (noise.dim(), design_point.len());
    let ranges = match model {
        MeasurementModel::Rss { .. } => Some(
            uniform_placement(m, n, radius)?
                .iter()
                .map(|r| (r - design_point).norm())
                .collect::<Vec<f64>>(),
        ),
        _ => None,
    };
    let spec = design_spec(model, m, n, ranges.clone())?;
    let result = solve_from(&spec, noise, criterion, config, initial_orientation(&spec, config.init))?;
    let (orientation, sensors, objective) = choose_sides(&result.h_opt, model, noise, criterion, design_point, radius, ranges.as_deref())?;
    Ok(DesignedPlacement {
        sensors,
        orientation,
        objective,
        result,
    })
}
