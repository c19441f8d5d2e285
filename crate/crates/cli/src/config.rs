//! JSON run configuration and its validation into core types.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use utmost_core::sim::{iid_noise, GridSpec, MeasurementModel, DEFAULT_NOISE_STD};
use utmost_core::admm::RhoAdaptation;
use utmost_core::{Criterion, Error, Init, ModelSpec, NoiseCovariance, SolverConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelName {
    Toa,
    Tdoa,
    Rss,
    Aoa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum CriterionName {
    A,
    D,
    E,
}

impl From<CriterionName> for Criterion {
    fn from(c: CriterionName) -> Self {
        match c {
            CriterionName::A => Criterion::A,
            CriterionName::D => Criterion::D,
            CriterionName::E => Criterion::E,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitName {
    #[default]
    Uniform,
    Random,
}

/// `"identity"`, `{"scaled": υ}` (`υ² I`), `{"diag": [..]}` or
/// `{"matrix": [[..], ..]}`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseConfig {
    Identity,
    Scaled(f64),
    Diag(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    pub max_outer: Option<usize>,
    pub tol_primal: Option<f64>,
    pub tol_dual: Option<f64>,
    pub mm_x_max: Option<usize>,
    pub mm_x_tol: Option<f64>,
    pub mm_h_max: Option<usize>,
    pub mm_h_tol: Option<f64>,
    /// `false` keeps `ρ` fixed.
    pub adapt_rho: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlacementName {
    /// Designed at the true target.
    Optimal,
    /// Designed at `coarse_target`.
    Coarse,
    Uniform,
    Random,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomPlacement {
    pub name: String,
    pub sensors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    /// Half width of a cube about the origin; ignored when bounds are given.
    pub half_width: Option<f64>,
    pub resolution: Option<usize>,
    pub gn_iters: Option<usize>,
    pub gn_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub target: Vec<f64>,
    pub trials: usize,
    /// Radius of the circle or sphere the layouts sit on.
    pub radius: Option<f64>,
    /// i.i.d. noise level; overrides the top-level `noise`.
    pub noise_std: Option<f64>,
    #[serde(default)]
    pub noiseless: bool,
    pub seed: Option<u64>,
    #[serde(default)]
    pub grid: GridConfig,
    pub placements: Option<Vec<PlacementName>>,
    pub coarse_target: Option<Vec<f64>>,
    #[serde(default)]
    pub custom: Vec<CustomPlacement>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelName,
    pub m: usize,
    pub n: usize,
    #[serde(default = "default_criterion")]
    pub criterion: CriterionName,
    pub noise: Option<NoiseConfig>,
    pub reference: Option<usize>,
    pub ranges: Option<Vec<f64>>,
    pub path_loss: Option<f64>,
    pub row_norms: Option<Vec<f64>>,
    pub rho: Option<f64>,
    #[serde(default)]
    pub init: InitName,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerances: SolverOptions,
    pub simulate: Option<SimulateConfig>,
}

fn default_criterion() -> CriterionName {
    CriterionName::A
}

/// A configuration checked against the core constructors.
#[derive(Debug, Clone)]
pub struct Validated {
    pub spec: ModelSpec,
    pub noise: NoiseCovariance,
    pub criterion: Criterion,
    pub solver: SolverConfig,
    pub simulate: Option<SimPlan>,
}

#[derive(Debug, Clone)]
pub struct SimPlan {
    pub model: MeasurementModel,
    pub target: DVector<f64>,
    pub trials: usize,
    pub seed: u64,
    pub radius: f64,
    /// Per-sensor measurement noise.
    pub noise: NoiseCovariance,
    /// Reported level of i.i.d. noise; `None` for a user matrix.
    pub noise_std: Option<f64>,
    pub noiseless: bool,
    pub grid: GridSpec,
    pub placements: Vec<PlacementName>,
    pub coarse_target: DVector<f64>,
    pub custom: Vec<(String, Vec<DVector<f64>>)>,
}

pub fn load(path: &Path) -> CliResult<Validated> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text)?.validate()
}

/// Parses JSON, reporting the path of the first offending field.
pub fn parse(text: &str) -> CliResult<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "config".to_string() } else { path };
        CliError::field(field, e.into_inner().to_string())
    })
}

fn finite_positive(field: &str, v: f64) -> CliResult<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::field(field, format!("must be positive and finite, got {v}")))
    }
}

fn positive_list(field: &str, values: &[f64], len: usize) -> CliResult<()> {
    if values.len() != len {
        return Err(CliError::field(field, format!("expected {len} entries, got {}", values.len())));
    }
    for (i, v) in values.iter().enumerate() {
        finite_positive(&format!("{field}[{i}]"), *v)?;
    }
    Ok(())
}

fn vector(field: &str, values: &[f64], n: usize) -> CliResult<DVector<f64>> {
    if values.len() != n {
        return Err(CliError::field(field, format!("expected {n} coordinates, got {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::field(field, "coordinates must be finite"));
    }
    Ok(DVector::from_column_slice(values))
}

fn noise_error(field: &str, e: Error) -> CliError {
    CliError::field(field, e.to_string())
}

impl NoiseConfig {
    /// Builds the covariance; `dims` lists the accepted sizes, the first being
    /// the one used for `identity` and `scaled`.
    fn build(&self, dims: &[usize]) -> CliResult<NoiseCovariance> {
        let check = |field: &str, d: usize| -> CliResult<()> {
            if dims.contains(&d) {
                Ok(())
            } else {
                let want: Vec<String> = dims.iter().map(|d| format!("{d}x{d}")).collect();
                Err(CliError::field(field, format!("covariance is {d}x{d}, expected {}", want.join(" or "))))
            }
        };
        match self {
            NoiseConfig::Identity => Ok(NoiseCovariance::identity(dims[0])),
            NoiseConfig::Scaled(u) => {
                finite_positive("noise.scaled", *u)?;
                NoiseCovariance::scaled_identity(dims[0], *u).map_err(|e| noise_error("noise.scaled", e))
            }
            NoiseConfig::Diag(d) => {
                check("noise.diag", d.len())?;
                for (i, v) in d.iter().enumerate() {
                    finite_positive(&format!("noise.diag[{i}]"), *v)?;
                }
                NoiseCovariance::diagonal(d).map_err(|e| noise_error("noise.diag", e))
            }
            NoiseConfig::Matrix(rows) => {
                let d = rows.len();
                check("noise.matrix", d)?;
                if let Some(i) = rows.iter().position(|r| r.len() != d) {
                    return Err(CliError::field(
                        format!("noise.matrix[{i}]"),
                        format!("row has {} entries, expected {d}", rows[i].len()),
                    ));
                }
                if rows.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(CliError::field("noise.matrix", "entries must be finite"));
                }
                let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
                NoiseCovariance::new(m).map_err(|e| noise_error("noise.matrix", e))
            }
        }
    }
}

impl RunConfig {
    fn spec(&self) -> CliResult<ModelSpec> {
        let (m, n) = (self.m, self.n);
        if n != 2 && n != 3 {
            return Err(CliError::field("n", format!("must be 2 or 3, got {n}")));
        }
        if m < n + 1 {
            return Err(CliError::field("m", format!("need at least n + 1 = {} sensors, got {m}", n + 1)));
        }
        let needs_ranges = matches!(self.model, ModelName::Rss | ModelName::Aoa);
        if !needs_ranges && self.ranges.is_some() && self.simulate.is_none() {
            return Err(CliError::field("ranges", format!("not used by {:?}", self.model)));
        }
        let ranges = || -> CliResult<Vec<f64>> {
            // simulated designs measure their own ranges from the layout
            let r = match (&self.ranges, &self.simulate) {
                (Some(r), _) => r.clone(),
                (None, Some(_)) => vec![1.0; m],
                (None, None) => return Err(CliError::field("ranges", "required for rss and aoa")),
            };
            positive_list("ranges", &r, m)?;
            Ok(r)
        };
        let spec = match self.model {
            ModelName::Toa => ModelSpec::toa(m, n),
            ModelName::Tdoa => {
                let reference = self.reference.unwrap_or(0);
                if reference >= m {
                    return Err(CliError::field("reference", format!("must be below m = {m}, got {reference}")));
                }
                ModelSpec::tdoa(m, n, reference)
            }
            ModelName::Rss => {
                let alpha = finite_positive("path_loss", self.path_loss.unwrap_or(2.0))?;
                ModelSpec::rss(ranges()?, n, alpha)
            }
            ModelName::Aoa => ModelSpec::aoa(ranges()?, n),
        }
        .map_err(|e| CliError::field("model", e.to_string()))?;
        match &self.row_norms {
            None => Ok(spec),
            Some(norms) => {
                positive_list("row_norms", norms, m)?;
                spec.with_row_norms(norms.clone()).map_err(|e| CliError::field("row_norms", e.to_string()))
            }
        }
    }

    fn solver(&self) -> CliResult<SolverConfig> {
        let o = &self.tolerances;
        let d = SolverConfig::default();
        let rho = finite_positive("rho", self.rho.unwrap_or(d.rho))?;
        let adapt = match o.adapt_rho {
            Some(false) => None,
            _ => {
                let a = RhoAdaptation::default();
                if !(a.min_rho..=a.max_rho).contains(&rho) {
                    return Err(CliError::field("rho", format!("must lie in [{}, {}] with adaptation on", a.min_rho, a.max_rho)));
                }
                Some(a)
            }
        };
        let cfg = SolverConfig {
            rho,
            max_outer: o.max_outer.unwrap_or(d.max_outer),
            tol_primal: o.tol_primal.unwrap_or(d.tol_primal),
            tol_dual: o.tol_dual.unwrap_or(d.tol_dual),
            mm_x_max: o.mm_x_max.unwrap_or(d.mm_x_max),
            mm_x_tol: o.mm_x_tol.unwrap_or(d.mm_x_tol),
            mm_h_max: o.mm_h_max.unwrap_or(d.mm_h_max),
            mm_h_tol: o.mm_h_tol.unwrap_or(d.mm_h_tol),
            init: match self.init {
                InitName::Uniform => Init::Uniform,
                InitName::Random => Init::RandomSeeded(self.seed),
            },
            adapt_rho: adapt,
        };
        cfg.validate().map_err(|e| {
            let msg = e.to_string();
            let field = ["max_outer", "tol_primal", "tol_dual", "mm_x_max", "mm_x_tol", "mm_h_max", "mm_h_tol"]
                .into_iter()
                .find(|f| msg.contains(f))
                .map_or_else(|| "tolerances".to_string(), |f| format!("tolerances.{f}"));
            CliError::field(field, msg)
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<Validated> {
        let spec = self.spec()?;
        let dims = match spec.kind {
            utmost_core::ModelKind::Tdoa { .. } => vec![self.m, self.m - 1],
            _ => vec![self.m],
        };
        let noise = self.noise.as_ref().unwrap_or(&NoiseConfig::Identity).build(&dims)?;
        let solver = self.solver()?;
        let simulate = self.simulate.as_ref().map(|s| self.sim_plan(s, &spec)).transpose()?;
        Ok(Validated {
            spec,
            noise,
            criterion: self.criterion.into(),
            solver,
            simulate,
        })
    }

    fn sim_plan(&self, s: &SimulateConfig, spec: &ModelSpec) -> CliResult<SimPlan> {
        let (m, n) = (self.m, self.n);
        let model = match self.model {
            ModelName::Toa => MeasurementModel::Toa,
            ModelName::Tdoa => MeasurementModel::Tdoa {
                reference: self.reference.unwrap_or(0),
            },
            ModelName::Rss => match spec.kind {
                utmost_core::ModelKind::Rss { path_loss, .. } => MeasurementModel::Rss { path_loss },
                _ => unreachable!("rss spec"),
            },
            ModelName::Aoa => return Err(CliError::field("model", "aoa scenarios cannot be simulated")),
        };
        let target = vector("simulate.target", &s.target, n)?;
        if s.trials == 0 {
            return Err(CliError::field("simulate.trials", "must be at least 1"));
        }
        let radius = finite_positive("simulate.radius", s.radius.unwrap_or(1.0))?;
        let coarse_target = match &s.coarse_target {
            Some(c) => vector("simulate.coarse_target", c, n)?,
            None => DVector::zeros(n),
        };
        let (noise, noise_std) = match (s.noise_std, &self.noise) {
            (Some(std), _) => (
                iid_noise(model, m, finite_positive("simulate.noise_std", std)?).map_err(|e| noise_error("simulate.noise_std", e))?,
                Some(std),
            ),
            (None, Some(cfg)) => (cfg.build(&[m])?, None),
            (None, None) => (
                iid_noise(model, m, DEFAULT_NOISE_STD).map_err(|e| noise_error("simulate.noise_std", e))?,
                Some(DEFAULT_NOISE_STD),
            ),
        };
        let g = &s.grid;
        let mut grid = match (&g.lower, &g.upper) {
            (Some(lo), Some(hi)) => {
                let lower = vector("simulate.grid.lower", lo, n)?;
                let upper = vector("simulate.grid.upper", hi, n)?;
                GridSpec {
                    lower: lower.as_slice().to_vec(),
                    upper: upper.as_slice().to_vec(),
                    ..GridSpec::cube(&vec![0.0; n], 1.0)
                }
            }
            (None, None) => GridSpec::cube(&vec![0.0; n], finite_positive("simulate.grid.half_width", g.half_width.unwrap_or(2.0 * radius))?),
            (Some(_), None) => return Err(CliError::field("simulate.grid.upper", "required together with lower")),
            (None, Some(_)) => return Err(CliError::field("simulate.grid.lower", "required together with upper")),
        };
        if let Some(r) = g.resolution {
            grid.resolution = r;
        }
        if let Some(k) = g.gn_iters {
            grid.gn_iters = k;
        }
        if let Some(t) = g.gn_tol {
            grid.gn_tol = t;
        }
        grid.validate(n).map_err(|e| CliError::field("simulate.grid", e.to_string()))?;
        if target.iter().zip(grid.lower.iter().zip(&grid.upper)).any(|(t, (lo, hi))| t < lo || t > hi) {
            return Err(CliError::field("simulate.target", "lies outside the search grid"));
        }
        let placements = s
            .placements
            .clone()
            .unwrap_or_else(|| vec![PlacementName::Optimal, PlacementName::Uniform, PlacementName::Random]);
        for p in &placements {
            let point = match p {
                PlacementName::Optimal => &target,
                PlacementName::Coarse => &coarse_target,
                _ => continue,
            };
            if point.norm() >= radius {
                let field = if *p == PlacementName::Coarse { "simulate.coarse_target" } else { "simulate.target" };
                return Err(CliError::field(field, format!("designed placements need a point inside radius {radius}")));
            }
        }
        let mut custom = Vec::with_capacity(s.custom.len());
        for (k, c) in s.custom.iter().enumerate() {
            if c.sensors.len() != m {
                return Err(CliError::field(
                    format!("simulate.custom[{k}].sensors"),
                    format!("expected {m} sensors, got {}", c.sensors.len()),
                ));
            }
            let sensors = c
                .sensors
                .iter()
                .enumerate()
                .map(|(i, p)| vector(&format!("simulate.custom[{k}].sensors[{i}]"), p, n))
                .collect::<CliResult<Vec<_>>>()?;
            custom.push((c.name.clone(), sensors));
        }
        Ok(SimPlan {
            model,
            target,
            trials: s.trials,
            seed: s.seed.unwrap_or(self.seed),
            radius,
            noise,
            noise_std,
            noiseless: s.noiseless,
            grid,
            placements,
            coarse_target,
            custom,
        })
    }
}
