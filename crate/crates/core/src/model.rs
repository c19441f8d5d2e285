//! Localization models, the mapping matrix and the CRLB design criteria.
//!
//! All four measurement models share the Fisher information structure
//! `F = Hᵀ Φᵀ R⁻¹ Φ H`: `Φ` is the identity for TOA, the differencing matrix
//! `K` for TDOA, and the inverse-range diagonal `D` for RSS and AOA. Constant
//! factors (4 for TOA, α² for RSS) do not change the optimal `H` and are
//! dropped from the optimized objective; [`ModelSpec::crlb_scale`] restores
//! them for reporting.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{factor_spd, sym_eigenvalues, SpdFactorization};

/// Tolerance on row norms of an [`OrientationMatrix`].
pub const ROW_NORM_TOL: f64 = 1e-12;
/// A FIM whose smallest eigenvalue is below this fraction of its largest is
/// treated as singular.
pub const DEGENERATE_FIM_RATIO: f64 = 1e-14;

/// Measurement model together with its model-specific parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Toa,
    /// Range differences against the sensor at `reference`.
    Tdoa { reference: usize },
    /// Log-power measurements with path-loss exponent `path_loss`, seen from
    /// sensors at `ranges` meters.
    Rss { ranges: Vec<f64>, path_loss: f64 },
    /// Bearing measurements from sensors at `ranges` meters.
    Aoa { ranges: Vec<f64> },
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Toa => "toa",
            ModelKind::Tdoa { .. } => "tdoa",
            ModelKind::Rss { .. } => "rss",
            ModelKind::Aoa { .. } => "aoa",
        }
    }
}

/// A localization model instance: `m` sensors in `n` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub m: usize,
    pub n: usize,
    /// Per-sensor row norms `c_i`; `None` means unit rows.
    pub row_norms: Option<Vec<f64>>,
}

impl ModelSpec {
    pub fn toa(m: usize, n: usize) -> Result<Self> {
        Self::new(ModelKind::Toa, m, n)
    }

    pub fn tdoa(m: usize, n: usize, reference: usize) -> Result<Self> {
        Self::new(ModelKind::Tdoa { reference }, m, n)
    }

    pub fn rss(ranges: Vec<f64>, n: usize, path_loss: f64) -> Result<Self> {
        let m = ranges.len();
        Self::new(ModelKind::Rss { ranges, path_loss }, m, n)
    }

    pub fn aoa(ranges: Vec<f64>, n: usize) -> Result<Self> {
        let m = ranges.len();
        Self::new(ModelKind::Aoa { ranges }, m, n)
    }

    pub fn new(kind: ModelKind, m: usize, n: usize) -> Result<Self> {
        let spec = ModelSpec {
            kind,
            m,
            n,
            row_norms: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_row_norms(mut self, norms: Vec<f64>) -> Result<Self> {
        self.row_norms = Some(norms);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n != 2 && self.n != 3 {
            return Err(Error::InvalidModel(format!("n must be 2 or 3, got {}", self.n)));
        }
        if self.m < self.n + 1 {
            return Err(Error::InvalidModel(format!(
                "need at least n + 1 = {} sensors, got m = {}",
                self.n + 1,
                self.m
            )));
        }
        match &self.kind {
            ModelKind::Toa => {}
            ModelKind::Tdoa { reference } => {
                if *reference >= self.m {
                    return Err(Error::InvalidModel(format!(
                        "reference index {reference} out of range for m = {}",
                        self.m
                    )));
                }
            }
            ModelKind::Rss { ranges, path_loss } => {
                check_ranges(ranges, self.m)?;
                if !(*path_loss > 0.0 && path_loss.is_finite()) {
                    return Err(Error::InvalidModel(format!("path loss must be positive, got {path_loss}")));
                }
            }
            ModelKind::Aoa { ranges } => check_ranges(ranges, self.m)?,
        }
        if let Some(norms) = &self.row_norms {
            if norms.len() != self.m {
                return Err(Error::InvalidModel(format!(
                    "expected {} row norms, got {}",
                    self.m,
                    norms.len()
                )));
            }
            if let Some(bad) = norms.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
                return Err(Error::InvalidModel(format!("row norms must be positive, got {bad}")));
            }
        }
        Ok(())
    }

    /// Row norms `c_i`, defaulting to ones.
    pub fn norms(&self) -> Vec<f64> {
        self.row_norms.clone().unwrap_or_else(|| vec![1.0; self.m])
    }

    /// Number of (possibly differenced) measurements, i.e. rows of `Φ`.
    pub fn measurement_dim(&self) -> usize {
        match self.kind {
            ModelKind::Tdoa { .. } => self.m - 1,
            _ => self.m,
        }
    }

    /// Factor `s` such that the model CRLB equals `s · C(H)`.
    pub fn crlb_scale(&self) -> f64 {
        match &self.kind {
            ModelKind::Toa => 0.25,
            ModelKind::Rss { path_loss, .. } => 1.0 / (path_loss * path_loss),
            ModelKind::Tdoa { .. } | ModelKind::Aoa { .. } => 1.0,
        }
    }
}

fn check_ranges(ranges: &[f64], m: usize) -> Result<()> {
    if ranges.len() != m {
        return Err(Error::InvalidModel(format!("expected {m} ranges, got {}", ranges.len())));
    }
    if let Some(bad) = ranges.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidModel(format!("ranges must be positive, got {bad}")));
    }
    Ok(())
}

/// The model-dependent linear map `Φ` between orientations and measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingMatrix(pub DMatrix<f64>);

impl MappingMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// True when `Φ` is diagonal, so the H-update separates by rows.
    pub fn is_diagonal(&self) -> bool {
        let phi = &self.0;
        phi.is_square() && (0..phi.nrows()).all(|i| (0..phi.ncols()).all(|j| i == j || phi[(i, j)] == 0.0))
    }
}

/// Builds `Φ` for a model.
pub fn build_phi(spec: &ModelSpec) -> Result<MappingMatrix> {
    spec.validate()?;
    let m = spec.m;
    let phi = match &spec.kind {
        ModelKind::Toa => DMatrix::identity(m, m),
        ModelKind::Tdoa { reference } => {
            let mut k = DMatrix::zeros(m - 1, m);
            for (row, other) in (0..m).filter(|j| j != reference).enumerate() {
                k[(row, *reference)] = -1.0;
                k[(row, other)] = 1.0;
            }
            k
        }
        ModelKind::Rss { ranges, .. } | ModelKind::Aoa { ranges } => {
            DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 / ranges[i] } else { 0.0 })
        }
    };
    Ok(MappingMatrix(phi))
}

/// A validated symmetric positive-definite noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCovariance {
    matrix: DMatrix<f64>,
    factor: SpdFactorization,
}

impl NoiseCovariance {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let factor = factor_spd(&matrix)?;
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        Ok(NoiseCovariance { matrix, factor })
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim)).expect("identity is SPD")
    }

    /// `υ² I`.
    pub fn scaled_identity(dim: usize, upsilon: f64) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim) * (upsilon * upsilon))
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        Self::new(DMatrix::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 }))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn factor(&self) -> &SpdFactorization {
        &self.factor
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(&self.matrix * s)
    }
}

/// Forms `K Σ Kᵀ` from a per-sensor range-noise covariance `Σ`.
pub fn tdoa_covariance(range_noise: &NoiseCovariance, phi: &MappingMatrix) -> Result<NoiseCovariance> {
    let k = phi.matrix();
    if k.ncols() != range_noise.dim() || k.nrows() + 1 != k.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "TDOA mapping is {}x{}, range covariance is {}x{}",
            k.nrows(),
            k.ncols(),
            range_noise.dim(),
            range_noise.dim()
        )));
    }
    NoiseCovariance::new(k * range_noise.matrix() * k.transpose())
}

/// An `m x n` matrix of sensor-to-target directions, row `i` of norm `c_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationMatrix(DMatrix<f64>);

impl OrientationMatrix {
    /// Wraps `h` after checking each row norm against `norms`.
    pub fn new(h: DMatrix<f64>, norms: &[f64]) -> Result<Self> {
        if norms.len() != h.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} rows but {} norms",
                h.nrows(),
                norms.len()
            )));
        }
        for (i, &c) in norms.iter().enumerate() {
            let norm = h.row(i).norm();
            if !((norm - c).abs() <= ROW_NORM_TOL * c.max(1.0)) {
                return Err(Error::RowNorm {
                    row: i,
                    norm,
                    expected: c,
                });
            }
        }
        Ok(OrientationMatrix(h))
    }

    /// Rescales each row of `h` to norm `norms[i]`.
    pub fn normalized(mut h: DMatrix<f64>, norms: &[f64]) -> Result<Self> {
        for i in 0..h.nrows() {
            let norm = h.row(i).norm();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::ZeroRow { row: i });
            }
            let s = norms[i] / norm;
            h.row_mut(i).scale_mut(s);
        }
        Ok(OrientationMatrix(h))
    }

    /// The ±axis pattern `e_1, …, e_n, −e_1, …, −e_n`, repeated cyclically
    /// for `m > 2n` and truncated for `m < 2n`.
    pub fn uniform(m: usize, n: usize, norms: &[f64]) -> Self {
        let h = DMatrix::from_fn(m, n, |i, j| {
            let slot = i % (2 * n);
            let axis = slot % n;
            let sign = if slot < n { 1.0 } else { -1.0 };
            if axis == j {
                sign * norms[i]
            } else {
                0.0
            }
        });
        OrientationMatrix(h)
    }

    /// Rows drawn uniformly on the sphere (circle for `n = 2`).
    pub fn random<R: Rng + ?Sized>(m: usize, n: usize, norms: &[f64], rng: &mut R) -> Self {
        let mut h = DMatrix::zeros(m, n);
        for i in 0..m {
            loop {
                let row: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1e-8 {
                    for (j, v) in row.iter().enumerate() {
                        h[(i, j)] = v / norm * norms[i];
                    }
                    break;
                }
            }
        }
        OrientationMatrix(h)
    }

    pub(crate) fn from_matrix_unchecked(h: DMatrix<f64>) -> Self {
        OrientationMatrix(h)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn m(&self) -> usize {
        self.0.nrows()
    }

    pub fn n(&self) -> usize {
        self.0.ncols()
    }

    /// Largest deviation of a row norm from its target.
    pub fn max_norm_error(&self, norms: &[f64]) -> f64 {
        (0..self.m())
            .map(|i| (self.0.row(i).norm() - norms[i]).abs())
            .fold(0.0, f64::max)
    }
}

/// Scalar design criterion applied to the CRLB matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Criterion {
    /// Trace of the CRLB.
    A,
    /// Natural-log determinant of the CRLB.
    D,
    /// Largest eigenvalue of the CRLB.
    E,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::A, Criterion::D, Criterion::E];
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Criterion::A => "A",
            Criterion::D => "D",
            Criterion::E => "E",
        };
        f.write_str(s)
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Criterion::A),
            "D" => Ok(Criterion::D),
            "E" => Ok(Criterion::E),
            other => Err(Error::InvalidModel(format!("unknown criterion '{other}'"))),
        }
    }
}

/// `Hᵀ Φᵀ R⁻¹ Φ H`, symmetrized.
pub fn fim(h: &OrientationMatrix, phi: &MappingMatrix, r: &NoiseCovariance) -> Result<DMatrix<f64>> {
    fim_raw(h.matrix(), phi.matrix(), r.factor().inverse.clone())
}

pub(crate) fn fim_raw(h: &DMatrix<f64>, phi: &DMatrix<f64>, r_inv: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if phi.ncols() != h.nrows() || r_inv.nrows() != phi.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "H is {}x{}, Φ is {}x{}, R is {}x{}",
            h.nrows(),
            h.ncols(),
            phi.nrows(),
            phi.ncols(),
            r_inv.nrows(),
            r_inv.ncols()
        )));
    }
    let ph = phi * h;
    let f = ph.transpose() * r_inv * &ph;
    Ok((&f + f.transpose()) * 0.5)
}

/// `f(F⁻¹)` for the chosen criterion; `+∞` when `F` is numerically singular.
pub fn criterion_value(fim: &DMatrix<f64>, criterion: Criterion) -> f64 {
    let eig = sym_eigenvalues(fim);
    let lmin = eig[0];
    let lmax = eig[eig.len() - 1];
    if !(lmax > 0.0) || lmin <= DEGENERATE_FIM_RATIO * lmax || eig.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    match criterion {
        Criterion::A => eig.iter().map(|l| 1.0 / l).sum(),
        Criterion::D => -eig.iter().map(|l| l.ln()).sum::<f64>(),
        Criterion::E => 1.0 / lmin,
    }
}

/// Applies the model constant `s` (CRLB = `s · C(H)`) to a unified value.
pub fn scale_criterion(value: f64, criterion: Criterion, scale: f64, n: usize) -> f64 {
    match criterion {
        Criterion::A | Criterion::E => value * scale,
        Criterion::D => value + n as f64 * scale.ln(),
    }
}

/// Design objective `f(C(H))` of an orientation matrix.
pub fn objective(h: &OrientationMatrix, phi: &MappingMatrix, r: &NoiseCovariance, criterion: Criterion) -> Result<f64> {
    Ok(criterion_value(&fim(h, phi, r)?, criterion))
}

/// Closed-form optimum for `R = υ² I`, `Φ = I`, `n = 3`, where the optimal
/// FIM is `m / (3υ²) · I`.
pub fn theoretical_optimum(m: usize, upsilon: f64, criterion: Criterion) -> f64 {
    let m = m as f64;
    let v2 = upsilon * upsilon;
    match criterion {
        Criterion::A => 9.0 * v2 / m,
        // log det((m / 3υ²)⁻¹ I₃) = ln(27 υ⁶ / m³)
        Criterion::D => (27.0 * v2 * v2 * v2 / (m * m * m)).ln(),
        Criterion::E => 3.0 * v2 / m,
    }
}

/// Azimuth and (for 3-D) elevation of a sensor direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Angles {
    /// Radians in `(−π, π]`.
    pub azimuth: f64,
    /// Radians in `[−π/2, π/2]`; `None` in 2-D.
    pub elevation: Option<f64>,
}

fn azimuth(y: f64, x: f64) -> f64 {
    let a = y.atan2(x);
    if a <= -PI {
        PI
    } else {
        a
    }
}

/// Per-row azimuth/elevation. At the poles the azimuth is 0.
pub fn orientation_to_angles(h: &OrientationMatrix) -> Result<Vec<Angles>> {
    let mat = h.matrix();
    (0..mat.nrows())
        .map(|i| {
            let row = mat.row(i);
            let norm = row.norm();
            if !(norm > 0.0) {
                return Err(Error::ZeroRow { row: i });
            }
            Ok(match mat.ncols() {
                2 => Angles {
                    azimuth: azimuth(row[1], row[0]),
                    elevation: None,
                },
                _ => {
                    let (x, y, z) = (row[0], row[1], row[2]);
                    let az = if x == 0.0 && y == 0.0 { 0.0 } else { azimuth(y, x) };
                    Angles {
                        azimuth: az,
                        elevation: Some((z / norm).clamp(-1.0, 1.0).asin()),
                    }
                }
            })
        })
        .collect()
}

/// Inverse of [`orientation_to_angles`] for a single row of norm `norm`.
pub fn angles_to_row(angles: Angles, norm: f64) -> Vec<f64> {
    match angles.elevation {
        None => vec![norm * angles.azimuth.cos(), norm * angles.azimuth.sin()],
        Some(el) => vec![
            norm * el.cos() * angles.azimuth.cos(),
            norm * el.cos() * angles.azimuth.sin(),
            norm * el.sin(),
        ],
    }
}
