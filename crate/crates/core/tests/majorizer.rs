//! The X-subproblem majorizer is tight at its anchor and lies above the
//! objective elsewhere. The objective is recomputed in the unwhitened
//! variable `X = R^{1/2} Y`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use utmost_core::admm::{SolverState, XSubproblem};
use utmost_core::model::DEGENERATE_FIM_RATIO;
use utmost_core::{criterion_value, Criterion, ModelSpec, NoiseCovariance, OrientationMatrix};

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * rng.random_range(0.05..1.0)
}

fn instance(seed: u64) -> (SolverState, Criterion, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 + (seed as usize % 2);
    let m = n + 1 + rng.random_range(0..5);
    let spec = match seed % 3 {
        0 => ModelSpec::toa(m, n).unwrap(),
        1 => ModelSpec::tdoa(m, n, rng.random_range(0..m)).unwrap(),
        _ => ModelSpec::rss((0..m).map(|_| rng.random_range(0.5..4.0)).collect(), n, 2.0).unwrap(),
    };
    let dim = spec.measurement_dim();
    let r = NoiseCovariance::new(random_spd(&mut rng, dim)).unwrap();
    let h = OrientationMatrix::random(m, n, &vec![1.0; m], &mut rng);
    let rho = 10f64.powf(rng.random_range(-1.0..1.0));
    let mut state = SolverState::new(&spec, r, h, rho).unwrap();
    state.g = DMatrix::from_fn(dim, n, |_, _| rng.random_range(-1.0..1.0));
    let c = [Criterion::A, Criterion::D, Criterion::E][(seed / 3 % 3) as usize];
    (state, c, rng)
}

/// `f((Xᵀ R⁻¹ X)⁻¹) + ρ/2 ‖X‖² − ⟨G + ρ Φ H, X⟩`.
fn objective_in_x(state: &SolverState, c: Criterion, x: &DMatrix<f64>) -> f64 {
    let r_inv = state.covariance().factor().inverse.clone();
    let fim = x.transpose() * r_inv * x;
    let d = &state.g + state.phi().matrix() * state.h.matrix() * state.rho;
    criterion_value(&fim, c) + 0.5 * state.rho * x.norm_squared() - d.dot(x)
}

fn well_conditioned(y: &DMatrix<f64>) -> bool {
    let e = utmost_core::linalg::sym_eigenvalues(&(y.transpose() * y));
    e[0] > 1e3 * DEGENERATE_FIM_RATIO * e[e.len() - 1]
}

#[test]
fn surrogate_tight_at_anchor_and_dominates() {
    let mut worst_gap = 0.0f64;
    for seed in 0..100 {
        let (state, c, mut rng) = instance(seed);
        let sub = XSubproblem::new(&state, state.rho, c);
        let fac = state.covariance().factor();
        let (dim, n) = (state.g.nrows(), state.g.ncols());
        let y_tau = DMatrix::from_fn(dim, n, |_, _| rng.random_range(-2.0..2.0));
        let exact = objective_in_x(&state, c, &(&fac.sqrt * &y_tau));
        let g = sub.surrogate(&y_tau, &y_tau);
        let gap = (g - exact).abs() / exact.abs().max(1.0);
        worst_gap = worst_gap.max(gap);
        assert!(gap <= 1e-10, "seed {seed}: g_L(Y_τ) = {g}, objective {exact}");
        assert!((sub.objective(&y_tau) - exact).abs() <= 1e-10 * exact.abs().max(1.0));

        let mut probes = 0;
        while probes < 50 {
            let y = &y_tau + DMatrix::from_fn(dim, n, |_, _| rng.random_range(-1.0..1.0)) * rng.random_range(0.01..3.0);
            if !well_conditioned(&y) {
                continue;
            }
            probes += 1;
            let f = objective_in_x(&state, c, &(&fac.sqrt * &y));
            let s = sub.surrogate(&y, &y_tau);
            assert!(s >= f - 1e-10 * f.abs().max(1.0), "seed {seed}: surrogate {s} below objective {f}");
        }
    }
    eprintln!("worst relative anchor gap {worst_gap:e}");
}

#[test]
fn surrogate_minimizer_never_increases_objective() {
    for seed in 0..100 {
        let (state, c, mut rng) = instance(seed + 1000);
        let sub = XSubproblem::new(&state, state.rho, c);
        let (dim, n) = (state.g.nrows(), state.g.ncols());
        let mut y = DMatrix::from_fn(dim, n, |_, _| rng.random_range(-2.0..2.0));
        let mut prev = sub.objective(&y);
        for _ in 0..20 {
            y = sub.minimize_surrogate(&y);
            let next = sub.objective(&y);
            assert!(next <= prev + 1e-12 * prev.abs().max(1.0), "seed {seed}: {prev} -> {next}");
            prev = next;
        }
    }
}
