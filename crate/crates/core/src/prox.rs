//! Scalar subproblems that diagonalize the X-update.
//!
//! After the SVD `A = U diag(σ) Vᵀ` the majorizer of the X-subproblem depends
//! only on the singular values `γ` of `Y = U diag(γ) Vᵀ`:
//!
//! * A: `Σ γ⁻² + (ρλ/2) γ² − σ γ`
//! * D: `Σ −2 ln γ + (ρλ/2) γ² − σ γ`
//! * E: `max γ⁻² + Σ (ρλ/2) γ² − σ γ`
//!
//! where `ρλ = ρ · λ_max(R)`.

use crate::linalg::positive_quartic_root;
use crate::model::Criterion;

/// Singular values of `A_{k,τ}` together with `ρ · λ_max(R)`.
#[derive(Debug, Clone, Copy)]
pub struct ProxInput<'a> {
    pub sigmas: &'a [f64],
    pub rho_lambda: f64,
}

impl<'a> ProxInput<'a> {
    pub fn new(sigmas: &'a [f64], rho_lambda: f64) -> Self {
        debug_assert!(rho_lambda > 0.0);
        debug_assert!(sigmas.iter().all(|s| *s >= 0.0));
        ProxInput { sigmas, rho_lambda }
    }
}

/// Solution of the E-criterion epigraph program
/// `min t + (ρλ/2) Σ θ − Σ σ √θ  s.t.  1/θ_i ≤ t`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpigraphSolution {
    pub thetas: Vec<f64>,
    pub t: f64,
    pub objective: f64,
}

pub fn prox_a(input: ProxInput<'_>) -> Vec<f64> {
    input
        .sigmas
        .iter()
        .map(|&s| positive_quartic_root(input.rho_lambda, s))
        .collect()
}

/// Positive root of `ρλ γ² − σ γ − 2 = 0`.
pub fn prox_d(input: ProxInput<'_>) -> Vec<f64> {
    let rl = input.rho_lambda;
    input
        .sigmas
        .iter()
        .map(|&s| (s + (s * s + 8.0 * rl).sqrt()) / (2.0 * rl))
        .collect()
}

pub fn prox_e(input: ProxInput<'_>) -> Vec<f64> {
    solve_epigraph(input).thetas.iter().map(|t| t.sqrt()).collect()
}

pub fn prox(criterion: Criterion, input: ProxInput<'_>) -> Vec<f64> {
    match criterion {
        Criterion::A => prox_a(input),
        Criterion::D => prox_d(input),
        Criterion::E => prox_e(input),
    }
}

/// Minimizer of `(ρλ/2) θ − σ √θ` over `θ ≥ 1/t`.
pub fn epigraph_inner(t: f64, sigma: f64, rho_lambda: f64) -> f64 {
    let root = sigma / rho_lambda;
    (root * root).max(1.0 / t)
}

fn inner_value(theta: f64, sigma: f64, rho_lambda: f64) -> f64 {
    0.5 * rho_lambda * theta - sigma * theta.sqrt()
}

/// `g(t) = t + Σ_i min_{θ_i ≥ 1/t} (ρλ/2) θ_i − σ_i √θ_i`, convex in `t`.
pub fn epigraph_reduced(t: f64, input: ProxInput<'_>) -> f64 {
    t + input
        .sigmas
        .iter()
        .map(|&s| inner_value(epigraph_inner(t, s, input.rho_lambda), s, input.rho_lambda))
        .sum::<f64>()
}

const GOLDEN_MAX_ITER: usize = 200;
const GOLDEN_WIDTH: f64 = 1e-12;

/// Solves the epigraph program by golden-section search on `ln t` over the
/// reduced function.
///
/// Bracket: with `G = g(1)` and `Q = Σ σ²/(2ρλ)`, any minimizer satisfies
/// `t ≤ G + Q`. Below `t_c = 1 / max θ_unc` every clamp is active and
/// `g(t) ≥ (nρλ/2)/t − (Σσ)/√t`, which exceeds `max(G, 0)` once `t` drops under
/// the positive root of that quadratic in `1/√t`.
pub fn solve_epigraph(input: ProxInput<'_>) -> EpigraphSolution {
    let rl = input.rho_lambda;
    let n = input.sigmas.len();
    if n == 0 {
        return EpigraphSolution {
            thetas: Vec::new(),
            t: 0.0,
            objective: 0.0,
        };
    }
    let g = |t: f64| epigraph_reduced(t, input);
    let g1 = g(1.0);
    let quad: f64 = input.sigmas.iter().map(|s| s * s / (2.0 * rl)).sum();
    let sum_sigma: f64 = input.sigmas.iter().sum();
    let t_hi = (g1 + quad).max(1.0) * 2.0;

    let max_unc = input.sigmas.iter().map(|s| (s / rl) * (s / rl)).fold(0.0, f64::max);
    let t_c = if max_unc > 0.0 { 1.0 / max_unc } else { f64::INFINITY };
    let nrl = n as f64 * rl;
    let u0 = (sum_sigma + (sum_sigma * sum_sigma + 2.0 * nrl * g1.max(0.0)).sqrt()) / nrl;
    let t_lo = (t_c.min(1.0 / (u0 * u0)) * 0.5).max(f64::MIN_POSITIVE).min(t_hi * 0.5);

    // golden section in s = ln t; g is quasi-convex in s
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (t_lo.ln(), t_hi.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = g(c.exp());
    let mut fd = g(d.exp());
    for _ in 0..GOLDEN_MAX_ITER {
        if b - a <= GOLDEN_WIDTH {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = g(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = g(d.exp());
        }
    }
    let t_best = polish(if fc <= fd { c.exp() } else { d.exp() }, t_lo, t_hi, input);
    let thetas: Vec<f64> = input.sigmas.iter().map(|&s| epigraph_inner(t_best, s, rl)).collect();
    // tighten t onto the active constraint; never increases the objective
    let t = thetas.iter().map(|th| 1.0 / th).fold(0.0, f64::max);
    let objective = t + thetas
        .iter()
        .zip(input.sigmas)
        .map(|(&th, &s)| inner_value(th, s, rl))
        .sum::<f64>();
    EpigraphSolution { thetas, t, objective }
}

/// Right derivative of [`epigraph_reduced`]; nondecreasing in `t`.
pub fn epigraph_slope(t: f64, input: ProxInput<'_>) -> f64 {
    let rl = input.rho_lambda;
    let clamped: f64 = input
        .sigmas
        .iter()
        .filter(|&&s| s * t.sqrt() < rl)
        .map(|&s| (rl - s * t.sqrt()) / (2.0 * t * t))
        .sum();
    1.0 - clamped
}

/// Value comparisons leave the golden-section argmin accurate only to about
/// `√ε`; bisection on the sign of the slope recovers full precision.
fn polish(t0: f64, t_lo: f64, t_hi: f64, input: ProxInput<'_>) -> f64 {
    let slope = |t: f64| epigraph_slope(t, input);
    let (mut lo, mut hi) = (t0, t0);
    let mut step = 1e-6;
    while slope(lo) > 0.0 && lo > t_lo {
        lo = (t0 * (1.0 - step)).max(t_lo);
        step *= 4.0;
        if step >= 1.0 {
            lo = t_lo;
        }
    }
    step = 1e-6;
    while slope(hi) < 0.0 && hi < t_hi {
        hi = (t0 * (1.0 + step)).min(t_hi);
        step *= 4.0;
    }
    if slope(lo) > 0.0 || slope(hi) < 0.0 {
        return t0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// The separable surrogate over singular values for `criterion`.
pub fn spectral_surrogate(criterion: Criterion, gammas: &[f64], input: ProxInput<'_>) -> f64 {
    let rl = input.rho_lambda;
    let quad: f64 = gammas
        .iter()
        .zip(input.sigmas)
        .map(|(&g, &s)| 0.5 * rl * g * g - s * g)
        .sum();
    let barrier = match criterion {
        Criterion::A => gammas.iter().map(|g| 1.0 / (g * g)).sum(),
        Criterion::D => gammas.iter().map(|g| -2.0 * g.ln()).sum(),
        Criterion::E => gammas.iter().map(|g| 1.0 / (g * g)).fold(0.0, f64::max),
    };
    barrier + quad
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> (f64, f64) {
        let mut best = (lo, f(lo));
        let mut x = lo;
        while x <= hi {
            let v = f(x);
            if v < best.1 {
                best = (x, v);
            }
            x += step;
        }
        best
    }

    #[test]
    fn prox_a_examples() {
        assert_eq!(prox_a(ProxInput::new(&[0.0, 0.0, 0.0], 2.0)), vec![1.0, 1.0, 1.0]);
        let phi = |s: f64| move |g: f64| 1.0 / (g * g) + 0.5 * g * g - s * g;
        let (g1, _) = grid_argmin(phi(1.0), 1e-4, 20.0, 1e-4);
        let got = prox_a(ProxInput::new(&[1.0], 1.0));
        assert!((got[0] - g1).abs() <= 1e-4);
        let got = prox_a(ProxInput::new(&[10.0, 1.0], 1.0));
        let (g10, _) = grid_argmin(phi(10.0), 1e-4, 20.0, 1e-4);
        assert!((got[0] - g10).abs() <= 1e-4 && (got[1] - g1).abs() <= 1e-4);
    }

    #[test]
    fn prox_d_examples() {
        assert_eq!(prox_d(ProxInput::new(&[0.0], 2.0)), vec![1.0]);
        let g = prox_d(ProxInput::new(&[2.0], 1.0))[0];
        assert!((g - (1.0 + 3f64.sqrt())).abs() < 1e-15);
        let sig = [5.0, 3.0, 1.0];
        let got = prox_d(ProxInput::new(&sig, 0.5));
        for (i, &s) in sig.iter().enumerate() {
            let (x, _) = grid_argmin(|g| -2.0 * g.ln() + 0.25 * g * g - s * g, 1e-4, 30.0, 1e-4);
            assert!((got[i] - x).abs() <= 1e-4);
            assert!((0.5 * got[i] - s - 2.0 / got[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn inner_clamp_examples() {
        assert_eq!(epigraph_inner(1.0, 0.0, 1.0), 1.0);
        assert_eq!(epigraph_inner(0.1, 4.0, 1.0), 16.0);
        assert_eq!(epigraph_inner(0.01, 1.0, 1.0), 100.0);
        // 1-D grid over the feasible ray θ ≥ 1/t
        for (t, s) in [(0.1, 4.0), (0.01, 1.0), (1.0, 0.0)] {
            let (x, _) = grid_argmin(|th| 0.5 * th - s * th.sqrt(), 1.0 / t, 200.0, 1e-3);
            assert!((epigraph_inner(t, s, 1.0) - x).abs() <= 1e-3);
        }
    }

    #[test]
    fn prox_e_symmetric_cases() {
        // one clamped coordinate: g(t) = t + 1/t, optimum 2 at t = 1
        let sol = solve_epigraph(ProxInput::new(&[0.0], 2.0));
        assert!((sol.objective - 2.0).abs() <= 1e-12);
        assert!((prox_e(ProxInput::new(&[0.0], 2.0))[0] - 1.0).abs() < 1e-12);
        // two clamped coordinates: g(t) = t + 2/t, so t = √2 and γ = 2^{-1/4}
        let sol = solve_epigraph(ProxInput::new(&[0.0, 0.0], 2.0));
        assert!((sol.objective - 2.0 * 2f64.sqrt()).abs() <= 1e-12);
        let g = prox_e(ProxInput::new(&[0.0, 0.0], 2.0));
        assert!((g[0] - 2f64.powf(-0.25)).abs() < 1e-12 && (g[0] - g[1]).abs() < 1e-12);
    }

    #[test]
    fn prox_e_against_grid() {
        let input = ProxInput::new(&[3.0, 0.0], 1.0);
        let sol = solve_epigraph(input);
        let mut best = f64::INFINITY;
        let step = 2e-3;
        let mut a: f64 = step;
        while a < 12.0 {
            let mut b: f64 = step;
            while b < 4.0 {
                let v = (1.0 / a).max(1.0 / b) + 0.5 * (a + b) - 3.0 * a.sqrt();
                best = best.min(v);
                b += step;
            }
            a += step;
        }
        assert!(sol.objective <= best + 1e-9);
        assert!(best - sol.objective < 1e-4);
    }

    #[test]
    fn epigraph_feasible_and_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..500 {
            let n = rng.random_range(1..=3);
            let sig: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..50.0) }).collect();
            let rl = 10f64.powf(rng.random_range(-2.0..2.0));
            let sol = solve_epigraph(ProxInput::new(&sig, rl));
            assert!(sol.t > 0.0);
            for th in &sol.thetas {
                assert!(*th > 0.0);
                assert!(1.0 / th <= sol.t * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn all_proxes_beat_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for _ in 0..100 {
            let n = rng.random_range(1..=3);
            let mut sig: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..8.0)).collect();
            sig.sort_by(|a, b| b.total_cmp(a));
            let rl = rng.random_range(0.1..5.0);
            let input = ProxInput::new(&sig, rl);
            for c in Criterion::ALL {
                let g = prox(c, input);
                assert!(g.iter().all(|x| *x > 0.0));
                let val = spectral_surrogate(c, &g, input);
                let ones = vec![1.0; n];
                let probe: Vec<f64> = sig.iter().map(|s| s / rl + 1.0).collect();
                assert!(val <= spectral_surrogate(c, &ones, input) + 1e-12);
                assert!(val <= spectral_surrogate(c, &probe, input) + 1e-12);
            }
        }
    }
}
