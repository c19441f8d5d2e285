use nalgebra::{dvector, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use utmost_core::sim::*;
use utmost_core::NoiseCovariance;

const MODELS: [MeasurementModel; 3] = [
    MeasurementModel::Toa,
    MeasurementModel::Tdoa { reference: 1 },
    MeasurementModel::Rss { path_loss: 2.5 },
];

fn circle(m: usize, radius: f64, offset: f64) -> Vec<DVector<f64>> {
    (0..m)
        .map(|i| {
            let a = offset + i as f64 * std::f64::consts::TAU / m as f64;
            dvector![radius * a.cos(), radius * a.sin()]
        })
        .collect()
}

fn scenario(model: MeasurementModel, m: usize, std: f64, trials: usize) -> SimScenario {
    SimScenario {
        target: dvector![0.1, -0.3],
        model,
        noise: iid_noise(model, m, std).unwrap(),
        trials,
        seed: 11,
        grid: GridSpec::cube(&[0.0, 0.0], 2.0),
        noiseless: false,
    }
}

#[test]
fn matches_sequential_recomputation() {
    for model in MODELS {
        let sc = scenario(model, 4, DEFAULT_NOISE_STD, 40);
        let sensors = circle(4, 1.0, 0.3);
        let report = &run_monte_carlo(&sc, &[Placement { name: "c".into(), sensors: sensors.clone() }]).unwrap()[0];
        let (mut sq, mut sum, mut kept) = (0.0, DVector::zeros(2), 0);
        for t in 0..sc.trials {
            let z = generate_measurements(&sc, &sensors, &mut trial_rng(sc.seed, t)).unwrap();
            let est = mle_estimate(&z, &sc, &sensors).unwrap();
            assert_eq!(est, report.estimates[t]);
            if let Some(e) = est {
                let err = e - &sc.target;
                sq += err.norm_squared();
                sum += err;
                kept += 1;
            }
        }
        assert_eq!(report.excluded, sc.trials - kept);
        assert!((report.mse - sq / kept as f64).abs() <= 1e-15 * report.mse);
        assert!((report.bias - (sum / kept as f64).norm()).abs() <= 1e-15);
    }
}

#[test]
fn larger_noise_raises_mse() {
    for model in MODELS {
        let base = scenario(model, 5, 0.05, 200);
        let noisy = SimScenario {
            noise: base.noise.scaled(4.0).unwrap(),
            ..base.clone()
        };
        let placements = [
            Placement { name: "even".into(), sensors: circle(5, 1.0, 0.0) },
            Placement { name: "shifted".into(), sensors: circle(5, 1.3, 0.7) },
        ];
        let a = run_monte_carlo(&base, &placements).unwrap();
        let b = run_monte_carlo(&noisy, &placements).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(y.mse > x.mse, "{model:?} {}: {} vs {}", x.placement, x.mse, y.mse);
        }
    }
}

#[test]
fn toa_mse_approaches_crlb_at_small_noise() {
    let mut sc = scenario(MeasurementModel::Toa, 4, 0.01, 10_000);
    sc.grid.resolution = 41;
    let sensors = circle(4, 1.0, 0.2);
    let r = &run_monte_carlo(&sc, &[Placement { name: "c".into(), sensors }]).unwrap()[0];
    assert_eq!(r.excluded, 0);
    assert!((r.mse / r.crlb_trace - 1.0).abs() <= 0.25, "mse {} crlb {}", r.mse, r.crlb_trace);
}

#[test]
fn noiseless_single_trial_is_exact() {
    let mut sc = scenario(MeasurementModel::Toa, 3, DEFAULT_NOISE_STD, 1);
    sc.noiseless = true;
    let r = &run_monte_carlo(&sc, &[Placement { name: "u".into(), sensors: uniform_placement(3, 2, 1.0).unwrap() }]).unwrap()[0];
    assert!(r.mse < 1e-10);
}

#[test]
fn correlated_noise_is_accepted() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = nalgebra::DMatrix::from_fn(4, 4, |_, _| rng.random_range(-0.2..0.2));
    let sc = SimScenario {
        noise: NoiseCovariance::new(&a * a.transpose() + nalgebra::DMatrix::identity(4, 4) * 0.01).unwrap(),
        ..scenario(MeasurementModel::Tdoa { reference: 0 }, 4, 0.1, 50)
    };
    let r = &run_monte_carlo(&sc, &[Placement { name: "c".into(), sensors: circle(4, 1.0, 0.1) }]).unwrap()[0];
    assert!(r.mse.is_finite() && r.crlb_trace.is_finite());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn noiseless_estimates_recover_target(
        model_idx in 0usize..3,
        m in 4usize..7,
        offset in 0.0f64..6.3,
        radius in 1.0f64..2.0,
        tx in -0.5f64..0.5,
        ty in -0.5f64..0.5,
    ) {
        let model = MODELS[model_idx];
        let sensors = circle(m, radius, offset);
        let sc = SimScenario {
            target: dvector![tx, ty],
            noiseless: true,
            ..scenario(model, m, DEFAULT_NOISE_STD, 1)
        };
        let z = generate_measurements(&sc, &sensors, &mut trial_rng(0, 0)).unwrap();
        let est = mle_estimate(&z, &sc, &sensors).unwrap().unwrap();
        prop_assert!((est - &sc.target).norm() < 1e-6);
    }

    #[test]
    fn mse_dominates_squared_bias(model_idx in 0usize..3, seed in any::<u64>()) {
        let mut sc = scenario(MODELS[model_idx], 4, DEFAULT_NOISE_STD, 16);
        sc.seed = seed;
        sc.grid.resolution = 51;
        let r = &run_monte_carlo(&sc, &[Placement { name: "c".into(), sensors: circle(4, 1.0, 0.4) }]).unwrap()[0];
        prop_assert!(r.mse >= r.bias * r.bias - 1e-12);
        prop_assert!(r.estimates.iter().flatten().all(|e| e.iter().all(|v| v.is_finite())));
    }
}
