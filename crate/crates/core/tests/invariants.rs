use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rscmjp::diagnostics::{ks_normality, rmse};
use rscmjp::information::{jx, jy, loewner_geq};
use rscmjp::layout::{pack, ParamLayout};
use rscmjp::likelihood::{observed_loglik, posterior_weights};
use rscmjp::model::random_model;
use rscmjp::simulator::{path_stats, simulate_sample, simulate_stats};
use rscmjp::{FreeParamVector, SimConfig};

fn model(seed: u64, p: usize, nm: usize) -> rscmjp::ModelParams {
    random_model(&mut ChaCha8Rng::seed_from_u64(seed), p, nm).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn occupation_times_fill_horizon(seed in 0u64..10_000, p in 2usize..5, h in 0.5f64..20.0) {
        let theta = model(seed, p, 2);
        for path in simulate_sample(&theta, &SimConfig::new(5, h, seed).unwrap()).unwrap() {
            let s = path_stats(&path, p).unwrap();
            let total: f64 = s.occupancy().iter().sum();
            prop_assert!((total - h).abs() <= 1e-9 * h);
            let jumps: u32 = (0..p).flat_map(|x| (0..p).map(move |y| (x, y))).map(|(x, y)| s.count(x, y)).sum();
            prop_assert_eq!(jumps as usize, path.n_jumps());
        }
    }

    #[test]
    fn posteriors_are_distributions(seed in 0u64..10_000, nm in 1usize..4) {
        let theta = model(seed, 3, nm);
        for s in simulate_stats(&theta, &SimConfig::new(10, 5.0, seed).unwrap()).unwrap() {
            let w = posterior_weights(&s, &theta);
            prop_assert!(w.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn loglik_ignores_regime_labels(seed in 0u64..10_000, rot in 1usize..3) {
        let theta = model(seed, 2, 3);
        let perm: Vec<usize> = (0..3).map(|m| (m + rot) % 3).collect();
        let sample = simulate_stats(&theta, &SimConfig::new(20, 5.0, seed).unwrap()).unwrap();
        let a = observed_loglik(&sample, &theta).unwrap();
        let b = observed_loglik(&sample, &theta.permute_regimes(&perm)).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs());
    }

    #[test]
    fn missing_information_is_psd(seed in 0u64..10_000, nm in 1usize..4) {
        let theta = model(seed, 2, nm);
        let sample = simulate_stats(&theta, &SimConfig::new(30, 5.0, seed).unwrap()).unwrap();
        prop_assert!(loewner_geq(&jx(&sample, &theta).unwrap(), &jy(&sample, &theta).unwrap()).unwrap());
    }

    #[test]
    fn simulation_is_reproducible(seed in 0u64..10_000) {
        let theta = model(seed, 3, 2);
        let cfg = SimConfig::new(8, 4.0, seed).unwrap();
        prop_assert_eq!(simulate_sample(&theta, &cfg).unwrap(), simulate_sample(&theta, &cfg).unwrap());
    }

    #[test]
    fn rmse_and_ks_ignore_order(values in proptest::collection::vec(-3.0f64..3.0, 8..40), shift in 0usize..40) {
        let layout = ParamLayout::new(2, 1);
        let truth = pack(&model(1, 2, 1));
        let ests: Vec<FreeParamVector> = values
            .iter()
            .map(|v| FreeParamVector::new(layout, truth.values().iter().map(|t| t + v).collect()).unwrap())
            .collect();
        let mut rotated = ests.clone();
        rotated.rotate_left(shift % ests.len());
        let a = rmse(&ests, &truth).unwrap();
        let b = rmse(&rotated, &truth).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x));
        }
        let mut rev = values.clone();
        rev.reverse();
        prop_assert_eq!(ks_normality(&values).unwrap(), ks_normality(&rev).unwrap());
    }
}
