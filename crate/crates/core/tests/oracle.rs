mod common;

use common::{fd_loglik_hessian, fd_score, rel_frobenius, rel_l2};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rscmjp::estimators::{fit, m_estimator_study, Method};
use rscmjp::information::{dense_inverse, jx, jx_inverse, jy, jy_generic};
use rscmjp::likelihood::score;
use rscmjp::model::{random_model, reference_model};
use rscmjp::simulator::simulate_stats;
use rscmjp::{FitConfig, ModelParams, SimConfig};

fn two_regime() -> ModelParams {
    ModelParams::new(
        vec![0.5, 0.5],
        vec![vec![0.4, 0.6], vec![0.7, 0.3]],
        vec![
            vec![vec![-0.5, 0.5], vec![0.3, -0.3]],
            vec![vec![-3.0, 3.0], vec![2.0, -2.0]],
        ],
    )
    .unwrap()
}

#[test]
fn reference_score_matches_differences() {
    let theta = reference_model();
    let sample = simulate_stats(&theta, &SimConfig::new(40, 10.0, 11).unwrap()).unwrap();
    let s = score(&sample, &theta).unwrap();
    let err = rel_l2(&s, &fd_score(&sample, &theta, 1e-5));
    assert!(err < 1e-6, "{err:.2e}");
}

#[test]
fn reference_jy_matches_hessian() {
    let theta = reference_model();
    let sample = simulate_stats(&theta, &SimConfig::new(30, 10.0, 12).unwrap()).unwrap();
    let fd = -fd_loglik_hessian(&sample, &theta, 1e-4) / sample.len() as f64;
    let explicit = jy(&sample, &theta).unwrap();
    assert!(rel_frobenius(&explicit, &fd) < 1e-5);
    assert!(rel_frobenius(&jy_generic(&sample, &theta).unwrap(), &explicit) < 1e-10);
}

#[test]
fn single_regime_information_coincides() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..5 {
        let theta = random_model(&mut rng, 3, 1).unwrap();
        let sample = simulate_stats(&theta, &SimConfig::new(25, 5.0, seed).unwrap()).unwrap();
        assert_eq!(jy(&sample, &theta).unwrap(), jx(&sample, &theta).unwrap());
    }
}

#[test]
fn closed_form_jx_inverse() {
    let theta = reference_model();
    let sample = simulate_stats(&theta, &SimConfig::new(60, 10.0, 13).unwrap()).unwrap();
    let fast = jx_inverse(&sample, &theta).unwrap();
    let dense = dense_inverse(&jx(&sample, &theta).unwrap()).unwrap();
    assert!(rel_frobenius(&fast, &dense) < 1e-10);
}

#[test]
fn em_monotone_across_seeds() {
    let truth = two_regime();
    for seed in 0..8 {
        let sample = simulate_stats(&truth, &SimConfig::new(150, 10.0, 200 + seed).unwrap()).unwrap();
        let r = fit(&sample, &truth, &FitConfig::new(Method::Em)).unwrap();
        assert!(r.converged, "seed {seed}");
        assert!(r.is_monotone(1e-12), "seed {seed}");
        assert_eq!(r.loglik_trace.len(), r.iterations + 1);
    }
}

#[test]
fn complete_data_se_is_smaller() {
    let theta = two_regime();
    let sample = simulate_stats(&theta, &SimConfig::new(300, 10.0, 14).unwrap()).unwrap();
    let jx_inv = jx_inverse(&sample, &theta).unwrap();
    let jy_inv = dense_inverse(&jy(&sample, &theta).unwrap()).unwrap();
    for i in 0..jx_inv.nrows() {
        assert!(jx_inv[(i, i)] <= jy_inv[(i, i)] * (1.0 + 1e-10), "entry {i}");
    }
}

#[test]
fn one_step_mean_identity() {
    let truth = two_regime();
    let sim = SimConfig::new(120, 10.0, 15).unwrap();
    let (_, res) = m_estimator_study(&truth, 6, &sim, &FitConfig::new(Method::Em)).unwrap();
    let k = res.theta0_estimates.len() as f64;
    let d = res.theta_bar.len();
    let tb = res.theta_bar.to_dvector();
    let mut lhs = DVector::zeros(d);
    let mut rhs = DVector::zeros(d);
    for ((e, jxk), s) in res.theta0_estimates.iter().zip(&res.jxk_at_theta_bar).zip(&res.scores_at_theta_bar) {
        lhs += jxk * (e.to_dvector() - &tb) / k;
        rhs += s / k;
    }
    assert!((lhs.norm() - rhs.norm()).abs() <= 1e-8 * (1.0 + rhs.norm()));
    assert!((&lhs - &rhs).norm() <= 1e-8 * (1.0 + rhs.norm()));
}
