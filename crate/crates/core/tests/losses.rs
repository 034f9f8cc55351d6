mod common;

use common::fixtures::gradient_check;
use common::{mc_kl, RefNormal};
use nalgebra::DMatrix;
use ved_surrogate::losses::{aggregate_cov, cov_penalty, kld_loss, mse_loss, LossBreakdown, LossWeights};

#[test]
fn kld_matches_monte_carlo() {
    let mut g = RefNormal::new(101);
    for trial in 0..10 {
        let mu: Vec<f64> = (0..3).map(|_| g.normal()).collect();
        let h: Vec<f64> = (0..3).map(|_| 0.8 * g.normal()).collect();
        let closed = kld_loss(&mu, &h, 1, 3).unwrap();
        let mc = mc_kl(&mu, &h, 1_000_000, 7 + trial);
        assert!((closed - mc).abs() <= 0.01 * closed, "trial {trial}: {closed} vs {mc}");
    }
}

#[test]
fn cov_penalty_analytic_cases() {
    assert_eq!(cov_penalty(&DMatrix::identity(3, 3)), 0.0);
    assert_eq!(cov_penalty(&DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0])), 2.0);
    assert_eq!(cov_penalty(&DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])), 0.5);
}

#[test]
fn aggregate_cov_matches_code_sampling() {
    let (b, r) = (64, 3);
    let mut rng = RefNormal::new(202);
    let g: Vec<f64> = (0..b * r).map(|_| rng.normal()).collect();
    let h: Vec<f64> = (0..b * r).map(|_| 0.5 * rng.normal() - 0.5).collect();
    let ac = aggregate_cov(&g, &h, b, r).unwrap();
    let n = 200_000;
    let codes: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let row = ((rng.uniform() * b as f64) as usize).min(b - 1);
            (0..r).map(|i| g[row * r + i] + rng.normal() * (0.5 * h[row * r + i]).exp()).collect()
        })
        .collect();
    let mean: Vec<f64> = (0..r).map(|i| codes.iter().map(|c| c[i]).sum::<f64>() / n as f64).collect();
    for i in 0..r {
        for j in 0..r {
            let emp = codes.iter().map(|c| (c[i] - mean[i]) * (c[j] - mean[j])).sum::<f64>() / n as f64;
            assert!((emp - ac.matrix[(i, j)]).abs() <= 0.02, "({i},{j}) {emp} vs {}", ac.matrix[(i, j)]);
        }
    }
}

#[test]
fn aggregate_cov_is_permutation_invariant() {
    let mut rng = RefNormal::new(5);
    let (b, r) = (6, 2);
    let g: Vec<f64> = (0..b * r).map(|_| rng.normal()).collect();
    let h: Vec<f64> = (0..b * r).map(|_| rng.normal()).collect();
    let perm = [3, 0, 5, 1, 4, 2];
    let pg: Vec<f64> = perm.iter().flat_map(|&p| g[p * r..(p + 1) * r].to_vec()).collect();
    let ph: Vec<f64> = perm.iter().flat_map(|&p| h[p * r..(p + 1) * r].to_vec()).collect();
    let a = aggregate_cov(&g, &h, b, r).unwrap().matrix;
    let c = aggregate_cov(&pg, &ph, b, r).unwrap().matrix;
    assert!((a - c).abs().max() < 1e-12);
}

#[test]
fn mse_matches_brute_force() {
    let mut rng = RefNormal::new(9);
    let (b, m) = (4, 5);
    let y: Vec<f64> = (0..b * m).map(|_| rng.normal()).collect();
    let yh: Vec<f64> = (0..b * m).map(|_| rng.normal()).collect();
    let mut brute = 0.0;
    for i in 0..b {
        for j in 0..m {
            brute += (y[i * m + j] - yh[i * m + j]).powi(2);
        }
    }
    assert!((mse_loss(&y, &yh, b, m).unwrap() - brute / b as f64).abs() <= 1e-12);
}

#[test]
fn total_is_linear_in_weights() {
    let (mse, kld, cov) = (1.3, 0.7, 2.1);
    let base = LossBreakdown::assemble(mse, kld, cov, LossWeights::new(0.0, 0.0).unwrap(), 3, 2);
    let w = LossBreakdown::assemble(mse, kld, cov, LossWeights::new(0.3, 0.05).unwrap(), 3, 2);
    assert_eq!(base.total, 0.5 * mse);
    assert!((w.total - base.total - (0.3 * kld + 0.05 * cov)).abs() < 1e-15);
}

#[test]
fn tiny_model_gradients_match_finite_differences() {
    let res = gradient_check(1e-4, 1e-4, 1e-6, 3);
    assert!(res.n_params > 100);
    assert_eq!(res.failures, 0, "worst {:e} at {}", res.worst, res.worst_name);
}
