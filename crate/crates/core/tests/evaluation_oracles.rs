//! Evaluation metrics against independent plain-f64 reimplementations.

use std::f64::consts::PI;

use advpinn::evaluation::{
    boundary_grid, evaluation_grid, mse_vs_analytic, tensor_grid, validation_residual, MSE_GRID,
};
use advpinn::neural::{Activation, Mlp};
use advpinn::problems::{LaplaceBoundary, Problem, TrialMode};
use advpinn::training::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_solver(problem: &Problem, seed: u64) -> Mlp {
    let cfg = TrainConfig::for_problem(problem).solver_config(problem.dim()).unwrap();
    let mut net = Mlp::init(cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in net.params_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
    net
}

/// Value, first and second directional derivatives of a network output
/// along `dir`, by forward propagation through each layer.
fn directional(net: &Mlp, input: &[f64], dir: &[f64]) -> (f64, f64, f64) {
    let mut h: Vec<f64> = input.to_vec();
    let mut h1: Vec<f64> = dir.to_vec();
    let mut h2 = vec![0.0; input.len()];
    let cfg = net.config();
    for l in 0..net.layer_count() {
        let (fan_in, fan_out) = net.layer_shape(l);
        let (w, b) = (net.weights(l), net.biases(l));
        let act = if l + 1 == net.layer_count() {
            cfg.output_activation
        } else {
            cfg.hidden_activation
        };
        let mut next = (Vec::new(), Vec::new(), Vec::new());
        for o in 0..fan_out {
            let row = &w[o * fan_in..(o + 1) * fan_in];
            let z: f64 = row.iter().zip(&h).map(|(a, x)| a * x).sum::<f64>() + b[o];
            let z1: f64 = row.iter().zip(&h1).map(|(a, x)| a * x).sum();
            let z2: f64 = row.iter().zip(&h2).map(|(a, x)| a * x).sum();
            let (a, a1, a2) = match act {
                Activation::Identity => (z, z1, z2),
                Activation::Tanh => {
                    let t = z.tanh();
                    let s = 1.0 - t * t;
                    (t, s * z1, s * z2 - 2.0 * t * s * z1 * z1)
                }
                Activation::Sin => (z.sin(), z.cos() * z1, z.cos() * z2 - z.sin() * z1 * z1),
            };
            next.0.push(a);
            next.1.push(a1);
            next.2.push(a2);
        }
        (h, h1, h2) = next;
    }
    (h[0], h1[0], h2[0])
}

/// Trial value of a 1-D problem, written out from its definition.
fn trial_1d(problem: &Problem, net: &Mlp, x: f64) -> f64 {
    let n = net.eval(&[x]).unwrap()[0];
    match problem.trial {
        TrialMode::OdeIc { x0, y0 } => y0 + (1.0 - (-(x - x0)).exp()) * n,
        TrialMode::HAtom { n: q, slope } => {
            let far = problem.domain.hi()[0];
            (-x / q as f64).exp() * (1.0 - (x - far).exp()) * (slope * x + x * x * n)
        }
        _ => unreachable!(),
    }
}

#[test]
fn mse_matches_a_two_pass_oracle() {
    for name in ["expdecay", "logistic", "hatom-n1", "hatom-n2", "expdecay-ode"] {
        let problem = Problem::by_name(name).unwrap();
        for seed in 0..5 {
            let net = random_solver(&problem, seed);
            let (lo, hi) = (problem.domain.lo()[0], problem.domain.hi()[0]);
            let xs: Vec<f64> = (0..MSE_GRID)
                .map(|i| lo + (hi - lo) * i as f64 / (MSE_GRID - 1) as f64)
                .collect();
            let errs: Vec<f64> = xs
                .iter()
                .map(|&x| trial_1d(&problem, &net, x) - problem.analytic(&[x]).unwrap())
                .collect();
            let oracle = errs.iter().map(|e| e * e).sum::<f64>() / xs.len() as f64;
            let got = mse_vs_analytic(&net, &problem, MSE_GRID).unwrap();
            assert!(
                (got - oracle).abs() <= 1e-12 * oracle.max(1e-300),
                "{name} seed {seed}: {got} vs {oracle}"
            );
        }
    }
}

#[test]
fn laplace_mse_uses_the_tensor_grid() {
    let problem = Problem::laplace();
    let net = random_solver(&problem, 7);
    let grid = evaluation_grid(&problem, MSE_GRID);
    let side = (grid.len() as f64).sqrt().round() as usize;
    assert_eq!(side * side, grid.len());
    let oracle = grid
        .iter()
        .map(|p| {
            let n = net.eval(&[2.0 * p[0] - 1.0, 2.0 * p[1] - 1.0]).unwrap()[0];
            let (x, y) = (p[0], p[1]);
            let y_hat = (1.0 - x) * (PI * y).sin() + x * (1.0 - x) * y * (1.0 - y) * n;
            (y_hat - problem.analytic(p).unwrap()).powi(2)
        })
        .sum::<f64>()
        / grid.len() as f64;
    let got = mse_vs_analytic(&net, &problem, MSE_GRID).unwrap();
    assert!((got - oracle).abs() <= 1e-12 * oracle, "{got} vs {oracle}");
}

/// `ŷ_xx + ŷ_yy` of the hard-constrained trial at `(x, y)`.
fn hard_laplacian(net: &Mlp, x: f64, y: f64) -> f64 {
    let input = [2.0 * x - 1.0, 2.0 * y - 1.0];
    // the network sees coordinates stretched by 2
    let (n, nx, nxx) = directional(net, &input, &[2.0, 0.0]);
    let (_, ny, nyy) = directional(net, &input, &[0.0, 2.0]);
    let (bx, by) = (x * (1.0 - x), y * (1.0 - y));
    let edge_yy = -(1.0 - x) * PI * PI * (PI * y).sin();
    let prod_xx = -2.0 * by * n + 2.0 * (1.0 - 2.0 * x) * by * nx + bx * by * nxx;
    let prod_yy = -2.0 * bx * n + 2.0 * (1.0 - 2.0 * y) * bx * ny + bx * by * nyy;
    edge_yy + prod_xx + prod_yy
}

#[test]
fn hard_validation_matches_pointwise_oracle() {
    let problem = Problem::laplace();
    for seed in 0..3 {
        let net = random_solver(&problem, seed);
        let grid = tensor_grid(&problem, 32);
        assert_eq!(grid.len(), 1024);
        let oracle = grid
            .iter()
            .map(|p| hard_laplacian(&net, p[0], p[1]).powi(2))
            .sum::<f64>()
            / 1024.0;
        let got = validation_residual(&net, &problem).unwrap();
        assert!((got - oracle).abs() <= 1e-10 * oracle, "seed {seed}: {got} vs {oracle}");
    }
}

#[test]
fn soft_validation_adds_the_weighted_boundary_error() {
    let problem = Problem::laplace_soft(LaplaceBoundary::SinY);
    let TrialMode::PdeSoft { beta, .. } = problem.trial else {
        unreachable!()
    };
    let net = random_solver(&problem, 4);
    let grid = tensor_grid(&problem, 32);
    let interior = grid
        .iter()
        .map(|p| {
            let input = [2.0 * p[0] - 1.0, 2.0 * p[1] - 1.0];
            let (_, _, nxx) = directional(&net, &input, &[2.0, 0.0]);
            let (_, _, nyy) = directional(&net, &input, &[0.0, 2.0]);
            (nxx + nyy).powi(2)
        })
        .sum::<f64>()
        / grid.len() as f64;
    let edge = boundary_grid(&problem, 32);
    assert_eq!(edge.len(), 4 * 31);
    let boundary = edge
        .iter()
        .map(|p| {
            let n = net.eval(&[2.0 * p[0] - 1.0, 2.0 * p[1] - 1.0]).unwrap()[0];
            let g = if p[0] == 0.0 { p[1].sin() } else { 0.0 };
            (n - g).powi(2)
        })
        .sum::<f64>()
        / edge.len() as f64;
    let oracle = interior + beta * boundary;
    let got = validation_residual(&net, &problem).unwrap();
    assert!((got - oracle).abs() <= 1e-10 * oracle, "{got} vs {oracle}");
}
