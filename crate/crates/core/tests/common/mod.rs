#![allow(dead_code)]

use std::f64::consts::PI;

/// Inviscid Burgers with `u0 = -sin(pi x)` before shock formation, from
/// `u = -sin(pi (x - u t))` solved by Newton's method.
pub fn characteristics(x: f64, t: f64) -> f64 {
    let mut u = -(PI * x).sin();
    for _ in 0..100 {
        let xi = PI * (x - u * t);
        let f = u + xi.sin();
        let df = 1.0 - PI * t * xi.cos();
        let step = f / df;
        u -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    u
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Relative error in the sense used for gradient checks.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Observed orders `log2(e_k / e_{k+1})` for errors on grids doubling in size.
pub fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

pub mod gradcheck {
    use hpinn_core::autodiff::Graph;
    use hpinn_core::network::{GraphNetwork, NetworkConfig, NetworkParameters};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub const FD_STEP_PARAM: f64 = 1e-5;
    pub const FD_STEP_X: f64 = 1e-4;

    /// The 5 x 20 tanh network with eleven outputs, every parameter drawn
    /// uniformly from `[-1, 1]`.
    pub fn random_network(seed: u64) -> NetworkParameters {
        let mut p = NetworkParameters::init_xavier(&NetworkConfig::for_stages(10, seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flat: Vec<f64> = (0..p.parameter_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        p.assign_flat(&flat).unwrap();
        p
    }

    pub fn sample_points() -> Vec<f64> {
        (0..10).map(|k| -0.9 + 0.2 * k as f64).collect()
    }

    /// `sum_x sum_k u_k(x)^2` on plain numbers.
    pub fn plain_loss(p: &NetworkParameters, xs: &[f64]) -> f64 {
        xs.iter()
            .flat_map(|&x| p.evaluate(x))
            .map(|u| u * u)
            .sum()
    }

    /// Reverse-mode gradient of [`plain_loss`] through the graph.
    pub fn graph_gradient(p: &NetworkParameters, xs: &[f64]) -> (f64, Vec<f64>) {
        let mut g = Graph::new();
        let net = GraphNetwork::register(&mut g, p);
        let mut squares = Vec::new();
        for &x in xs {
            for u in net.forward_stages(&mut g, x) {
                squares.push(g.square(u));
            }
        }
        let loss = g.sum(&squares);
        let grad = g.gradient(loss).unwrap();
        (g.value(loss), net.parameters().iter().map(|&v| grad.wrt(v)).collect())
    }

    /// `max_k |a_k - b_k| / max_k |b_k|`: componentwise ratios are meaningless
    /// for entries at the oracle's rounding floor, including exact zeros.
    pub fn normwise(a: &[f64], b: &[f64]) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        super::max_abs_diff(a, b) / scale.max(f64::MIN_POSITIVE)
    }

    /// Relative error of the graph gradient against central differences of
    /// the plain loss over every parameter.
    pub fn loss_gradient_error(p: &NetworkParameters) -> f64 {
        let xs = sample_points();
        let (_, grad) = graph_gradient(p, &xs);
        let base = p.flatten();
        let mut q = p.clone();
        let fd: Vec<f64> = (0..base.len())
            .map(|k| {
                let mut flat = base.clone();
                flat[k] = base[k] + FD_STEP_PARAM;
                q.assign_flat(&flat).unwrap();
                let up = plain_loss(&q, &xs);
                flat[k] = base[k] - FD_STEP_PARAM;
                q.assign_flat(&flat).unwrap();
                let down = plain_loss(&q, &xs);
                (up - down) / (2.0 * FD_STEP_PARAM)
            })
            .collect();
        normwise(&grad, &fd)
    }

    /// Relative errors of graph `u_x` and `u_xx` against central differences
    /// of the plain forward pass, over all points and outputs.
    pub fn input_derivative_errors(p: &NetworkParameters) -> (f64, f64) {
        let h = FD_STEP_X;
        let mut g = Graph::new();
        let net = GraphNetwork::register(&mut g, p);
        let (mut ad_x, mut ad_xx, mut fd_x, mut fd_xx) = (vec![], vec![], vec![], vec![]);
        for x in sample_points() {
            let bundles = net.forward_bundles(&mut g, x);
            let (up, u0, um) = (p.evaluate(x + h), p.evaluate(x), p.evaluate(x - h));
            for (k, b) in bundles.iter().enumerate() {
                let (_, dx, dxx) = b.values(&g);
                ad_x.push(dx);
                ad_xx.push(dxx);
                fd_x.push((up[k] - um[k]) / (2.0 * h));
                fd_xx.push((up[k] - 2.0 * u0[k] + um[k]) / (h * h));
            }
        }
        (normwise(&ad_x, &fd_x), normwise(&ad_xx, &fd_xx))
    }
}
