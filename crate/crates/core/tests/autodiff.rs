mod common;

use common::gradcheck::{self, random_network, FD_STEP_PARAM};
use hpinn_core::autodiff::{Graph, Var};
use hpinn_core::network::{BatchEvaluator, GraphNetwork};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random expression over `n` parameters mixing every primitive.
fn random_expression(g: &mut Graph, params: &[Var], rng: &mut ChaCha8Rng) -> Var {
    let mut pool = params.to_vec();
    for _ in 0..40 {
        let a = pool[rng.gen_range(0..pool.len())];
        let b = pool[rng.gen_range(0..pool.len())];
        let v = match rng.gen_range(0..8) {
            0 => g.add(a, b),
            1 => g.sub(a, b),
            2 => g.mul(a, b),
            3 => {
                let d = g.square(b);
                let d = g.offset(d, 1.0);
                g.div(a, d)
            }
            4 => g.tanh(a),
            5 => g.powi(a, 3),
            6 => g.scale(a, -0.7),
            _ => g.linear_combination(&[(0.5, a), (2.0, b)]),
        };
        pool.push(v);
    }
    let tail = pool[pool.len() - 10..].to_vec();
    g.sum(&tail)
}

#[test]
fn random_graphs_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..25 {
        let init: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let params: Vec<_> = init.iter().map(|&v| g.parameter(v)).collect();
        let out = random_expression(&mut g, &params, &mut rng);
        let grad = g.parameter_gradient(out).unwrap();
        for (k, &(p, dk)) in grad.iter().enumerate() {
            assert_eq!(p, params[k]);
            g.set_value(p, init[k] + FD_STEP_PARAM).unwrap();
            g.evaluate().unwrap();
            let up = g.value(out);
            g.set_value(p, init[k] - FD_STEP_PARAM).unwrap();
            g.evaluate().unwrap();
            let down = g.value(out);
            g.set_value(p, init[k]).unwrap();
            g.evaluate().unwrap();
            let fd = (up - down) / (2.0 * FD_STEP_PARAM);
            assert!(common::rel_err(dk, fd) < 1e-6, "param {k}: {dk} vs {fd}");
        }
    }
}

#[test]
fn network_loss_gradient_matches_central_differences() {
    for seed in 0..3 {
        let err = gradcheck::loss_gradient_error(&random_network(seed));
        assert!(err < 1e-6, "seed {seed}: {err:e}");
    }
}

#[test]
fn input_derivatives_match_central_differences() {
    for seed in 0..3 {
        let (ex, exx) = gradcheck::input_derivative_errors(&random_network(seed));
        assert!(ex < 1e-5 && exx < 1e-5, "seed {seed}: {ex:e} {exx:e}");
    }
}

#[test]
fn parameter_gradient_of_ux_matches_differences_of_ux() {
    let p = random_network(9);
    let x = 0.37;
    let ux_of = |p: &hpinn_core::network::NetworkParameters| {
        let mut g = Graph::new();
        let net = GraphNetwork::register(&mut g, p);
        let b = net.forward_bundles(&mut g, x)[3];
        g.value(b.dx)
    };
    let mut g = Graph::new();
    let net = GraphNetwork::register(&mut g, &p);
    let b = net.forward_bundles(&mut g, x)[3];
    let grad = g.gradient(b.dx).unwrap();
    let analytic: Vec<f64> = net.parameters().iter().map(|&v| grad.wrt(v)).collect();
    let base = p.flatten();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut q = p.clone();
    for _ in 0..60 {
        let k = rng.gen_range(0..base.len());
        let mut flat = base.clone();
        flat[k] += FD_STEP_PARAM;
        q.assign_flat(&flat).unwrap();
        let up = ux_of(&q);
        flat[k] -= 2.0 * FD_STEP_PARAM;
        q.assign_flat(&flat).unwrap();
        let down = ux_of(&q);
        let fd = (up - down) / (2.0 * FD_STEP_PARAM);
        assert!(
            (analytic[k] - fd).abs() < 1e-5 * analytic.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            "param {k}: {} vs {fd}",
            analytic[k]
        );
    }
}

#[test]
fn gradients_are_linear() {
    let mut g = Graph::new();
    let a = g.parameter(0.3);
    let b = g.parameter(-1.2);
    let f = {
        let t = g.tanh(a);
        g.mul(t, b)
    };
    let h = {
        let s = g.square(b);
        g.div(a, s)
    };
    let combo = g.linear_combination(&[(2.5, f), (-0.75, h)]);
    let gf = g.gradient(f).unwrap();
    let gh = g.gradient(h).unwrap();
    let gc = g.gradient(combo).unwrap();
    for v in [a, b] {
        let expected = 2.5 * gf.wrt(v) - 0.75 * gh.wrt(v);
        assert!((gc.wrt(v) - expected).abs() < 1e-12);
    }
}

#[test]
fn identical_graphs_are_bitwise_identical() {
    let p = random_network(4);
    let xs = gradcheck::sample_points();
    let (l1, g1) = gradcheck::graph_gradient(&p, &xs);
    let (l2, g2) = gradcheck::graph_gradient(&p, &xs);
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn batch_evaluator_agrees_with_graph_bundles() {
    let p = random_network(2);
    let xs = gradcheck::sample_points();
    let out = BatchEvaluator::new(&xs).forward(&p);
    let mut g = Graph::new();
    let net = GraphNetwork::register(&mut g, &p);
    for (j, &x) in xs.iter().enumerate() {
        for (k, b) in net.forward_bundles(&mut g, x).iter().enumerate() {
            let (u, ux, uxx) = b.values(&g);
            assert!(common::rel_err(out.value[[k, j]], u) < 1e-12);
            assert!(common::rel_err(out.dx[[k, j]], ux) < 1e-12);
            assert!(common::rel_err(out.dxx[[k, j]], uxx) < 1e-11);
        }
    }
}

#[test]
fn batch_backward_agrees_with_graph_gradient() {
    let p = random_network(6);
    let xs = gradcheck::sample_points();
    let (_, reference) = gradcheck::graph_gradient(&p, &xs);
    let mut batch = BatchEvaluator::new(&xs);
    let out = batch.forward(&p);
    let mut adj = out.clone();
    adj.value.mapv_inplace(|u| 2.0 * u);
    adj.dx.fill(0.0);
    adj.dxx.fill(0.0);
    let got = batch.backward(&p, &adj).flatten();
    for (a, b) in got.iter().zip(&reference) {
        assert!((a - b).abs() <= 1e-11 * (1.0 + b.abs()), "{a} vs {b}");
    }
}
