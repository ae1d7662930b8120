mod common;

use hpinn_core::autodiff::Graph;
use hpinn_core::network::{BatchEvaluator, GraphNetwork, NetworkConfig, NetworkParameters};

/// Nested-loop forward pass over the raw weight arrays.
fn straight_line(p: &NetworkParameters, x: f64) -> Vec<f64> {
    let mut z = vec![x];
    let last = p.layers().len() - 1;
    for (i, layer) in p.layers().iter().enumerate() {
        let mut next = Vec::with_capacity(layer.fan_out());
        for r in 0..layer.fan_out() {
            let mut a = layer.bias[r];
            for (c, zc) in z.iter().enumerate() {
                a += layer.weights[[r, c]] * zc;
            }
            next.push(if i < last { a.tanh() } else { a });
        }
        z = next;
    }
    z
}

#[test]
fn forward_matches_straight_line_evaluation() {
    for seed in 0..5 {
        let p = common::gradcheck::random_network(seed);
        let expected = straight_line(&p, 0.5);
        let plain = p.evaluate(0.5);
        let mut g = Graph::new();
        let net = GraphNetwork::register(&mut g, &p);
        let graph: Vec<f64> = net.forward_stages(&mut g, 0.5).iter().map(|&v| g.value(v)).collect();
        let batch = BatchEvaluator::new(&[0.5]).forward(&p);
        for k in 0..expected.len() {
            assert!((plain[k] - expected[k]).abs() < 1e-12);
            assert!((graph[k] - expected[k]).abs() < 1e-12);
            assert!((batch.value[[k, 0]] - expected[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn xavier_draws_have_the_glorot_spread() {
    let p = NetworkParameters::init_xavier(&NetworkConfig::for_stages(10, 17)).unwrap();
    let sizes = p.layer_sizes();
    assert_eq!(sizes, vec![1, 20, 20, 20, 20, 20, 11]);
    for layer in &p.layers()[1..5] {
        let bound = (6.0 / 40.0f64).sqrt();
        let w: Vec<f64> = layer.weights.iter().copied().collect();
        assert!(w.iter().all(|v| v.abs() <= bound));
        // uniform on [-b, b] has variance b^2 / 3
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        assert!((var / (bound * bound / 3.0) - 1.0).abs() < 0.2, "{var}");
        assert!(layer.bias.iter().all(|&b| b == 0.0));
    }
}

#[test]
fn different_seeds_give_different_networks() {
    let a = NetworkParameters::init_xavier(&NetworkConfig::for_stages(4, 1)).unwrap();
    let b = NetworkParameters::init_xavier(&NetworkConfig::for_stages(4, 2)).unwrap();
    assert_ne!(a, b);
    assert_eq!(a, NetworkParameters::init_xavier(&NetworkConfig::for_stages(4, 1)).unwrap());
}

#[test]
fn checkpoint_files_round_trip() {
    let p = common::gradcheck::random_network(3);
    let dir = tempfile_dir();
    let path = dir.join("net.json");
    p.save(&path).unwrap();
    assert_eq!(NetworkParameters::load(&path).unwrap(), p);
    std::fs::remove_dir_all(dir).unwrap();
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("hpinn-net-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
