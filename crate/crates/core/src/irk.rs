//! Gauss–Legendre implicit Runge–Kutta tableaus for arbitrary stage counts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_STAGES: usize = 100;

const NEWTON_TOL: f64 = 1e-14;
const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IrkError {
    #[error("stage count {0} outside 1..={MAX_STAGES}")]
    StagesOutOfRange(usize),
    #[error("Newton iteration for Legendre root {root} did not converge")]
    RootNotConverged { root: usize },
    #[error("tableau consistency residual {residual:e} exceeds tolerance")]
    IllConditioned { residual: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ButcherTableau {
    pub q: usize,
    /// Row-major `q x q`.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

/// Legendre polynomial `P_n(x)` and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = next;
    }
    let dp = n as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

/// Gauss–Legendre nodes and weights on `(0, 1)`, nodes ascending.
pub fn gauss_legendre_nodes(q: usize) -> Result<(Vec<f64>, Vec<f64>), IrkError> {
    if q == 0 || q > MAX_STAGES {
        return Err(IrkError::StagesOutOfRange(q));
    }
    let mut x = vec![0.0; q];
    let mut w = vec![0.0; q];
    // Roots come in +-pairs; solve the positive half and mirror it.
    for i in 0..q.div_ceil(2) {
        let mut r = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        let mut converged = false;
        for _ in 0..NEWTON_MAX_ITER {
            let (p, dp) = legendre(q, r);
            let step = p / dp;
            r -= step;
            if step.abs() <= NEWTON_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(IrkError::RootNotConverged { root: i });
        }
        if q % 2 == 1 && i == q / 2 {
            r = 0.0;
        }
        let (_, dp) = legendre(q, r);
        let weight = 2.0 / ((1.0 - r * r) * dp * dp);
        x[i] = -r;
        x[q - 1 - i] = r;
        w[i] = weight;
        w[q - 1 - i] = weight;
    }
    let c = x.iter().map(|&r| 0.5 * (1.0 + r)).collect();
    let b = w.iter().map(|&wi| 0.5 * wi).collect();
    Ok((c, b))
}

fn lagrange_basis(nodes: &[f64], j: usize, t: f64) -> f64 {
    nodes
        .iter()
        .enumerate()
        .filter(|&(m, _)| m != j)
        .map(|(_, &cm)| (t - cm) / (nodes[j] - cm))
        .product()
}

/// `q`-stage Gauss–Legendre collocation method (order `2q`).
///
/// The coefficients `a_ij` are the solution of the stage-order systems
/// `sum_j a_ij c_j^(k-1) = c_i^k / k`, `k = 1..q`. They are evaluated as
/// `a_ij = integral_0^{c_i} l_j(s) ds` with `l_j` the Lagrange basis on the
/// nodes, integrated exactly by the same Gauss rule scaled to `(0, c_i)`.
pub fn gauss_legendre_tableau(q: usize) -> Result<ButcherTableau, IrkError> {
    let (c, b) = gauss_legendre_nodes(q)?;
    let a: Vec<Vec<f64>> = c
        .iter()
        .map(|&ci| {
            (0..q)
                .map(|j| {
                    ci * c
                        .iter()
                        .zip(&b)
                        .map(|(&ck, &bk)| bk * lagrange_basis(&c, j, ci * ck))
                        .sum::<f64>()
                })
                .collect()
        })
        .collect();
    let tableau = ButcherTableau { q, a, b, c };
    let residual = tableau.consistency_residual();
    if residual > 1e-10 {
        return Err(IrkError::IllConditioned { residual });
    }
    Ok(tableau)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderReport {
    /// `|sum_j b_j c_j^(k-1) - 1/k|` for `k = 1..=max_order`.
    pub quadrature: Vec<f64>,
    /// `max_i |sum_j a_ij c_j^(k-1) - c_i^k / k|` for `k = 1..=q`.
    pub stage: Vec<f64>,
}

impl OrderReport {
    pub fn max_quadrature(&self) -> f64 {
        self.quadrature.iter().copied().fold(0.0, f64::max)
    }
}

impl ButcherTableau {
    /// `max(|sum b - 1|, max_i |sum_j a_ij - c_i|)`
    pub fn consistency_residual(&self) -> f64 {
        let bsum = (self.b.iter().sum::<f64>() - 1.0).abs();
        self.a
            .iter()
            .zip(&self.c)
            .map(|(row, &ci)| (row.iter().sum::<f64>() - ci).abs())
            .fold(bsum, f64::max)
    }

    pub fn verify_order_conditions(&self, max_order: usize) -> OrderReport {
        let quadrature = (1..=max_order)
            .map(|k| {
                let s: f64 = self
                    .b
                    .iter()
                    .zip(&self.c)
                    .map(|(&bj, &cj)| bj * cj.powi(k as i32 - 1))
                    .sum();
                (s - 1.0 / k as f64).abs()
            })
            .collect();
        let stage = (1..=self.q)
            .map(|k| {
                self.a
                    .iter()
                    .zip(&self.c)
                    .map(|(row, &ci)| {
                        let s: f64 = row
                            .iter()
                            .zip(&self.c)
                            .map(|(&aij, &cj)| aij * cj.powi(k as i32 - 1))
                            .sum();
                        (s - ci.powi(k as i32) / k as f64).abs()
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        OrderReport { quadrature, stage }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tableau serializes")
    }
}
