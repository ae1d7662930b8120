//! Scalar fields on uniform one-dimensional grids.

use serde::{Deserialize, Serialize};

use crate::autodiff::Arith;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub values: Vec<f64>,
    /// Coordinate of `values[0]`.
    pub x0: f64,
    pub dx: f64,
}

impl GridField {
    pub fn new(values: Vec<f64>, x0: f64, dx: f64) -> Self {
        Self { values, x0, dx }
    }

    /// `n` points spanning `[left, right]`, both endpoints included.
    pub fn sample(left: f64, right: f64, n: usize, f: impl Fn(f64) -> f64) -> Self {
        let dx = (right - left) / (n - 1) as f64;
        let values = (0..n).map(|j| f(left + j as f64 * dx)).collect();
        Self { values, x0: left, dx }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x0 + j as f64 * self.dx
    }

    pub fn coordinates(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.x(j)).collect()
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        Self {
            values,
            x0: self.x0,
            dx: self.dx,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn total_variation(&self) -> f64 {
        self.values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.dx > 0.0 && self.values.iter().all(|v| v.is_finite())
    }
}

/// How values beyond the ends of a grid are supplied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Extension {
    /// Ghost cells hold the given constant.
    Constant(f64),
    /// Ghosts are odd reflections about the boundary point, `2 u_b - u_mirror`;
    /// the end grid point is taken to carry the Dirichlet value `u_b`.
    OddReflection,
    /// The grid is one period; the right endpoint is not duplicated.
    Periodic,
}

/// `values` padded with `ghosts` extension cells on each side.
pub fn extend<A: Arith>(
    ar: &mut A,
    values: &[A::Value],
    ext: Extension,
    ghosts: usize,
) -> Vec<A::Value> {
    let n = values.len();
    let mut out = Vec::with_capacity(n + 2 * ghosts);
    let ghost = |ar: &mut A, j: isize| -> A::Value {
        match ext {
            Extension::Constant(c) => ar.constant(c),
            Extension::Periodic => values[j.rem_euclid(n as isize) as usize],
            Extension::OddReflection => {
                let (edge, mirror) = if j < 0 {
                    (values[0], values[(-j) as usize])
                } else {
                    let e = n - 1;
                    (values[e], values[2 * e - j as usize])
                };
                let twice = ar.scale(edge, 2.0);
                ar.sub(twice, mirror)
            }
        }
    };
    for k in (1..=ghosts as isize).rev() {
        out.push(ghost(ar, -k));
    }
    out.extend_from_slice(values);
    for k in 0..ghosts as isize {
        out.push(ghost(ar, n as isize + k));
    }
    out
}
