//! Scalar conservation-diffusion equations `u_t + f(u)_x = nu u_xx + h(x, t)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::Arith;

pub type SourceFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type InitialFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Convective flux `f(u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flux {
    /// `u^2 / 2`
    Burgers,
    /// `a u`
    Linear(f64),
    Zero,
}

impl Flux {
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            Flux::Burgers => 0.5 * u * u,
            Flux::Linear(a) => a * u,
            Flux::Zero => 0.0,
        }
    }

    pub fn derivative(&self, u: f64) -> f64 {
        match *self {
            Flux::Burgers => u,
            Flux::Linear(a) => a,
            Flux::Zero => 0.0,
        }
    }

    pub fn eval_in<A: Arith>(&self, ar: &mut A, u: A::Value) -> A::Value {
        match *self {
            Flux::Burgers => {
                let sq = ar.square(u);
                ar.scale(sq, 0.5)
            }
            Flux::Linear(a) => ar.scale(u, a),
            Flux::Zero => ar.constant(0.0),
        }
    }

    pub fn derivative_in<A: Arith>(&self, ar: &mut A, u: A::Value) -> A::Value {
        match *self {
            Flux::Burgers => u,
            Flux::Linear(a) => ar.constant(a),
            Flux::Zero => ar.constant(0.0),
        }
    }

    /// `max_j |f'(u_j)|`
    pub fn max_speed(&self, u: &[f64]) -> f64 {
        u.iter()
            .map(|&v| self.derivative(v).abs())
            .fold(0.0, f64::max)
    }
}

/// PDE with diffusion `g(u) = u` and Dirichlet data at both ends of `[left, right]`.
#[derive(Clone)]
pub struct PdeSpec {
    pub flux: Flux,
    pub viscosity: f64,
    pub source: Option<SourceFn>,
    pub domain: (f64, f64),
    pub boundary: (f64, f64),
    pub initial: InitialFn,
}

impl fmt::Debug for PdeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PdeSpec")
            .field("flux", &self.flux)
            .field("viscosity", &self.viscosity)
            .field("source", &self.source.as_ref().map(|_| "fn"))
            .field("domain", &self.domain)
            .field("boundary", &self.boundary)
            .finish_non_exhaustive()
    }
}

impl PdeSpec {
    /// `u_t + (u^2/2)_x = nu u_xx` on `[-1, 1]`, `u(0, x) = -sin(pi x)`, zero Dirichlet data.
    pub fn burgers(viscosity: f64) -> Self {
        Self {
            flux: Flux::Burgers,
            viscosity,
            source: None,
            domain: (-1.0, 1.0),
            boundary: (0.0, 0.0),
            initial: Arc::new(|x: f64| -(std::f64::consts::PI * x).sin()),
        }
    }

    pub fn source_at(&self, x: f64, t: f64) -> f64 {
        self.source.as_ref().map_or(0.0, |h| h(x, t))
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.viscosity >= 0.0) {
            return Err(format!("viscosity must be >= 0, got {}", self.viscosity));
        }
        if !(self.domain.1 > self.domain.0) {
            return Err(format!("empty domain {:?}", self.domain));
        }
        Ok(())
    }
}
