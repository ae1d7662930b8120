//! Fifth-order WENO-Z flux reconstruction and the scale-separation
//! discontinuity indicator.
//!
//! Stencil routines are written once over [`Arith`] (suffix `_in`) so the same
//! arithmetic can be recorded on an autodiff graph; the unsuffixed functions
//! are their `f64` forms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Arith, Plain};
use crate::grid::{extend, Extension, GridField};
use crate::pde::Flux;

/// Ghost cells needed on each side by the interface reconstruction.
pub const GHOSTS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WenoError {
    #[error("grid has {n} points, need at least {min}")]
    TooFewPoints { n: usize, min: usize },
    #[error("splitting speed {lambda} below max |f'(u)| = {max_speed}")]
    NonMonotoneSplit { lambda: f64, max_speed: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WenoConstants {
    pub eps: f64,
    pub d: [f64; 3],
    pub delta: f64,
    pub p: i32,
    pub c_t: f64,
}

impl Default for WenoConstants {
    fn default() -> Self {
        Self {
            eps: 1e-40,
            d: [0.1, 0.6, 0.3],
            delta: 1e-4,
            p: 6,
            c_t: 5e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluxSplit {
    pub fplus: GridField,
    pub fminus: GridField,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscontinuityMask {
    pub flags: Vec<bool>,
}

impl DiscontinuityMask {
    pub fn zeros(n: usize) -> Self {
        Self {
            flags: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn flagged(&self) -> impl Iterator<Item = usize> + '_ {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(j, &f)| f.then_some(j))
    }

    /// Flags every point within `radius` cells of a flagged point.
    pub fn dilate(&self, radius: usize) -> Self {
        let n = self.flags.len();
        let mut flags = vec![false; n];
        for j in self.flagged() {
            let lo = j.saturating_sub(radius);
            let hi = (j + radius).min(n.saturating_sub(1));
            flags[lo..=hi].iter_mut().for_each(|f| *f = true);
        }
        Self { flags }
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            flags: self
                .flags
                .iter()
                .zip(&other.flags)
                .map(|(&a, &b)| a || b)
                .collect(),
        }
    }

    /// Flags as `0`/`1`.
    pub fn as_bits(&self) -> Vec<u8> {
        self.flags.iter().map(|&f| f as u8).collect()
    }
}

/// `f± = (f(u) ± lambda u) / 2`.
pub fn lax_friedrichs_split(u: &GridField, flux: &Flux, lambda: f64) -> Result<FluxSplit, WenoError> {
    check_lambda(&u.values, flux, lambda)?;
    let fplus = u.map(|v| 0.5 * (flux.eval(v) + lambda * v));
    let fminus = u.map(|v| 0.5 * (flux.eval(v) - lambda * v));
    Ok(FluxSplit {
        fplus,
        fminus,
        lambda,
    })
}

fn check_lambda(u: &[f64], flux: &Flux, lambda: f64) -> Result<(), WenoError> {
    let max_speed = flux.max_speed(u);
    if !(lambda >= max_speed) {
        return Err(WenoError::NonMonotoneSplit { lambda, max_speed });
    }
    Ok(())
}

/// Third-order candidate values at `x_{j+1/2}` from the stencil `f_{j-2..=j+2}`.
pub fn candidate_fluxes_in<A: Arith>(ar: &mut A, f: &[A::Value; 5]) -> [A::Value; 3] {
    let c = 1.0 / 6.0;
    [
        ar.lincomb(&[(2.0 * c, f[0]), (-7.0 * c, f[1]), (11.0 * c, f[2])]),
        ar.lincomb(&[(-c, f[1]), (5.0 * c, f[2]), (2.0 * c, f[3])]),
        ar.lincomb(&[(2.0 * c, f[2]), (5.0 * c, f[3]), (-c, f[4])]),
    ]
}

/// Jiang–Shu smoothness indicators, both terms squared.
pub fn smoothness_indicators_in<A: Arith>(ar: &mut A, f: &[A::Value; 5]) -> [A::Value; 3] {
    let beta = |ar: &mut A, curv: [f64; 3], slope: [f64; 3], s: [A::Value; 3]| {
        let c = ar.lincomb(&[(curv[0], s[0]), (curv[1], s[1]), (curv[2], s[2])]);
        let l = ar.lincomb(&[(slope[0], s[0]), (slope[1], s[1]), (slope[2], s[2])]);
        let c2 = ar.square(c);
        let l2 = ar.square(l);
        ar.lincomb(&[(13.0 / 12.0, c2), (0.25, l2)])
    };
    [
        beta(ar, [1.0, -2.0, 1.0], [1.0, -4.0, 3.0], [f[0], f[1], f[2]]),
        beta(ar, [1.0, -2.0, 1.0], [-1.0, 0.0, 1.0], [f[1], f[2], f[3]]),
        beta(ar, [1.0, -2.0, 1.0], [3.0, -4.0, 1.0], [f[2], f[3], f[4]]),
    ]
}

/// WENO-Z weights `omega_k = alpha_k / sum alpha`, `alpha_k = d_k (1 + (tau5 / (beta_k + eps))^2)`.
pub fn wenoz_weights_in<A: Arith>(
    ar: &mut A,
    beta: &[A::Value; 3],
    consts: &WenoConstants,
) -> [A::Value; 3] {
    let diff = ar.sub(beta[0], beta[2]);
    let tau5 = ar.abs(diff);
    let alpha: Vec<A::Value> = (0..3)
        .map(|k| {
            let den = ar.offset(beta[k], consts.eps);
            let r = ar.div(tau5, den);
            let r2 = ar.square(r);
            let one_plus = ar.offset(r2, 1.0);
            ar.scale(one_plus, consts.d[k])
        })
        .collect();
    let total = ar.lincomb(&[(1.0, alpha[0]), (1.0, alpha[1]), (1.0, alpha[2])]);
    [
        ar.div(alpha[0], total),
        ar.div(alpha[1], total),
        ar.div(alpha[2], total),
    ]
}

/// Upwind-biased WENO-Z value at `x_{j+1/2}` from `f_{j-2..=j+2}`.
pub fn reconstruct_interface_flux_in<A: Arith>(
    ar: &mut A,
    f: &[A::Value; 5],
    consts: &WenoConstants,
) -> A::Value {
    let cand = candidate_fluxes_in(ar, f);
    let beta = smoothness_indicators_in(ar, f);
    let w = wenoz_weights_in(ar, &beta, consts);
    let terms: Vec<A::Value> = (0..3).map(|k| ar.mul(w[k], cand[k])).collect();
    ar.lincomb(&[(1.0, terms[0]), (1.0, terms[1]), (1.0, terms[2])])
}

/// Split numerical flux `f^_{i+1/2}` from the six solution values `u_{i-2..=i+3}`.
///
/// The positive part is reconstructed from `f+_{i-2..=i+2}`; the negative
/// part is its mirror image about `x_{i+1/2}`, from `f-_{i+3}` down to `f-_{i-1}`.
pub fn split_interface_flux_in<A: Arith>(
    ar: &mut A,
    u: &[A::Value; 6],
    flux: &Flux,
    lambda: f64,
    consts: &WenoConstants,
) -> A::Value {
    let mut fp = Vec::with_capacity(6);
    let mut fm = Vec::with_capacity(6);
    for &v in u {
        let f = flux.eval_in(ar, v);
        fp.push(ar.lincomb(&[(0.5, f), (0.5 * lambda, v)]));
        fm.push(ar.lincomb(&[(0.5, f), (-0.5 * lambda, v)]));
    }
    let plus = reconstruct_interface_flux_in(ar, &[fp[0], fp[1], fp[2], fp[3], fp[4]], consts);
    let minus = reconstruct_interface_flux_in(ar, &[fm[5], fm[4], fm[3], fm[2], fm[1]], consts);
    ar.add(plus, minus)
}

pub fn candidate_fluxes(f: &[f64; 5]) -> [f64; 3] {
    candidate_fluxes_in(&mut Plain, f)
}

pub fn smoothness_indicators(f: &[f64; 5]) -> [f64; 3] {
    smoothness_indicators_in(&mut Plain, f)
}

pub fn wenoz_weights(beta: &[f64; 3], consts: &WenoConstants) -> [f64; 3] {
    wenoz_weights_in(&mut Plain, beta, consts)
}

pub fn reconstruct_interface_flux(f: &[f64; 5], consts: &WenoConstants) -> f64 {
    reconstruct_interface_flux_in(&mut Plain, f, consts)
}

/// Interface fluxes `f^_{i+1/2}` for `i = -1..=N-1` (`N + 1` values) from an
/// extended field carrying [`GHOSTS`] cells on each side.
fn interface_fluxes(
    extended: &[f64],
    flux: &Flux,
    lambda: f64,
    consts: &WenoConstants,
) -> Vec<f64> {
    let fp: Vec<f64> = extended
        .iter()
        .map(|&v| 0.5 * (flux.eval(v) + lambda * v))
        .collect();
    let fm: Vec<f64> = extended
        .iter()
        .map(|&v| 0.5 * (flux.eval(v) - lambda * v))
        .collect();
    let n = extended.len() - 2 * GHOSTS;
    (0..=n)
        .map(|k| {
            // interface between extended cells k + 2 and k + 3
            let plus = reconstruct_interface_flux(
                &[fp[k], fp[k + 1], fp[k + 2], fp[k + 3], fp[k + 4]],
                consts,
            );
            let minus = reconstruct_interface_flux(
                &[fm[k + 5], fm[k + 4], fm[k + 3], fm[k + 2], fm[k + 1]],
                consts,
            );
            plus + minus
        })
        .collect()
}

/// Conservative WENO-Z approximation of `f(u)_x` at every grid point.
pub fn weno_derivative(
    u: &GridField,
    flux: &Flux,
    lambda: f64,
    ext: Extension,
    consts: &WenoConstants,
) -> Result<GridField, WenoError> {
    if u.len() < 7 {
        return Err(WenoError::TooFewPoints { n: u.len(), min: 7 });
    }
    check_lambda(&u.values, flux, lambda)?;
    let extended = extend(&mut Plain, &u.values, ext, GHOSTS);
    let fhat = interface_fluxes(&extended, flux, lambda, consts);
    let inv_dx = 1.0 / u.dx;
    Ok(u.with_values(fhat.windows(2).map(|w| (w[1] - w[0]) * inv_dx).collect()))
}

/// Smoothness indicator on the downstream stencil `f_{j+1..=j+3}`.
pub fn beta3(f: &[f64; 3]) -> f64 {
    (f[0] * (22.0 * f[0] - 73.0 * f[1] + 29.0 * f[2])
        + f[1] * (61.0 * f[1] - 49.0 * f[2])
        + 10.0 * f[2] * f[2])
        / 3.0
}

/// Normalized scale-separation measures `chi_0..chi_3` from `f_{j-2..=j+3}`.
pub fn scale_separation(f: &[f64; 6], consts: &WenoConstants) -> [f64; 4] {
    let b = smoothness_indicators(&[f[0], f[1], f[2], f[3], f[4]]);
    let b3 = beta3(&[f[3], f[4], f[5]]);
    let gamma = [b[0], b[1], b[2], b3].map(|bk| 1.0 / (bk + consts.delta).powi(consts.p));
    let total: f64 = gamma.iter().sum();
    gamma.map(|g| g / total)
}

/// Flag is 1 unless every `chi_k` exceeds `C_T`.
///
/// Points whose six-point stencil `j-2..=j+3` would leave the grid are
/// classified smooth.
pub fn discontinuity_flags(u: &GridField, consts: &WenoConstants) -> DiscontinuityMask {
    let n = u.len();
    let mut flags = vec![false; n];
    if n >= 6 {
        for (j, flag) in flags.iter_mut().enumerate().take(n - 3).skip(2) {
            let s: [f64; 6] = u.values[j - 2..=j + 3].try_into().expect("six values");
            let chi = scale_separation(&s, consts);
            *flag = !chi.iter().all(|&c| c > consts.c_t);
        }
    }
    DiscontinuityMask { flags }
}
