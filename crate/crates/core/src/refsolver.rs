//! Method-of-lines reference solver: WENO-Z convection, central diffusion and
//! third-order TVD Runge–Kutta in time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Plain;
use crate::grid::{extend, Extension, GridField};
use crate::pde::PdeSpec;
use crate::weno::{weno_derivative, WenoConstants, WenoError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefError {
    #[error(transparent)]
    Weno(#[from] WenoError),
    #[error("time step {dt:e} exceeds stability limit {limit:e}")]
    CflViolation { dt: f64, limit: f64 },
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error("reference field has zero norm")]
    ZeroReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSettings {
    /// Grid points, endpoints included.
    pub n_cells: usize,
    pub cfl: f64,
    pub extension: Extension,
}

impl Default for ReferenceSettings {
    fn default() -> Self {
        Self {
            n_cells: 1000,
            cfl: 0.4,
            extension: Extension::OddReflection,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub settings: ReferenceSettings,
    pub pde: PdeSpec,
    pub snapshot_times: Vec<f64>,
    pub weno: WenoConstants,
}

impl SolverConfig {
    pub fn new(pde: PdeSpec, snapshot_times: Vec<f64>) -> Self {
        Self {
            settings: ReferenceSettings::default(),
            pde,
            snapshot_times,
            weno: WenoConstants::default(),
        }
    }

    pub fn t_final(&self) -> f64 {
        self.snapshot_times.iter().copied().fold(0.0, f64::max)
    }

    fn validate(&self) -> Result<(), RefError> {
        let s = &self.settings;
        if s.n_cells < 16 {
            return Err(RefError::InvalidConfig(format!("n_cells {} < 16", s.n_cells)));
        }
        if !(s.cfl > 0.0 && s.cfl <= 1.0) {
            return Err(RefError::InvalidConfig(format!("cfl {} outside (0, 1]", s.cfl)));
        }
        if self.snapshot_times.iter().any(|&t| !(t >= 0.0)) {
            return Err(RefError::InvalidConfig("negative snapshot time".into()));
        }
        self.pde.validate().map_err(RefError::InvalidConfig)
    }
}

/// Fields at the requested times, in increasing time order.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshots {
    pub times: Vec<f64>,
    pub fields: Vec<GridField>,
}

impl Snapshots {
    pub fn at(&self, t: f64) -> Option<&GridField> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() < 1e-12)
            .map(|i| &self.fields[i])
    }
}

/// `-f(u)_x + nu u_xx + h` on the grid. With a Dirichlet-type extension the
/// end points are held fixed (zero tendency).
pub fn rhs(
    u: &GridField,
    pde: &PdeSpec,
    t: f64,
    ext: Extension,
    consts: &WenoConstants,
) -> Result<GridField, RefError> {
    let lambda = pde.flux.max_speed(&u.values);
    let conv = weno_derivative(u, &pde.flux, lambda, ext, consts)?;
    let padded = extend(&mut Plain, &u.values, ext, 1);
    let inv_dx2 = 1.0 / (u.dx * u.dx);
    let n = u.len();
    let mut out: Vec<f64> = (0..n)
        .map(|j| {
            let lap = (padded[j] - 2.0 * padded[j + 1] + padded[j + 2]) * inv_dx2;
            -conv.values[j] + pde.viscosity * lap + pde.source_at(u.x(j), t)
        })
        .collect();
    if ext != Extension::Periodic {
        out[0] = 0.0;
        out[n - 1] = 0.0;
    }
    Ok(u.with_values(out))
}

/// Shu–Osher three-stage update `u1 = u + dt L(u)`,
/// `u2 = (3u + u1 + dt L(u1)) / 4`, `u3 = (u + 2u2 + 2dt L(u2)) / 3`.
pub fn tvd_rk3_step<E>(
    u: &GridField,
    dt: f64,
    mut op: impl FnMut(&GridField) -> Result<GridField, E>,
) -> Result<GridField, E> {
    let l0 = op(u)?;
    let u1 = u.with_values(
        u.values
            .iter()
            .zip(&l0.values)
            .map(|(&v, &l)| v + dt * l)
            .collect(),
    );
    let l1 = op(&u1)?;
    let u2 = u.with_values(
        (0..u.len())
            .map(|j| 0.25 * (3.0 * u.values[j] + u1.values[j] + dt * l1.values[j]))
            .collect(),
    );
    let l2 = op(&u2)?;
    Ok(u.with_values(
        (0..u.len())
            .map(|j| (u.values[j] + 2.0 * u2.values[j] + 2.0 * dt * l2.values[j]) / 3.0)
            .collect(),
    ))
}

#[derive(Debug, Clone)]
pub struct ReferenceSolver {
    config: SolverConfig,
}

impl ReferenceSolver {
    pub fn new(config: SolverConfig) -> Result<Self, RefError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn initial_field(&self) -> GridField {
        let (l, r) = self.config.pde.domain;
        GridField::sample(l, r, self.config.settings.n_cells, |x| (self.config.pde.initial)(x))
    }

    /// Largest step allowed by the convective and diffusive CFL bounds.
    pub fn stable_dt(&self, u: &GridField) -> f64 {
        let cfl = self.config.settings.cfl;
        let speed = self.config.pde.flux.max_speed(&u.values);
        let mut dt = f64::INFINITY;
        if speed > 0.0 {
            dt = dt.min(cfl * u.dx / speed);
        }
        if self.config.pde.viscosity > 0.0 {
            dt = dt.min(cfl * u.dx * u.dx / (2.0 * self.config.pde.viscosity));
        }
        dt
    }

    pub fn rhs(&self, u: &GridField, t: f64) -> Result<GridField, RefError> {
        rhs(u, &self.config.pde, t, self.config.settings.extension, &self.config.weno)
    }

    pub fn step(&self, u: &GridField, t: f64, dt: f64) -> Result<GridField, RefError> {
        let limit = self.stable_dt(u);
        if dt > limit * (1.0 + 1e-12) {
            return Err(RefError::CflViolation { dt, limit });
        }
        // stage times t, t + dt, t + dt/2
        let mut stage = 0;
        tvd_rk3_step(u, dt, |v| {
            let ts = t + [0.0, dt, 0.5 * dt][stage];
            stage += 1;
            self.rhs(v, ts)
        })
    }

    /// Marches from the initial condition, landing exactly on every snapshot time.
    pub fn solve(&self) -> Result<Snapshots, RefError> {
        self.solve_with(|_, _| {})
    }

    /// As [`ReferenceSolver::solve`], calling `observe(t, u)` after every step.
    pub fn solve_with(&self, mut observe: impl FnMut(f64, &GridField)) -> Result<Snapshots, RefError> {
        let mut times = self.config.snapshot_times.clone();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let mut u = self.initial_field();
        let mut t = 0.0;
        let mut fields = Vec::with_capacity(times.len());
        for &target in &times {
            while target - t > 1e-14 {
                let dt = self.stable_dt(&u).min(target - t);
                u = self.step(&u, t, dt)?;
                t = if target - (t + dt) < 1e-14 { target } else { t + dt };
                observe(t, &u);
            }
            fields.push(u.clone());
        }
        Ok(Snapshots { times, fields })
    }
}

pub fn solve(config: SolverConfig) -> Result<Snapshots, RefError> {
    ReferenceSolver::new(config)?.solve()
}

/// Four-point Lagrange interpolation of `field` at `x`.
pub fn interpolate_cubic(field: &GridField, x: f64) -> f64 {
    let n = field.len();
    let s = (x - field.x0) / field.dx;
    let nearest = s.round();
    if (s - nearest).abs() < 1e-9 && nearest >= 0.0 && (nearest as usize) < n {
        return field.values[nearest as usize];
    }
    let k = (s.floor() as isize).clamp(1, n as isize - 3) as usize;
    let nodes = [k - 1, k, k + 1, k + 2];
    nodes
        .iter()
        .map(|&j| {
            let basis: f64 = nodes
                .iter()
                .filter(|&&m| m != j)
                .map(|&m| (s - m as f64) / (j as f64 - m as f64))
                .product();
            basis * field.values[j]
        })
        .sum()
}

/// `||pred - ref||_2 / ||ref||_2` at `pred`'s points, `ref` interpolated cubically.
pub fn relative_error(pred: &GridField, reference: &GridField) -> Result<f64, RefError> {
    let (num, den) = (0..pred.len()).fold((0.0, 0.0), |(num, den), j| {
        let r = interpolate_cubic(reference, pred.x(j));
        let e = pred.values[j] - r;
        (num + e * e, den + r * r)
    });
    if den == 0.0 {
        return Err(RefError::ZeroReference);
    }
    Ok((num / den).sqrt())
}

/// Snapshot export with header `x,u`.
pub fn to_csv(field: &GridField) -> String {
    let mut out = String::from("x,u\n");
    for (j, v) in field.values.iter().enumerate() {
        out.push_str(&format!("{},{}\n", field.x(j), v));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::Flux;
    use std::f64::consts::PI;
    use std::sync::Arc;

    #[test]
    fn zero_field_has_zero_tendency() {
        let pde = PdeSpec::burgers(0.01);
        let u = GridField::sample(-1.0, 1.0, 40, |_| 0.0);
        let r = rhs(&u, &pde, 0.0, Extension::OddReflection, &WenoConstants::default()).unwrap();
        assert!(r.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_advection_of_linear_data() {
        let mut pde = PdeSpec::burgers(0.0);
        pde.flux = Flux::Linear(1.0);
        let u = GridField::sample(-1.0, 1.0, 41, |x| x);
        let r = rhs(&u, &pde, 0.0, Extension::OddReflection, &WenoConstants::default()).unwrap();
        assert!(r.values[1..40].iter().all(|&v| (v + 1.0).abs() < 1e-12));
    }

    #[test]
    fn diffusion_matches_second_derivative() {
        let nu = 0.1;
        let mut pde = PdeSpec::burgers(nu);
        pde.flux = Flux::Zero;
        let mut errs = Vec::new();
        for n in [51, 101] {
            let u = GridField::sample(-1.0, 1.0, n, |x| (PI * x).sin());
            let r = rhs(&u, &pde, 0.0, Extension::OddReflection, &WenoConstants::default()).unwrap();
            let e = (1..n - 1)
                .map(|j| (r.values[j] + nu * PI * PI * (PI * u.x(j)).sin()).abs())
                .fold(0.0, f64::max);
            errs.push(e);
        }
        // second order: halving dx quarters the error
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.9, "order {order}");
    }

    #[test]
    fn rk3_on_linear_decay() {
        let u = GridField::new(vec![2.0; 3], 0.0, 1.0);
        let dt = 0.1;
        let next = tvd_rk3_step(&u, dt, |v| Ok::<_, ()>(v.map(|x| -x))).unwrap();
        let factor = 1.0 - dt + dt * dt / 2.0 - dt * dt * dt / 6.0;
        assert!(next.values.iter().all(|&v| (v - 2.0 * factor).abs() < 1e-14));
        let same = tvd_rk3_step(&u, dt, |v| Ok::<_, ()>(v.map(|_| 0.0))).unwrap();
        assert_eq!(same, u);
    }

    #[test]
    fn cfl_violation_is_reported() {
        let mut cfg = SolverConfig::new(PdeSpec::burgers(0.0), vec![0.1]);
        cfg.settings.n_cells = 101;
        let s = ReferenceSolver::new(cfg).unwrap();
        let u = s.initial_field();
        let limit = s.stable_dt(&u);
        assert!(matches!(s.step(&u, 0.0, 2.0 * limit), Err(RefError::CflViolation { .. })));
        assert!(s.step(&u, 0.0, limit).is_ok());
    }

    #[test]
    fn zero_final_time_returns_initial_condition() {
        let mut cfg = SolverConfig::new(PdeSpec::burgers(0.0), vec![0.0]);
        cfg.settings.n_cells = 64;
        let snaps = solve(cfg.clone()).unwrap();
        let init = ReferenceSolver::new(cfg).unwrap().initial_field();
        assert_eq!(snaps.fields[0], init);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = SolverConfig::new(PdeSpec::burgers(0.0), vec![0.1]);
        cfg.settings.n_cells = 8;
        assert!(ReferenceSolver::new(cfg.clone()).is_err());
        cfg.settings.n_cells = 100;
        cfg.settings.cfl = 1.5;
        assert!(ReferenceSolver::new(cfg).is_err());
    }

    #[test]
    fn source_term_is_applied() {
        let mut pde = PdeSpec::burgers(0.0);
        pde.flux = Flux::Zero;
        pde.source = Some(Arc::new(|x, t| x + t));
        let u = GridField::sample(-1.0, 1.0, 11, |_| 0.0);
        let r = rhs(&u, &pde, 0.5, Extension::OddReflection, &WenoConstants::default()).unwrap();
        assert!((r.values[5] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn relative_error_homogeneity() {
        let r = GridField::sample(-1.0, 1.0, 101, |x| (PI * x).sin());
        let p = GridField::sample(-1.0, 1.0, 30, |x| 1.01 * (PI * x).sin());
        let exact = GridField::sample(-1.0, 1.0, 30, |x| (PI * x).sin());
        assert!(relative_error(&exact, &exact).unwrap() < 1e-14);
        let e = relative_error(&p, &r).unwrap();
        assert!((e - 0.01).abs() < 1e-6, "{e}");
        let same = relative_error(&p.map(|v| v / 1.01), &p.map(|v| v / 1.01)).unwrap();
        assert!(same < 1e-15);
        let zero = GridField::sample(-1.0, 1.0, 30, |_| 0.0);
        assert_eq!(relative_error(&p, &zero), Err(RefError::ZeroReference));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let csv = to_csv(&GridField::sample(0.0, 1.0, 3, |x| x));
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "x,u");
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn cubic_interpolation_is_exact_for_cubics() {
        let f = GridField::sample(0.0, 1.0, 11, |x| x * x * x - x);
        for x in [0.0, 0.03, 0.55, 0.97, 1.0] {
            assert!((interpolate_cubic(&f, x) - (x * x * x - x)).abs() < 1e-14);
        }
    }
}
