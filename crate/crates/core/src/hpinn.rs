//! Hybrid discrete-time PINN: residual assembly, loss, training and time marching.
//!
//! The residual, stage-target and loss formulas are written once over
//! [`Arith`]. They run on graph nodes coming out of
//! [`GraphNetwork::forward_bundles`] (fully nested differentiation) and, for
//! training, on a small "loss head" graph whose leaves are the network
//! outputs `u, u_x, u_xx` supplied by [`BatchEvaluator`].

use std::time::Instant;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Arith, DerivativeBundle, Graph, GraphError, Var};
use crate::grid::{extend, Extension, GridField};
use crate::irk::{ButcherTableau, IrkError};
use crate::network::{BatchEvaluator, BatchOutputs, GraphNetwork, NetworkConfig, NetworkError, NetworkParameters};
use crate::pde::PdeSpec;
use crate::refsolver::{relative_error, RefError, Snapshots};
use crate::weno::{discontinuity_flags, split_interface_flux_in, DiscontinuityMask, WenoConstants, GHOSTS};

#[derive(Debug, Error)]
pub enum HpinnError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Irk(#[from] IrkError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Reference(#[from] RefError),
    #[error("non-finite loss at iteration {iteration} (parameter norm {param_norm:e}): {source}")]
    NonFiniteLoss {
        iteration: usize,
        param_norm: f64,
        source: GraphError,
    },
    #[error("time step {step} failed: {source}")]
    StepFailed { step: usize, source: Box<HpinnError> },
}

/// How the loss terms are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossNormalization {
    /// Mean over points and stages.
    #[default]
    Mean,
    /// Plain sums.
    Sum,
}

/// When the discontinuity mask is recomputed during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum MaskUpdate {
    /// Once per time step, from the known data.
    #[default]
    Frozen,
    /// Also every `iterations` optimizer steps, from the current stage fields
    /// (united with the data mask).
    Every { iterations: usize },
}

/// Field fed to the discontinuity indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorInput {
    #[default]
    Solution,
    Flux,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretizationConfig {
    /// Uniform collocation points on the domain, endpoints included.
    pub n_points: usize,
    pub dt: f64,
    pub t_final: f64,
    #[serde(alias = "q_stages")]
    pub q: usize,
    /// WENO in flagged cells; `false` gives the plain discrete-time PINN.
    pub hybrid: bool,
    pub mask_dilation: usize,
    pub mask_update: MaskUpdate,
    pub indicator_input: IndicatorInput,
    /// `lambda = lambda_safety * max |f'(u^n)|`
    pub lambda_safety: f64,
    pub extension: Extension,
    pub weno: WenoConstants,
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        Self {
            n_points: 300,
            dt: 0.1,
            t_final: 0.6,
            q: 10,
            hybrid: true,
            mask_dilation: 3,
            mask_update: MaskUpdate::Frozen,
            indicator_input: IndicatorInput::Solution,
            lambda_safety: 1.1,
            extension: Extension::OddReflection,
            weno: WenoConstants::default(),
        }
    }
}

impl DiscretizationConfig {
    pub fn validate(&self) -> Result<(), HpinnError> {
        let bad = |m: String| Err(HpinnError::InvalidConfig(m));
        if self.n_points < 7 {
            return bad(format!("n_points {} < 7", self.n_points));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return bad(format!("t_final must be >= 0, got {}", self.t_final));
        }
        if self.q == 0 || self.q > crate::irk::MAX_STAGES {
            return bad(format!("q {} outside 1..={}", self.q, crate::irk::MAX_STAGES));
        }
        if !(self.lambda_safety >= 1.0) {
            return bad(format!("lambda_safety {} < 1", self.lambda_safety));
        }
        if let MaskUpdate::Every { iterations: 0 } = self.mask_update {
            return bad("mask_update interval must be positive".into());
        }
        self.steps().map(|_| ())
    }

    /// Number of time steps; `t_final` must be a multiple of `dt` to 1e-12.
    pub fn steps(&self) -> Result<usize, HpinnError> {
        let k = (self.t_final / self.dt).round();
        if (k * self.dt - self.t_final).abs() > 1e-12 {
            return Err(HpinnError::InvalidConfig(format!(
                "t_final {} is not a multiple of dt {}",
                self.t_final, self.dt
            )));
        }
        Ok(k as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub loss_tolerance: f64,
    pub max_iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Start each step from the previous step's parameters.
    pub warm_start: bool,
    pub normalization: LossNormalization,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            loss_tolerance: 1e-5,
            max_iterations: 200_000,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            warm_start: true,
            normalization: LossNormalization::Mean,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), HpinnError> {
        let bad = |m: String| Err(HpinnError::InvalidConfig(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.loss_tolerance > 0.0) {
            return bad(format!("loss_tolerance must be > 0, got {}", self.loss_tolerance));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be > 0".into());
        }
        Ok(())
    }
}

/// Known data at `t_n` with the mask and `lambda` frozen for the step.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeStepState {
    pub t_n: f64,
    pub data: GridField,
    pub mask: DiscontinuityMask,
    pub lambda: f64,
}

impl TimeStepState {
    pub fn new(t_n: f64, data: GridField, pde: &PdeSpec, disc: &DiscretizationConfig) -> Self {
        let mask = if disc.hybrid {
            let probe = match disc.indicator_input {
                IndicatorInput::Solution => data.clone(),
                IndicatorInput::Flux => data.map(|v| pde.flux.eval(v)),
            };
            discontinuity_flags(&probe, &disc.weno).dilate(disc.mask_dilation)
        } else {
            DiscontinuityMask::zeros(data.len())
        };
        let lambda = disc.lambda_safety * pde.flux.max_speed(&data.values);
        Self {
            t_n,
            data,
            mask,
            lambda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub l_pde: f64,
    pub l_bc: f64,
}

/// Loss nodes in some [`Arith`] representation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms<V> {
    pub total: V,
    pub l_pde: V,
    pub l_bc: V,
}

impl LossTerms<Var> {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        LossBreakdown {
            total: g.value(self.total),
            l_pde: g.value(self.l_pde),
            l_bc: g.value(self.l_bc),
        }
    }
}

/// The spatial operator `N[u] = f(u)_x - nu u_xx - h` with the step's frozen
/// mask and splitting speed.
#[derive(Debug, Clone, Copy)]
pub struct HybridOperator<'a> {
    pub pde: &'a PdeSpec,
    pub mask: &'a DiscontinuityMask,
    pub lambda: f64,
    pub extension: Extension,
    pub weno: &'a WenoConstants,
}

impl<'a> HybridOperator<'a> {
    pub fn new(pde: &'a PdeSpec, state: &'a TimeStepState, disc: &'a DiscretizationConfig) -> Self {
        Self {
            pde,
            mask: &state.mask,
            lambda: state.lambda,
            extension: disc.extension,
            weno: &disc.weno,
        }
    }

    /// `f(u)_x`: `f'(u) u_x` at unflagged points, the conservative WENO-Z
    /// difference of neighbouring values at flagged ones.
    pub fn convection_in<A: Arith>(
        &self,
        ar: &mut A,
        u: &[A::Value],
        ux: &[A::Value],
        dx: f64,
    ) -> Vec<A::Value> {
        let n = u.len();
        let flux = &self.pde.flux;
        let extended = if self.mask.count() > 0 {
            extend(ar, u, self.extension, GHOSTS)
        } else {
            Vec::new()
        };
        // interfaces[k] is the flux at x_{k-1/2}, built from u_{k-3..=k+2}
        let mut interfaces: Vec<Option<A::Value>> = vec![None; n + 1];
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            if !self.mask.flags[i] {
                let speed = flux.derivative_in(ar, u[i]);
                out.push(ar.mul(speed, ux[i]));
                continue;
            }
            for k in [i, i + 1] {
                if interfaces[k].is_none() {
                    let s: [A::Value; 6] = extended[k..k + 6].try_into().expect("six values");
                    interfaces[k] = Some(split_interface_flux_in(ar, &s, flux, self.lambda, self.weno));
                }
            }
            let diff = ar.sub(
                interfaces[i + 1].expect("interface built"),
                interfaces[i].expect("interface built"),
            );
            out.push(ar.scale(diff, 1.0 / dx));
        }
        out
    }

    /// `N[u]` at every grid point at time `t`; the viscous term always uses `u_xx`.
    pub fn residual_in<A: Arith>(
        &self,
        ar: &mut A,
        u: &[A::Value],
        ux: &[A::Value],
        uxx: &[A::Value],
        grid: &GridField,
        t: f64,
    ) -> Vec<A::Value> {
        let conv = self.convection_in(ar, u, ux, grid.dx);
        let nu = self.pde.viscosity;
        conv.into_iter()
            .enumerate()
            .map(|(j, c)| {
                let mut r = if nu != 0.0 {
                    ar.lincomb(&[(1.0, c), (-nu, uxx[j])])
                } else {
                    c
                };
                let h = self.pde.source_at(grid.x(j), t);
                if h != 0.0 {
                    r = ar.offset(r, -h);
                }
                r
            })
            .collect()
    }
}

/// `u_i^n = u^{n+c_i} + dt sum_j a_ij N_j` for `i <= q` and
/// `u_{q+1}^n = u^{n+1} + dt sum_j b_j N_j`, each indexed `[stage][point]`.
pub fn stage_targets_in<A: Arith>(
    ar: &mut A,
    stages: &[Vec<A::Value>],
    residuals: &[Vec<A::Value>],
    tableau: &ButcherTableau,
    dt: f64,
) -> Result<Vec<Vec<A::Value>>, HpinnError> {
    let q = tableau.q;
    let check = |what, expected: usize, found: usize| {
        if expected == found {
            Ok(())
        } else {
            Err(HpinnError::DimensionMismatch {
                what,
                expected,
                found,
            })
        }
    };
    check("stage outputs", q + 1, stages.len())?;
    check("stage residuals", q, residuals.len())?;
    let n = stages[0].len();
    for s in stages.iter().chain(residuals) {
        check("points per stage", n, s.len())?;
    }
    let mut terms = Vec::with_capacity(q + 1);
    Ok((0..=q)
        .map(|i| {
            let coeffs = if i < q { &tableau.a[i] } else { &tableau.b };
            (0..n)
                .map(|p| {
                    terms.clear();
                    terms.push((1.0, stages[i][p]));
                    terms.extend(coeffs.iter().zip(residuals).map(|(&c, r)| (dt * c, r[p])));
                    ar.lincomb(&terms)
                })
                .collect()
        })
        .collect())
}

/// `L_PDE` over every point and all `q+1` targets against `data`, plus `L_BC`
/// over both endpoints of every stage output.
pub fn loss_in<A: Arith>(
    ar: &mut A,
    targets: &[Vec<A::Value>],
    data: &[f64],
    stages: &[Vec<A::Value>],
    boundary: (f64, f64),
    normalization: LossNormalization,
) -> LossTerms<A::Value> {
    let misfit = |ar: &mut A, v: A::Value, d: f64| {
        let e = ar.offset(v, -d);
        ar.square(e)
    };
    let pde_count = targets.len() * data.len();
    let bc_count = 2 * stages.len();
    let (w_pde, w_bc) = match normalization {
        LossNormalization::Mean => (1.0 / pde_count as f64, 1.0 / bc_count as f64),
        LossNormalization::Sum => (1.0, 1.0),
    };
    let mut terms = Vec::with_capacity(pde_count);
    for target in targets {
        for (&v, &d) in target.iter().zip(data) {
            terms.push((w_pde, misfit(ar, v, d)));
        }
    }
    let l_pde = ar.lincomb(&terms);
    terms.clear();
    for stage in stages {
        let last = stage.len() - 1;
        terms.push((w_bc, misfit(ar, stage[0], boundary.0)));
        terms.push((w_bc, misfit(ar, stage[last], boundary.1)));
    }
    let l_bc = ar.lincomb(&terms);
    let total = ar.add(l_pde, l_bc);
    LossTerms { total, l_pde, l_bc }
}

/// Network stage outputs over a grid, as values and as graph bundles.
#[derive(Debug, Clone)]
pub struct StageFields {
    /// One field per output, `q + 1` in all.
    pub fields: Vec<GridField>,
    /// `bundles[stage][point]`
    pub bundles: Vec<Vec<DerivativeBundle>>,
}

impl StageFields {
    pub fn stages(&self) -> usize {
        self.bundles.len()
    }

    fn column(&self, pick: impl Fn(&DerivativeBundle) -> Var) -> Vec<Vec<Var>> {
        self.bundles.iter().map(|s| s.iter().map(&pick).collect()).collect()
    }

    pub fn u(&self) -> Vec<Vec<Var>> {
        self.column(|b| b.value)
    }

    pub fn ux(&self) -> Vec<Vec<Var>> {
        self.column(|b| b.dx)
    }

    pub fn uxx(&self) -> Vec<Vec<Var>> {
        self.column(|b| b.dxx)
    }
}

/// Builds every stage output and its `x`-derivatives at each grid point.
pub fn stage_fields(g: &mut Graph, net: &GraphNetwork, grid: &GridField) -> StageFields {
    let per_point: Vec<Vec<DerivativeBundle>> =
        grid.coordinates().into_iter().map(|x| net.forward_bundles(g, x)).collect();
    let stages = per_point.first().map_or(0, Vec::len);
    let bundles: Vec<Vec<DerivativeBundle>> =
        (0..stages).map(|s| per_point.iter().map(|p| p[s]).collect()).collect();
    let fields = bundles
        .iter()
        .map(|s| grid.with_values(s.iter().map(|b| g.value(b.value)).collect()))
        .collect();
    StageFields { fields, bundles }
}

/// [`HybridOperator::convection_in`] on one stage's bundles.
pub fn hybrid_convection(
    g: &mut Graph,
    stage: &[DerivativeBundle],
    op: &HybridOperator<'_>,
    dx: f64,
) -> Vec<Var> {
    let u: Vec<Var> = stage.iter().map(|b| b.value).collect();
    let ux: Vec<Var> = stage.iter().map(|b| b.dx).collect();
    op.convection_in(g, &u, &ux, dx)
}

/// `N[u^{n+c_j}]` for the first `q` stage outputs, `[stage][point]`.
pub fn residual_operator(
    g: &mut Graph,
    stages: &StageFields,
    op: &HybridOperator<'_>,
    grid: &GridField,
    stage_times: &[f64],
) -> Vec<Vec<Var>> {
    let (u, ux, uxx) = (stages.u(), stages.ux(), stages.uxx());
    stage_times
        .iter()
        .enumerate()
        .map(|(j, &t)| op.residual_in(g, &u[j], &ux[j], &uxx[j], grid, t))
        .collect()
}

pub fn stage_targets(
    g: &mut Graph,
    stages: &StageFields,
    residuals: &[Vec<Var>],
    tableau: &ButcherTableau,
    dt: f64,
) -> Result<Vec<Vec<Var>>, HpinnError> {
    stage_targets_in(g, &stages.u(), residuals, tableau, dt)
}

pub fn compute_loss(
    g: &mut Graph,
    targets: &[Vec<Var>],
    data: &GridField,
    stages: &StageFields,
    boundary: (f64, f64),
    normalization: LossNormalization,
) -> LossTerms<Var> {
    loss_in(g, targets, &data.values, &stages.u(), boundary, normalization)
}

/// Stage times `t_n + c_j dt`.
pub fn stage_times(t_n: f64, tableau: &ButcherTableau, dt: f64) -> Vec<f64> {
    tableau.c.iter().map(|&c| t_n + c * dt).collect()
}

/// Full loss graph for one step with the network itself on the tape.
/// Slow but fully nested; the training loop uses [`StepLoss`] instead.
pub fn network_loss(
    g: &mut Graph,
    net: &GraphNetwork,
    state: &TimeStepState,
    pde: &PdeSpec,
    disc: &DiscretizationConfig,
    tableau: &ButcherTableau,
    normalization: LossNormalization,
) -> Result<LossTerms<Var>, HpinnError> {
    let stages = stage_fields(g, net, &state.data);
    if stages.stages() != tableau.q + 1 {
        return Err(HpinnError::DimensionMismatch {
            what: "network outputs",
            expected: tableau.q + 1,
            found: stages.stages(),
        });
    }
    let op = HybridOperator::new(pde, state, disc);
    let times = stage_times(state.t_n, tableau, disc.dt);
    let residuals = residual_operator(g, &stages, &op, &state.data, &times);
    let targets = stage_targets(g, &stages, &residuals, tableau, disc.dt)?;
    Ok(compute_loss(g, &targets, &state.data, &stages, pde.boundary, normalization))
}

/// Loss of one time step as a function of the network outputs at the grid.
///
/// The tape is built once for a fixed mask; each evaluation only resets the
/// `u, u_x, u_xx` leaves and re-runs it.
#[derive(Debug, Clone)]
pub struct StepLoss {
    graph: Graph,
    u: Vec<Vec<Var>>,
    ux: Vec<Vec<Var>>,
    uxx: Vec<Vec<Var>>,
    terms: LossTerms<Var>,
    adjoints: Vec<f64>,
}

impl StepLoss {
    pub fn new(
        state: &TimeStepState,
        pde: &PdeSpec,
        disc: &DiscretizationConfig,
        tableau: &ButcherTableau,
        normalization: LossNormalization,
    ) -> Result<Self, HpinnError> {
        let n = state.data.len();
        let q = tableau.q;
        if state.mask.len() != n {
            return Err(HpinnError::DimensionMismatch {
                what: "mask",
                expected: n,
                found: state.mask.len(),
            });
        }
        let mut g = Graph::new();
        let leaves = |g: &mut Graph, stages: usize| -> Vec<Vec<Var>> {
            (0..stages).map(|_| (0..n).map(|_| g.input(0.0)).collect()).collect()
        };
        let u = leaves(&mut g, q + 1);
        let ux = leaves(&mut g, q);
        let uxx = leaves(&mut g, q);
        let op = HybridOperator::new(pde, state, disc);
        let times = stage_times(state.t_n, tableau, disc.dt);
        let residuals: Vec<Vec<Var>> = (0..q)
            .map(|j| op.residual_in(&mut g, &u[j], &ux[j], &uxx[j], &state.data, times[j]))
            .collect();
        let targets = stage_targets_in(&mut g, &u, &residuals, tableau, disc.dt)?;
        let terms = loss_in(&mut g, &targets, &state.data.values, &u, pde.boundary, normalization);
        Ok(Self {
            graph: g,
            u,
            ux,
            uxx,
            terms,
            adjoints: Vec::new(),
        })
    }

    pub fn tape_len(&self) -> usize {
        self.graph.len()
    }

    pub fn evaluate(&mut self, out: &BatchOutputs) -> Result<LossBreakdown, GraphError> {
        let g = &mut self.graph;
        for (s, row) in self.u.iter().enumerate() {
            for (p, &v) in row.iter().enumerate() {
                g.set_value(v, out.value[[s, p]])?;
            }
        }
        for (s, (rx, rxx)) in self.ux.iter().zip(&self.uxx).enumerate() {
            for (p, (&vx, &vxx)) in rx.iter().zip(rxx).enumerate() {
                g.set_value(vx, out.dx[[s, p]])?;
                g.set_value(vxx, out.dxx[[s, p]])?;
            }
        }
        g.evaluate()?;
        Ok(self.terms.breakdown(g))
    }

    /// Adjoints of the total loss with respect to the outputs of the last
    /// [`StepLoss::evaluate`].
    pub fn output_adjoints(&mut self) -> Result<BatchOutputs, GraphError> {
        self.graph.gradient_into(self.terms.total, &mut self.adjoints)?;
        let outputs = self.u.len();
        let n = self.u[0].len();
        let pick = |rows: &[Vec<Var>], adj: &[f64]| {
            let mut a = Array2::zeros((outputs, n));
            for (s, row) in rows.iter().enumerate() {
                for (p, v) in row.iter().enumerate() {
                    a[[s, p]] = adj[v.index()];
                }
            }
            a
        };
        Ok(BatchOutputs {
            value: pick(&self.u, &self.adjoints),
            dx: pick(&self.ux, &self.adjoints),
            dxx: pick(&self.uxx, &self.adjoints),
        })
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: NetworkParameters,
    v: NetworkParameters,
}

impl Adam {
    pub fn new(config: &TrainingConfig, shape: &NetworkParameters) -> Self {
        let sizes = shape.layer_sizes();
        Self {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_epsilon,
            t: 0,
            m: NetworkParameters::zeros(&sizes),
            v: NetworkParameters::zeros(&sizes),
        }
    }

    pub fn step(&mut self, params: &mut NetworkParameters, grad: &NetworkParameters) {
        self.t = self.t.saturating_add(1);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let step = self.lr * (1.0 - b2.powi(self.t)).sqrt() / (1.0 - b1.powi(self.t));
        let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / (v.sqrt() + eps * (1.0 - b2.powi(self.t)).sqrt());
        };
        let layers = params
            .layers_mut()
            .iter_mut()
            .zip(grad.layers())
            .zip(self.m.layers_mut().iter_mut().zip(self.v.layers_mut()));
        for ((p, g), (m, v)) in layers {
            Zip::from(&mut p.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(update);
            Zip::from(&mut p.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(update);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t: f64,
    pub iterations: usize,
    pub converged: bool,
    pub initial_loss: f64,
    pub final_loss: LossBreakdown,
    pub flagged_cells: usize,
    pub lambda: f64,
    pub param_norm: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub params: NetworkParameters,
    /// The last network output at the grid, i.e. `u^{n+1}`.
    pub prediction: GridField,
    pub diagnostics: StepDiagnostics,
}

fn check_network(params: &NetworkParameters, tableau: &ButcherTableau) -> Result<(), HpinnError> {
    let sizes = params.layer_sizes();
    if sizes[0] != 1 || params.outputs() != tableau.q + 1 {
        return Err(HpinnError::DimensionMismatch {
            what: "network outputs",
            expected: tableau.q + 1,
            found: params.outputs(),
        });
    }
    Ok(())
}

/// Mask from the data united with the indicator applied to every stage field.
fn refreshed_mask(
    state: &TimeStepState,
    out: &BatchOutputs,
    pde: &PdeSpec,
    disc: &DiscretizationConfig,
) -> DiscontinuityMask {
    let mut mask = state.mask.clone();
    for row in out.value.rows() {
        let stage = state.data.with_values(row.to_vec());
        let probe = match disc.indicator_input {
            IndicatorInput::Solution => stage,
            IndicatorInput::Flux => stage.map(|v| pde.flux.eval(v)),
        };
        mask = mask.union(&discontinuity_flags(&probe, &disc.weno).dilate(disc.mask_dilation));
    }
    mask
}

/// Full-batch Adam on one time step until the loss drops below tolerance or
/// the iteration cap is reached. `observe(iteration, loss)` sees every
/// evaluated loss.
pub fn train_step_observed(
    state: &TimeStepState,
    mut params: NetworkParameters,
    tableau: &ButcherTableau,
    pde: &PdeSpec,
    disc: &DiscretizationConfig,
    training: &TrainingConfig,
    mut observe: impl FnMut(usize, &LossBreakdown),
) -> Result<StepOutcome, HpinnError> {
    let started = Instant::now();
    check_network(&params, tableau)?;
    let xs = state.data.coordinates();
    let mut batch = BatchEvaluator::new(&xs);
    let hybrid_refresh = match disc.mask_update {
        MaskUpdate::Every { iterations } if disc.hybrid => Some(iterations),
        _ => None,
    };
    let mut current = state.clone();
    let mut loss_fn = StepLoss::new(&current, pde, disc, tableau, training.normalization)?;
    let mut adam = Adam::new(training, &params);
    let fail = |iteration, params: &NetworkParameters, source| HpinnError::NonFiniteLoss {
        iteration,
        param_norm: params.norm(),
        source,
    };
    let mut iteration = 0;
    let mut initial_loss = f64::NAN;
    let (out, loss, converged) = loop {
        let out = batch.forward(&params);
        let loss = loss_fn.evaluate(&out).map_err(|e| fail(iteration, &params, e))?;
        if iteration == 0 {
            initial_loss = loss.total;
        }
        observe(iteration, &loss);
        if loss.total < training.loss_tolerance {
            break (out, loss, true);
        }
        if iteration >= training.max_iterations {
            break (out, loss, false);
        }
        let adj = loss_fn.output_adjoints().map_err(|e| fail(iteration, &params, e))?;
        let grad = batch.backward(&params, &adj);
        adam.step(&mut params, &grad);
        iteration += 1;
        if let Some(every) = hybrid_refresh {
            if iteration % every == 0 {
                let mask = refreshed_mask(state, &batch.forward(&params), pde, disc);
                if mask != current.mask {
                    current.mask = mask;
                    loss_fn = StepLoss::new(&current, pde, disc, tableau, training.normalization)?;
                }
            }
        }
    };
    let prediction = state
        .data
        .with_values(out.value.row(tableau.q).to_vec());
    let diagnostics = StepDiagnostics {
        step: 0,
        t: state.t_n + disc.dt,
        iterations: iteration,
        converged,
        initial_loss,
        final_loss: loss,
        flagged_cells: current.mask.count(),
        lambda: state.lambda,
        param_norm: params.norm(),
        wall_time: started.elapsed().as_secs_f64(),
    };
    Ok(StepOutcome {
        params,
        prediction,
        diagnostics,
    })
}

pub fn train_step(
    state: &TimeStepState,
    params: NetworkParameters,
    tableau: &ButcherTableau,
    pde: &PdeSpec,
    disc: &DiscretizationConfig,
    training: &TrainingConfig,
) -> Result<StepOutcome, HpinnError> {
    train_step_observed(state, params, tableau, pde, disc, training, |_, _| {})
}

/// Collocation grid with the initial condition sampled on it.
pub fn initial_data(pde: &PdeSpec, n_points: usize) -> GridField {
    GridField::sample(pde.domain.0, pde.domain.1, n_points, |x| (pde.initial)(x))
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `0, dt, 2 dt, ...`
    pub times: Vec<f64>,
    pub fields: Vec<GridField>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub params: NetworkParameters,
}

impl Trajectory {
    pub fn at(&self, t: f64) -> Option<&GridField> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() < 1e-9)
            .map(|i| &self.fields[i])
    }

    pub fn converged(&self) -> bool {
        self.diagnostics.iter().all(|d| d.converged)
    }

    pub fn total_iterations(&self) -> usize {
        self.diagnostics.iter().map(|d| d.iterations).sum()
    }
}

/// Marches from the initial condition to `t_final`, retraining at every step
/// on the previous prediction. `observe` sees each step's diagnostics.
pub fn march(
    pde: &PdeSpec,
    disc: &DiscretizationConfig,
    net: &NetworkConfig,
    training: &TrainingConfig,
    mut observe: impl FnMut(&StepDiagnostics),
) -> Result<Trajectory, HpinnError> {
    pde.validate().map_err(HpinnError::InvalidConfig)?;
    disc.validate()?;
    training.validate()?;
    let steps = disc.steps()?;
    let tableau = crate::irk::gauss_legendre_tableau(disc.q)?;
    let net = NetworkConfig {
        outputs: disc.q + 1,
        ..net.clone()
    };
    let fresh = NetworkParameters::init_xavier(&net)?;
    let mut params = fresh.clone();
    let mut data = initial_data(pde, disc.n_points);
    let mut traj = Trajectory {
        times: vec![0.0],
        fields: vec![data.clone()],
        diagnostics: Vec::with_capacity(steps),
        params: fresh.clone(),
    };
    for step in 0..steps {
        let t_n = step as f64 * disc.dt;
        let state = TimeStepState::new(t_n, data, pde, disc);
        let start = if training.warm_start { params } else { fresh.clone() };
        let outcome = train_step(&state, start, &tableau, pde, disc, training).map_err(|e| {
            HpinnError::StepFailed {
                step,
                source: Box::new(e),
            }
        })?;
        let mut diag = outcome.diagnostics;
        diag.step = step;
        diag.t = (step + 1) as f64 * disc.dt;
        observe(&diag);
        traj.diagnostics.push(diag);
        params = outcome.params;
        data = outcome.prediction;
        traj.times.push((step + 1) as f64 * disc.dt);
        traj.fields.push(data.clone());
    }
    traj.params = params;
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub t: f64,
    pub rel_error: f64,
}

/// Relative errors at every time present in both the trajectory and the snapshots.
pub fn error_report(traj: &Trajectory, reference: &Snapshots) -> Result<Vec<ErrorEntry>, HpinnError> {
    reference
        .times
        .iter()
        .zip(&reference.fields)
        .filter_map(|(&t, r)| traj.at(t).map(|p| (t, p, r)))
        .map(|(t, p, r)| {
            Ok(ErrorEntry {
                t,
                rel_error: relative_error(p, r)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Plain;
    use crate::irk::gauss_legendre_tableau;

    #[test]
    fn zero_dt_targets_are_stage_outputs() {
        let t = gauss_legendre_tableau(2).unwrap();
        let stages = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        let res = vec![vec![7.0, 8.0], vec![9.0, 10.0]];
        let targets = stage_targets_in(&mut Plain, &stages, &res, &t, 0.0).unwrap();
        assert_eq!(targets, stages);
    }

    #[test]
    fn midpoint_targets_with_unit_residual() {
        let t = gauss_legendre_tableau(1).unwrap();
        let stages = vec![vec![0.3], vec![0.7]];
        let res = vec![vec![1.0]];
        let targets = stage_targets_in(&mut Plain, &stages, &res, &t, 0.1).unwrap();
        assert!((targets[0][0] - 0.35).abs() < 1e-15);
        assert!((targets[1][0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn target_dimension_mismatch() {
        let t = gauss_legendre_tableau(2).unwrap();
        let err = stage_targets_in(&mut Plain, &[vec![0.0]], &[vec![0.0]], &t, 0.1).unwrap_err();
        assert!(matches!(err, HpinnError::DimensionMismatch { .. }));
    }

    #[test]
    fn single_offset_target_contributes_one_term() {
        let n = 5;
        let q = 2;
        let data = vec![0.0; n];
        let mut targets = vec![vec![0.0; n]; q + 1];
        targets[1][3] = 0.1;
        let stages = vec![vec![0.0; n]; q + 1];
        let l = loss_in(&mut Plain, &targets, &data, &stages, (0.0, 0.0), LossNormalization::Mean);
        assert!((l.l_pde - 0.01 / (n * (q + 1)) as f64).abs() < 1e-18);
        assert_eq!(l.l_bc, 0.0);
        assert_eq!(l.total, l.l_pde + l.l_bc);
        let s = loss_in(&mut Plain, &targets, &data, &stages, (0.0, 0.0), LossNormalization::Sum);
        assert!((s.total - 0.01).abs() < 1e-15);
    }

    #[test]
    fn steps_must_divide_final_time() {
        let mut d = DiscretizationConfig::default();
        assert_eq!(d.steps().unwrap(), 6);
        d.dt = 0.25;
        assert!(d.steps().is_err());
        d.dt = 0.6;
        assert_eq!(d.steps().unwrap(), 1);
    }

    #[test]
    fn config_validation() {
        assert!(DiscretizationConfig::default().validate().is_ok());
        assert!(TrainingConfig::default().validate().is_ok());
        let t = TrainingConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(t.validate().is_err());
        let d = DiscretizationConfig {
            q: 0,
            ..Default::default()
        };
        assert!(d.validate().is_err());
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let cfg = TrainingConfig::default();
        let mut p = NetworkParameters::zeros(&[1, 2, 1]);
        let mut g = NetworkParameters::zeros(&[1, 2, 1]);
        g.layers_mut()[0].weights[[0, 0]] = 3.0;
        g.layers_mut()[1].bias[0] = -0.5;
        let mut adam = Adam::new(&cfg, &p);
        adam.step(&mut p, &g);
        assert!((p.layers()[0].weights[[0, 0]] + 1e-4).abs() < 1e-10);
        assert!((p.layers()[1].bias[0] - 1e-4).abs() < 1e-10);
        assert_eq!(p.layers()[0].weights[[1, 0]], 0.0);
    }
}
