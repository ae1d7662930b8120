//! Fully connected tanh network mapping `x` to the `q + 1` stage values.
//!
//! Two evaluation routes share one parameter set:
//! * [`GraphNetwork`] records the network on an autodiff [`Graph`], one point
//!   at a time, exposing `u`, `u_x`, `u_xx` as differentiable nodes;
//! * [`BatchEvaluator`] pushes all collocation points through at once,
//!   propagating value/first/second derivative channels with dense matrix
//!   products and a hand-written reverse pass. Training uses this route.

use std::fs;
use std::io;
use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{DerivativeBundle, Graph, Var};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub outputs: usize,
    pub seed: u64,
}

impl NetworkConfig {
    /// Default 5 x 20 architecture for a `q`-stage scheme.
    pub fn for_stages(q: usize, seed: u64) -> Self {
        Self {
            hidden_layers: 5,
            width: 20,
            outputs: q + 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.hidden_layers < 1 || self.width < 1 || self.outputs < 2 {
            return Err(NetworkError::InvalidConfig(format!(
                "need hidden_layers >= 1, width >= 1, outputs >= 2; got {}, {}, {}",
                self.hidden_layers, self.width, self.outputs
            )));
        }
        Ok(())
    }

    /// Layer widths from input to output, e.g. `[1, 20, 20, 20, 20, 20, 11]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![1];
        sizes.extend(std::iter::repeat_n(self.width, self.hidden_layers));
        sizes.push(self.outputs);
        sizes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_out x fan_in`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParameters {
    layers: Vec<Layer>,
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    fan_out: usize,
    fan_in: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    layers: Vec<LayerRecord>,
}

impl NetworkParameters {
    /// Glorot-uniform weights with bound `sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init_xavier(config: &NetworkConfig) -> Result<Self, NetworkError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let sizes = config.layer_sizes();
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                Layer {
                    weights: Array2::from_shape_simple_fn((fan_out, fan_in), || {
                        dist.sample(&mut rng)
                    }),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weights: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NetworkError> {
        if layers.is_empty() || layers[0].fan_in() != 1 {
            return Err(NetworkError::Shape("input width must be 1".into()));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].fan_out() != w[1].fan_in() {
                return Err(NetworkError::Shape(format!("layer {i} -> {} mismatch", i + 1)));
            }
        }
        if let Some(l) = layers.iter().find(|l| l.bias.len() != l.fan_out()) {
            return Err(NetworkError::Shape(format!(
                "bias length {} != fan_out {}",
                l.bias.len(),
                l.fan_out()
            )));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].fan_in()];
        sizes.extend(self.layers.iter().map(Layer::fan_out));
        sizes
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, Layer::fan_out)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters, layer by layer: row-major weights then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<(), NetworkError> {
        if flat.len() != self.parameter_count() {
            return Err(NetworkError::Shape(format!(
                "expected {} values, got {}",
                self.parameter_count(),
                flat.len()
            )));
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|p| {
                *p = *it.next().expect("length checked");
            });
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.flatten().iter().map(|p| p * p).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|p| p.is_finite()))
    }

    /// Straight-line forward pass on plain numbers.
    pub fn evaluate(&self, x: f64) -> Vec<f64> {
        let mut z = Array1::from_elem(1, x);
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut a = l.weights.dot(&z) + &l.bias;
            if i < last {
                a.mapv_inplace(f64::tanh);
            }
            z = a;
        }
        z.to_vec()
    }

    pub fn save(&self, path: &Path) -> Result<(), NetworkError> {
        fs::write(path, self.to_checkpoint_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        Self::from_checkpoint_str(&fs::read_to_string(path)?)
    }

    /// JSON with layer shapes and row-major weights; floats round-trip bitwise.
    pub fn to_checkpoint_string(&self) -> String {
        let ck = Checkpoint {
            layers: self
                .layers
                .iter()
                .map(|l| LayerRecord {
                    fan_out: l.fan_out(),
                    fan_in: l.fan_in(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&ck).expect("checkpoint serializes")
    }

    pub fn from_checkpoint_str(s: &str) -> Result<Self, NetworkError> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        let layers = ck
            .layers
            .into_iter()
            .map(|r| {
                let weights = Array2::from_shape_vec((r.fan_out, r.fan_in), r.weights)
                    .map_err(|e| NetworkError::Shape(e.to_string()))?;
                Ok(Layer {
                    weights,
                    bias: Array1::from(r.bias),
                })
            })
            .collect::<Result<Vec<_>, NetworkError>>()?;
        Self::from_layers(layers)
    }
}

/// Network parameters registered as leaves of a [`Graph`].
#[derive(Debug, Clone)]
pub struct GraphNetwork {
    /// Per layer: row-major weight leaves and bias leaves.
    layers: Vec<(usize, usize, Vec<Var>, Vec<Var>)>,
}

impl GraphNetwork {
    pub fn register(g: &mut Graph, params: &NetworkParameters) -> Self {
        let layers = params
            .layers()
            .iter()
            .map(|l| {
                let w = l.weights.iter().map(|&v| g.parameter(v)).collect();
                let b = l.bias.iter().map(|&v| g.parameter(v)).collect();
                (l.fan_out(), l.fan_in(), w, b)
            })
            .collect();
        Self { layers }
    }

    /// Parameter leaves in [`NetworkParameters::flatten`] order.
    pub fn parameters(&self) -> Vec<Var> {
        self.layers
            .iter()
            .flat_map(|(_, _, w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }

    /// Stage values `[u^{n+c_1}, ..., u^{n+c_q}, u^{n+1}]` at `x`.
    pub fn forward_stages(&self, g: &mut Graph, x: f64) -> Vec<Var> {
        let mut z = vec![g.input(x)];
        let last = self.layers.len() - 1;
        for (li, (fan_out, fan_in, w, b)) in self.layers.iter().enumerate() {
            z = (0..*fan_out)
                .map(|r| {
                    let mut terms: Vec<Var> = (0..*fan_in).map(|c| g.mul(w[r * fan_in + c], z[c])).collect();
                    terms.push(b[r]);
                    let a = g.sum(&terms);
                    if li < last {
                        g.tanh(a)
                    } else {
                        a
                    }
                })
                .collect();
        }
        z
    }

    /// Stage values with their first and second `x`-derivatives as graph nodes.
    pub fn forward_bundles(&self, g: &mut Graph, x: f64) -> Vec<DerivativeBundle> {
        let xv = g.input(x);
        let mut z = vec![DerivativeBundle::input(g, xv)];
        let last = self.layers.len() - 1;
        for (li, (fan_out, fan_in, w, b)) in self.layers.iter().enumerate() {
            z = (0..*fan_out)
                .map(|r| {
                    let terms: Vec<DerivativeBundle> = (0..*fan_in)
                        .map(|c| DerivativeBundle::scale_by(g, w[r * fan_in + c], z[c]))
                        .collect();
                    let a = DerivativeBundle::sum_with_offset(g, &terms, b[r]);
                    if li < last {
                        DerivativeBundle::tanh(g, a)
                    } else {
                        a
                    }
                })
                .collect();
        }
        z
    }
}

/// `tanh` through one `exp`, about twice as fast as the libm routine; the
/// absolute error stays at the level of a few ulps of 1.
#[inline]
fn fast_tanh(x: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * x).exp() + 1.0)
}

/// Network outputs and spatial derivatives at a batch of points, `outputs x points`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutputs {
    pub value: Array2<f64>,
    pub dx: Array2<f64>,
    pub dxx: Array2<f64>,
}

/// Batched second-order forward pass with a matching reverse pass.
///
/// Each layer input is stored as `[z | z' | z'']`, a `width x 3n` block, so
/// one matrix product advances all three channels.
#[derive(Debug, Clone)]
pub struct BatchEvaluator {
    xs: Vec<f64>,
    /// Layer inputs `[z | z' | z'']`.
    inputs: Vec<Array2<f64>>,
    /// Hidden-layer `tanh` values and pre-activation derivative channels.
    hidden: Vec<HiddenCache>,
}

#[derive(Debug, Clone)]
struct HiddenCache {
    t: Array2<f64>,
    a1: Array2<f64>,
    a2: Array2<f64>,
}

impl BatchEvaluator {
    pub fn new(xs: &[f64]) -> Self {
        Self {
            xs: xs.to_vec(),
            inputs: Vec::new(),
            hidden: Vec::new(),
        }
    }

    pub fn points(&self) -> &[f64] {
        &self.xs
    }

    pub fn forward(&mut self, params: &NetworkParameters) -> BatchOutputs {
        let n = self.xs.len();
        let mut z = Array2::zeros((1, 3 * n));
        z.slice_mut(s![0, ..n])
            .assign(&Array1::from(self.xs.clone()));
        z.slice_mut(s![0, n..2 * n]).fill(1.0);
        self.inputs.clear();
        self.hidden.clear();
        let last = params.layers().len() - 1;
        for (li, l) in params.layers().iter().enumerate() {
            let mut a = l.weights.dot(&z);
            a.slice_mut(s![.., ..n])
                .axis_iter_mut(Axis(1))
                .for_each(|mut col| col += &l.bias);
            self.inputs.push(z);
            if li == last {
                return BatchOutputs {
                    value: a.slice(s![.., ..n]).to_owned(),
                    dx: a.slice(s![.., n..2 * n]).to_owned(),
                    dxx: a.slice(s![.., 2 * n..]).to_owned(),
                };
            }
            let t = a.slice(s![.., ..n]).mapv(fast_tanh);
            let a1 = a.slice(s![.., n..2 * n]).to_owned();
            let a2 = a.slice(s![.., 2 * n..]).to_owned();
            let mut h = Array2::zeros(a.raw_dim());
            for (r, mut hrow) in h.axis_iter_mut(Axis(0)).enumerate() {
                let hrow = hrow.as_slice_mut().expect("standard layout");
                let (h0, rest) = hrow.split_at_mut(n);
                let (h1, h2) = rest.split_at_mut(n);
                let (tr, a1r, a2r) = (t.row(r), a1.row(r), a2.row(r));
                let (tr, a1r, a2r) = (
                    tr.as_slice().expect("standard layout"),
                    a1r.as_slice().expect("standard layout"),
                    a2r.as_slice().expect("standard layout"),
                );
                for i in 0..n {
                    let t = tr[i];
                    let sech2 = 1.0 - t * t;
                    h0[i] = t;
                    h1[i] = sech2 * a1r[i];
                    h2[i] = sech2 * a2r[i] - 2.0 * t * sech2 * a1r[i] * a1r[i];
                }
            }
            self.hidden.push(HiddenCache { t, a1, a2 });
            z = h;
        }
        unreachable!("network has at least one layer")
    }

    /// Parameter gradient of a scalar whose adjoints with respect to the
    /// outputs of the last [`BatchEvaluator::forward`] are given.
    pub fn backward(&self, params: &NetworkParameters, adjoint: &BatchOutputs) -> NetworkParameters {
        let n = self.xs.len();
        let nl = params.layers().len();
        let mut grads = NetworkParameters::zeros(&params.layer_sizes());
        let mut abar = Array2::zeros((params.outputs(), 3 * n));
        abar.slice_mut(s![.., ..n]).assign(&adjoint.value);
        abar.slice_mut(s![.., n..2 * n]).assign(&adjoint.dx);
        abar.slice_mut(s![.., 2 * n..]).assign(&adjoint.dxx);
        for li in (0..nl).rev() {
            let l = &params.layers()[li];
            let g = &mut grads.layers_mut()[li];
            g.weights = abar.dot(&self.inputs[li].t());
            g.bias = abar.slice(s![.., ..n]).sum_axis(Axis(1));
            if li == 0 {
                break;
            }
            let hbar = l.weights.t().dot(&abar);
            let cache = &self.hidden[li - 1];
            let mut next = Array2::zeros(hbar.raw_dim());
            for (r, mut nrow) in next.axis_iter_mut(Axis(0)).enumerate() {
                let nrow = nrow.as_slice_mut().expect("standard layout");
                let (n0, rest) = nrow.split_at_mut(n);
                let (n1, n2) = rest.split_at_mut(n);
                let grow = hbar.row(r);
                let grow = grow.as_slice().expect("standard layout");
                let (tr, a1r, a2r) = (cache.t.row(r), cache.a1.row(r), cache.a2.row(r));
                let (tr, a1r, a2r) = (
                    tr.as_slice().expect("standard layout"),
                    a1r.as_slice().expect("standard layout"),
                    a2r.as_slice().expect("standard layout"),
                );
                for i in 0..n {
                    let (g0, g1, g2) = (grow[i], grow[n + i], grow[2 * n + i]);
                    let (t, a1, a2) = (tr[i], a1r[i], a2r[i]);
                    let sech2 = 1.0 - t * t;
                    // derivative of (t, s a1, s a2 - 2 t s a1^2) with respect to t
                    let tbar = g0 - 2.0 * g1 * t * a1
                        - g2 * (2.0 * t * a2 + 2.0 * a1 * a1 * (sech2 - 2.0 * t * t));
                    n0[i] = tbar * sech2;
                    n1[i] = g1 * sech2 - 4.0 * g2 * t * sech2 * a1;
                    n2[i] = g2 * sech2;
                }
            }
            abar = next;
        }
        grads
    }
}
