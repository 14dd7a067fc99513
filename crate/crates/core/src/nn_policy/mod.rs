//! Feedforward tanh controller and its robust-control representations.
//!
//! A policy `u = W_{ℓ+1} tanh(W_ℓ ⋯ tanh(W_1 Z))` is rewritten three ways:
//!
//! * [`IsolatedPolicy`]: the block map `𝒩` with all activations pulled out,
//!   `[u; ν] = 𝒩 [Z; ω; 1]`, `ω = φ(ν)`;
//! * [`SectorBounds`]: pre-activation intervals from interval arithmetic over
//!   a state hypercube, and the local sector `[m, r]` of every neuron;
//! * [`TransformedPolicy`]: the loop-transformed map `Ñ = 𝓕(N)` whose
//!   nonlinearity is normalized to the sector `[-1, 1]`.

mod bounds;
pub(crate) mod isolate;
mod transform;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub use bounds::{propagate_bounds, sector_bounds, slope_ratio, Hypercube, PreactivationBounds, SectorBounds};
pub use isolate::{isolate, IsolatedPolicy};
pub use transform::{loop_transform, neumann_inverse, transform_vjp, PolicyGradient, TransformedOutput, TransformedPolicy};

/// Anything that maps the retained modal state to a boundary input.
pub trait Controller {
    fn control(&self, z: &[f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

/// Affine layer `W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Dense {
    pub fn zero_bias(w: DMatrix<f64>) -> Self {
        let b = DVector::zeros(w.nrows());
        Self { w, b }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub layers: Vec<Dense>,
    pub output: Dense,
    pub activation: Activation,
}

impl Policy {
    pub fn new(layers: Vec<Dense>, output: Dense) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("policy needs at least one hidden layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.b.len() != l.w.nrows() {
                return Err(Error::InvalidInput(format!("layer {} bias length mismatch", i + 1)));
            }
            if i > 0 && l.w.ncols() != layers[i - 1].w.nrows() {
                return Err(Error::InvalidInput(format!(
                    "layer {} expects {} inputs, previous layer gives {}",
                    i + 1,
                    l.w.ncols(),
                    layers[i - 1].w.nrows()
                )));
            }
        }
        let last = layers.last().map_or(0, |l| l.w.nrows());
        if output.w.nrows() != 1 || output.w.ncols() != last || output.b.len() != 1 {
            return Err(Error::InvalidInput(format!(
                "output layer must be 1x{last} with scalar bias, got {}x{}",
                output.w.nrows(),
                output.w.ncols()
            )));
        }
        Ok(Self { layers, output, activation: Activation::Tanh })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn random<R: Rng + ?Sized>(n0: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut fan_in = n0;
        let mut layers = Vec::with_capacity(hidden.len());
        let glorot = |rows: usize, cols: usize, rng: &mut R| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
        };
        for &width in hidden {
            layers.push(Dense::zero_bias(glorot(width, fan_in, rng)));
            fan_in = width;
        }
        let output = Dense::zero_bias(glorot(1, fan_in, rng));
        Self::new(layers, output)
    }

    /// One `tanh` layer `εI` with output `g/ε`: `u ≈ gᵀz` for small `ε|z|`.
    pub fn near_linear(gain: &[f64], eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidInput(format!("ε must be positive, got {eps}")));
        }
        let n = gain.len();
        let w1 = DMatrix::identity(n, n) * eps;
        let wo = DMatrix::from_row_iterator(1, n, gain.iter().map(|g| g / eps));
        Self::new(vec![Dense::zero_bias(w1)], Dense::zero_bias(wo))
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.w.nrows()).collect()
    }

    /// Total number of neurons `n_φ`.
    pub fn n_phi(&self) -> usize {
        self.layers.iter().map(|l| l.w.nrows()).sum()
    }

    pub fn has_zero_bias(&self) -> bool {
        self.layers.iter().chain(std::iter::once(&self.output)).all(|l| l.b.iter().all(|&b| b == 0.0))
    }

    pub fn forward(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "policy expects {} states, got {}",
                self.input_dim(),
                z.len()
            )));
        }
        Ok(self.forward_unchecked(z))
    }

    pub(crate) fn forward_unchecked(&self, z: &[f64]) -> f64 {
        let mut h = DVector::from_column_slice(z);
        for l in &self.layers {
            h = (&l.w * h + &l.b).map(f64::tanh);
        }
        (&self.output.w * h)[0] + self.output.b[0]
    }

    /// `(u, ∂u/∂W)` by reverse-mode differentiation at one state.
    pub fn value_and_grad(&self, z: &[f64]) -> (f64, PolicyGradient) {
        let mut acts = vec![DVector::from_column_slice(z)];
        for l in &self.layers {
            let h = (&l.w * acts.last().unwrap() + &l.b).map(f64::tanh);
            acts.push(h);
        }
        let u = (&self.output.w * acts.last().unwrap())[0] + self.output.b[0];
        let mut grad = PolicyGradient::zeros_like(self);
        let top = acts.last().unwrap();
        grad.output = DMatrix::from_row_slice(1, top.len(), top.as_slice());
        let mut delta = DVector::from_column_slice(self.output.w.as_slice());
        for i in (0..self.layers.len()).rev() {
            let h = &acts[i + 1];
            delta.zip_apply(h, |d, hv| *d *= 1.0 - hv * hv);
            grad.layers[i] = &delta * acts[i].transpose();
            delta = self.layers[i].w.transpose() * &delta;
        }
        (u, grad)
    }

    /// Upper bound on `|u|` from the saturation of tanh.
    pub fn output_bound(&self) -> f64 {
        self.output.w.iter().map(|w| w.abs()).sum::<f64>() + self.output.b[0].abs()
    }

    pub fn negated(&self) -> Self {
        let mut p = self.clone();
        p.output.w *= -1.0;
        p.output.b *= -1.0;
        p
    }

    pub fn to_file(&self) -> WeightsFile {
        let dense = |l: &Dense| DenseFile { w: linalg::to_rows(&l.w), b: l.b.iter().copied().collect() };
        WeightsFile {
            layers: self.layers.iter().map(dense).collect(),
            output: OutputFile { w: self.output.w.iter().copied().collect(), b: self.output.b[0] },
            activation: self.activation,
        }
    }

    pub fn from_file(f: &WeightsFile) -> Result<Self> {
        let layers = f
            .layers
            .iter()
            .map(|l| Ok(Dense { w: linalg::from_rows(&l.w)?, b: DVector::from_vec(l.b.clone()) }))
            .collect::<Result<Vec<_>>>()?;
        let output = Dense {
            w: DMatrix::from_row_slice(1, f.output.w.len(), &f.output.w),
            b: DVector::from_element(1, f.output.b),
        };
        Self::new(layers, output)
    }
}

impl Controller for Policy {
    fn control(&self, z: &[f64]) -> f64 {
        self.forward_unchecked(z)
    }
}

/// Zero input, the open-loop plant.
#[derive(Debug, Clone, Copy, Default)]
pub struct OpenLoop;

impl Controller for OpenLoop {
    fn control(&self, _z: &[f64]) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseFile {
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    #[serde(rename = "W")]
    pub w: Vec<f64>,
    pub b: f64,
}

/// JSON weight format: `{layers: [{W, b}], output: {W, b}, activation}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub layers: Vec<DenseFile>,
    pub output: OutputFile,
    pub activation: Activation,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn near_linear_matches_its_gain() {
        let p = Policy::near_linear(&[-3.0, 0.5], 1e-3).unwrap();
        let u = p.forward(&[0.2, -1.0]).unwrap();
        assert!((u - (-0.6 - 0.5)).abs() < 1e-5);
        assert!(Policy::near_linear(&[1.0], 0.0).is_err());
    }

    #[test]
    fn scalar_network() {
        let p = Policy::new(
            vec![Dense::zero_bias(DMatrix::identity(1, 1))],
            Dense::zero_bias(DMatrix::from_element(1, 1, 1.0)),
        )
        .unwrap();
        assert!((p.forward(&[0.5]).unwrap() - 0.5f64.tanh()).abs() < 1e-15);
        assert!((p.forward(&[0.5]).unwrap() - 0.46212).abs() < 1e-5);
    }

    #[test]
    fn zero_bias_origin_and_saturation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Policy::random(2, &[10, 10], &mut rng).unwrap();
        assert_eq!(p.forward(&[0.0, 0.0]).unwrap(), 0.0);
        for _ in 0..100 {
            let z = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)];
            assert!(p.forward(&z).unwrap().abs() <= p.output_bound() + 1e-12);
        }
        assert!(p.forward(&[1.0]).is_err());
    }

    #[test]
    fn rejects_broken_chains() {
        let l1 = Dense::zero_bias(DMatrix::zeros(3, 2));
        let l2 = Dense::zero_bias(DMatrix::zeros(2, 4));
        assert!(Policy::new(vec![l1.clone(), l2], Dense::zero_bias(DMatrix::zeros(1, 2))).is_err());
        assert!(Policy::new(vec![l1], Dense::zero_bias(DMatrix::zeros(1, 2))).is_err());
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = Policy::random(2, &[4, 3], &mut rng).unwrap();
        let z = [0.7, -1.3];
        let (u, g) = p.value_and_grad(&z);
        assert_eq!(u, p.forward(&z).unwrap());
        let h = 1e-6;
        let mut q = p.clone();
        q.layers[0].w[(2, 1)] += h;
        let fd = (q.forward(&z).unwrap() - u) / h;
        assert!((fd - g.layers[0][(2, 1)]).abs() < 1e-5);
        let mut q = p.clone();
        q.layers[1].w[(1, 3)] += h;
        let fd = (q.forward(&z).unwrap() - u) / h;
        assert!((fd - g.layers[1][(1, 3)]).abs() < 1e-5);
    }

    #[test]
    fn weights_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = Policy::random(3, &[4, 5], &mut rng).unwrap();
        let json = serde_json::to_string(&p.to_file()).unwrap();
        assert!(json.contains("\"activation\":\"tanh\""));
        let back = Policy::from_file(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
