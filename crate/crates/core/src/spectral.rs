//! Modal reduction of the boundary-controlled reaction–diffusion equation
//!
//! ```text
//! z_t = z_xx + q_c z,   z_x(t, 0) = 0,   z(t, 1) = u(t)
//! ```
//!
//! The Dirichlet actuation is moved into the interior with the lifting
//! `w = z + b(x) u`, `b(x) = -x²`. On the homogeneous problem the operator
//! `-f''` with `f'(0) = 0`, `f(1) = 0` has eigenpairs
//! `λ_n = ((n - 1/2)π)²`, `Φ_n(x) = √2 cos((n - 1/2)π x)`, and each modal
//! coordinate `z_n = ⟨z, Φ_n⟩` obeys `ż_n = (-λ_n + q_c) z_n + β_n u`.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of tail modes summed for the spillover energy.
pub const DEFAULT_N_TAIL: usize = 200;

/// Composite Gauss–Legendre rule on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Quadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Quadrature {
    /// `order` nodes per panel on `panels` equal sub-intervals.
    pub fn composite(order: usize, panels: usize) -> Self {
        let (x, w) = gauss_legendre(order);
        let h = 1.0 / panels as f64;
        let mut nodes = Vec::with_capacity(order * panels);
        let mut weights = Vec::with_capacity(order * panels);
        for p in 0..panels {
            let left = p as f64 * h;
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push(left + 0.5 * h * (xi + 1.0));
                weights.push(0.5 * h * wi);
            }
        }
        Self { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64> {
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            let v = f(x);
            if !v.is_finite() {
                return Err(Error::Numeric(format!("non-finite integrand {v} at x = {x}")));
            }
            acc += w * v;
        }
        Ok(acc)
    }
}

impl Default for Quadrature {
    /// 64 nodes per panel, 32 panels: resolves `cos(μx)` well past μ = 600.
    fn default() -> Self {
        Self::composite(64, 32)
    }
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut t = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
            let dt = p1 / dp;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -t;
        x[n - 1 - i] = t;
        let wi = 2.0 / ((1.0 - t * t) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Eigenvalue, wavenumber and eigenfunction of mode `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigenpair {
    pub n: usize,
    pub mu: f64,
    pub lambda: f64,
}

impl Eigenpair {
    /// `Φ_n(x) = √2 cos(μ_n x)`.
    pub fn phi(&self, x: f64) -> f64 {
        SQRT_2 * (self.mu * x).cos()
    }

    pub fn dphi(&self, x: f64) -> f64 {
        -SQRT_2 * self.mu * (self.mu * x).sin()
    }
}

pub fn eigenpair(n: usize) -> Result<Eigenpair> {
    if n < 1 {
        return Err(Error::InvalidIndex(n));
    }
    let mu = (n as f64 - 0.5) * PI;
    Ok(Eigenpair { n, mu, lambda: mu * mu })
}

/// `⟨f, Φ_n⟩` on the unit interval.
pub fn project<F: Fn(f64) -> f64>(f: F, n: usize, quad: &Quadrature) -> Result<f64> {
    let e = eigenpair(n)?;
    quad.integrate(|x| f(x) * e.phi(x))
}

/// The lifting function `b(x) = -x²`; it satisfies `b(1) = -1` and `b'(0) = 0`.
pub fn lifting(x: f64) -> f64 {
    -x * x
}

pub fn lifting_derivative(x: f64) -> f64 {
    -2.0 * x
}

/// `a(x) = -b''(x) - q_c b(x) = 2 + q_c x²`.
pub fn lifting_source(x: f64, q_c: f64) -> f64 {
    2.0 + q_c * x * x
}

/// Projections of the lifting data onto mode `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftingCoefficients {
    pub a: f64,
    pub b: f64,
    /// Input gain of mode `n`: `(-λ_n + q_c) b_n + a_n`.
    pub beta: f64,
}

pub fn lifting_coefficients(n: usize, q_c: f64, quad: &Quadrature) -> Result<LiftingCoefficients> {
    let e = eigenpair(n)?;
    let a = project(|x| lifting_source(x, q_c), n, quad)?;
    let b = project(lifting, n, quad)?;
    let beta = (-e.lambda + q_c) * b + a;
    Ok(LiftingCoefficients { a, b, beta })
}

/// Smallest `n0` such that every mode beyond it decays faster than `delta`.
pub fn mode_split(q_c: f64, delta: f64) -> Result<usize> {
    if !(delta > 0.0) || !q_c.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "mode split needs delta > 0 and finite q_c (got delta = {delta}, q_c = {q_c})"
        )));
    }
    let mut n0 = 0;
    loop {
        let next = eigenpair(n0 + 1)?;
        if -next.lambda + q_c < -delta {
            return Ok(n0);
        }
        n0 += 1;
    }
}

/// One retained or neglected mode of the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub n: usize,
    pub mu: f64,
    pub lambda: f64,
    pub a: f64,
    pub b: f64,
    pub beta: f64,
}

impl Mode {
    /// Open-loop rate `-λ_n + q_c`.
    pub fn drift(&self, q_c: f64) -> f64 {
        -self.lambda + q_c
    }

    pub fn eigenpair(&self) -> Eigenpair {
        Eigenpair { n: self.n, mu: self.mu, lambda: self.lambda }
    }
}

/// Modal data for the first `modes.len()` modes.
#[derive(Debug, Clone)]
pub struct SpectralModel {
    pub q_c: f64,
    pub modes: Vec<Mode>,
    pub n0: usize,
    pub n_tail: usize,
}

impl SpectralModel {
    /// Builds modes `1..=max(n_modes, n0 + n_tail)` with the default quadrature.
    pub fn new(q_c: f64, n0: usize, n_modes: usize, n_tail: usize) -> Result<Self> {
        Self::with_quadrature(q_c, n0, n_modes, n_tail, &Quadrature::default())
    }

    pub fn with_quadrature(
        q_c: f64,
        n0: usize,
        n_modes: usize,
        n_tail: usize,
        quad: &Quadrature,
    ) -> Result<Self> {
        let count = n_modes.max(n0 + n_tail).max(n0 + 1);
        let modes = (1..=count)
            .map(|n| {
                let e = eigenpair(n)?;
                let c = lifting_coefficients(n, q_c, quad)?;
                Ok(Mode { n, mu: e.mu, lambda: e.lambda, a: c.a, b: c.b, beta: c.beta })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { q_c, modes, n0, n_tail })
    }

    pub fn mode(&self, n: usize) -> Option<&Mode> {
        n.checked_sub(1).and_then(|i| self.modes.get(i))
    }

    pub fn tail_energy(&self) -> Result<TailEnergy> {
        tail_energy(self, self.n0, self.n_tail)
    }

    pub fn export(&self, delta: f64) -> Result<ModelExport> {
        let tail = self.tail_energy()?;
        Ok(ModelExport {
            q_c: self.q_c,
            n0: self.n0,
            delta,
            modes: self
                .modes
                .iter()
                .map(|m| ModeExport { n: m.n, lambda: m.lambda, beta: m.beta })
                .collect(),
            tail: TailExport { n_tail: tail.n_tail, partial_norm2: tail.partial_norm2 },
        })
    }
}

/// Diagonal truncated model `Ż = A Z + B u` on the first `n0` modes.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSystem {
    /// Diagonal of `A`: `-λ_n + q_c`.
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub delta: f64,
    pub q_c: f64,
    /// `λ_{n0+1}`, the slowest neglected eigenvalue.
    pub lambda_next: f64,
}

impl TruncatedSystem {
    pub fn n0(&self) -> usize {
        self.a.len()
    }

    pub fn a_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.a)
    }

    /// Gain `K` with `eig(A − BK)` equal to the real `poles` (Ackermann).
    pub fn place_poles(&self, poles: &[f64]) -> Result<DVector<f64>> {
        let n = self.n0();
        if poles.len() != n {
            return Err(Error::InvalidInput(format!("need {n} poles, got {}", poles.len())));
        }
        let a = self.a_matrix();
        let mut ctrb = DMatrix::zeros(n, n);
        let mut col = self.b.clone();
        for j in 0..n {
            ctrb.set_column(j, &col);
            col = &a * col;
        }
        let mut phi = DMatrix::identity(n, n);
        for &p in poles {
            phi = phi * (&a - DMatrix::identity(n, n) * p);
        }
        let inv = ctrb.try_inverse().ok_or_else(|| Error::Numeric("system is not controllable".into()))?;
        Ok((inv.row(n - 1) * phi).transpose())
    }
}

pub fn build_truncated(model: &SpectralModel, n0: usize, delta: f64) -> Result<TruncatedSystem> {
    if !(delta > 0.0) {
        return Err(Error::InvalidTruncation(format!("delta must be positive, got {delta}")));
    }
    let next = model.mode(n0 + 1).ok_or_else(|| {
        Error::InvalidTruncation(format!("model holds {} modes, need {}", model.modes.len(), n0 + 1))
    })?;
    if next.drift(model.q_c) >= -delta {
        return Err(Error::InvalidTruncation(format!(
            "mode {} has rate {:.4} >= -delta = {:.4}",
            next.n,
            next.drift(model.q_c),
            -delta
        )));
    }
    let kept = &model.modes[..n0];
    Ok(TruncatedSystem {
        a: DVector::from_iterator(n0, kept.iter().map(|m| m.drift(model.q_c))),
        b: DVector::from_iterator(n0, kept.iter().map(|m| m.beta)),
        delta,
        q_c: model.q_c,
        lambda_next: next.lambda,
    })
}

/// Partial sum of `β_n²` over the neglected modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEnergy {
    pub n_tail: usize,
    pub partial_norm2: f64,
    /// `β²` of the last summed mode.
    pub last_term: f64,
    /// `last_term / partial_norm2`; it stays bounded away from zero because
    /// `β_n² = 2μ_n²` grows, so the full series diverges.
    pub last_ratio: f64,
}

pub fn tail_energy(model: &SpectralModel, n0: usize, n_tail: usize) -> Result<TailEnergy> {
    if model.modes.len() < n0 + n_tail {
        return Err(Error::InvalidInput(format!(
            "tail window {}..={} exceeds the {} stored modes",
            n0 + 1,
            n0 + n_tail,
            model.modes.len()
        )));
    }
    let window = &model.modes[n0..n0 + n_tail];
    let partial: f64 = window.iter().map(|m| m.beta * m.beta).sum();
    let last = window.last().map_or(0.0, |m| m.beta * m.beta);
    Ok(TailEnergy {
        n_tail,
        partial_norm2: partial,
        last_term: last,
        last_ratio: if partial > 0.0 { last / partial } else { 0.0 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeExport {
    pub n: usize,
    pub lambda: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailExport {
    #[serde(rename = "N_tail")]
    pub n_tail: usize,
    pub partial_norm2: f64,
}

/// JSON form of the spectral model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelExport {
    pub q_c: f64,
    pub n0: usize,
    pub delta: f64,
    pub modes: Vec<ModeExport>,
    pub tail: TailExport,
}
