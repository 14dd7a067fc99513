use nalgebra::{DMatrix, DVector};

use super::isolate::{isolate, layer_ranges};
use super::{IsolatedPolicy, Policy, SectorBounds};
use crate::error::{Error, Result};

/// Loop-transformed policy `[u; ν] = Ñ [Z; x]`, `x = φ̃(ν)`, with the
/// nonlinearity normalized to the sector `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedPolicy {
    pub uz: DMatrix<f64>,
    pub ux: DMatrix<f64>,
    pub vz: DMatrix<f64>,
    pub vx: DMatrix<f64>,
    pub sector: SectorBounds,
    pub layer_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformedOutput {
    pub u: f64,
    pub nu: DVector<f64>,
    pub x: DVector<f64>,
    /// Whether every pre-activation stayed inside the sector intervals.
    pub in_bounds: bool,
}

impl TransformedPolicy {
    pub fn n0(&self) -> usize {
        self.uz.ncols()
    }

    pub fn n_phi(&self) -> usize {
        self.ux.ncols()
    }

    /// Full `(1 + n_φ) × (n₀ + n_φ)` matrix.
    pub fn ntilde(&self) -> DMatrix<f64> {
        let (n0, nphi) = (self.n0(), self.n_phi());
        let mut m = DMatrix::zeros(1 + nphi, n0 + nphi);
        m.view_mut((0, 0), (1, n0)).copy_from(&self.uz);
        m.view_mut((0, n0), (1, nphi)).copy_from(&self.ux);
        m.view_mut((1, 0), (nphi, n0)).copy_from(&self.vz);
        m.view_mut((1, n0), (nphi, nphi)).copy_from(&self.vx);
        m
    }

    /// `φ̃_i(ν) = (tanh ν − α_i ν) / β_i`, identically zero on degenerate neurons.
    pub fn normalized(&self, i: usize, nu: f64) -> f64 {
        let a = 0.5 * (self.sector.m[i] + self.sector.r[i]);
        let b = 0.5 * (self.sector.r[i] - self.sector.m[i]);
        if b > 0.0 {
            (nu.tanh() - a * nu) / b
        } else {
            0.0
        }
    }

    /// Forward substitution through the lower-triangular fixed point.
    pub fn forward(&self, z: &[f64]) -> Result<TransformedOutput> {
        if z.len() != self.n0() {
            return Err(Error::InvalidInput(format!("expected {} states, got {}", self.n0(), z.len())));
        }
        let z = DVector::from_column_slice(z);
        let n = self.n_phi();
        let mut nu = DVector::zeros(n);
        let mut x = DVector::zeros(n);
        for r in layer_ranges(&self.layer_sizes) {
            for i in r.clone() {
                nu[i] = (self.vz.row(i) * &z)[0] + (self.vx.row(i) * &x)[0];
            }
            for i in r {
                x[i] = self.normalized(i, nu[i]);
            }
        }
        let u = (&self.uz * &z)[0] + (&self.ux * &x)[0];
        let in_bounds = self.sector.contains(&nu);
        Ok(TransformedOutput { u, nu, x, in_bounds })
    }

    /// Original activations recovered as `ω = α ν + β x`.
    pub fn recover_omega(&self, out: &TransformedOutput) -> DVector<f64> {
        self.sector.alpha().component_mul(&out.nu) + self.sector.beta().component_mul(&out.x)
    }
}

/// `(I − C)⁻¹` for nilpotent `C` with `C^depth = 0`.
pub fn neumann_inverse(c: &DMatrix<f64>, depth: usize) -> DMatrix<f64> {
    let n = c.nrows();
    let mut s = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for _ in 1..depth {
        term = c * term;
        s += &term;
    }
    s
}

struct Pieces {
    alpha: DVector<f64>,
    beta: DVector<f64>,
    c2: DMatrix<f64>,
    c3: DMatrix<f64>,
    s: DMatrix<f64>,
}

fn pieces(iso: &IsolatedPolicy, sector: &SectorBounds) -> Pieces {
    let alpha = sector.alpha();
    let beta = sector.beta();
    let a = DMatrix::from_diagonal(&alpha);
    let b = DMatrix::from_diagonal(&beta);
    let c2 = &iso.n_uw * &a;
    let c3 = &iso.n_vw * &b;
    let c4 = &iso.n_vw * &a;
    let s = neumann_inverse(&c4, iso.layer_sizes.len());
    Pieces { alpha, beta, c2, c3, s }
}

/// The map `N ↦ Ñ` for a fixed sector. Bias columns are dropped, so the
/// result describes the policy only under the zero-bias convention.
pub fn loop_transform(iso: &IsolatedPolicy, sector: &SectorBounds) -> Result<TransformedPolicy> {
    if sector.len() != iso.n_phi() {
        return Err(Error::InvalidInput(format!(
            "sector has {} neurons, policy has {}",
            sector.len(),
            iso.n_phi()
        )));
    }
    let p = pieces(iso, sector);
    let c1 = &iso.n_uw * DMatrix::from_diagonal(&p.beta);
    let vz = &p.s * &iso.n_vz;
    let vx = &p.s * &p.c3;
    Ok(TransformedPolicy {
        uz: &iso.n_uz + &p.c2 * &vz,
        ux: c1 + &p.c2 * &vx,
        vz,
        vx,
        sector: sector.clone(),
        layer_sizes: iso.layer_sizes.clone(),
    })
}

/// Gradient with respect to the policy weights, one matrix per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGradient {
    pub layers: Vec<DMatrix<f64>>,
    pub output: DMatrix<f64>,
}

impl PolicyGradient {
    pub fn zeros_like(policy: &Policy) -> Self {
        Self {
            layers: policy.layers.iter().map(|l| DMatrix::zeros(l.w.nrows(), l.w.ncols())).collect(),
            output: DMatrix::zeros(1, policy.output.w.ncols()),
        }
    }

    pub fn axpy(&mut self, a: f64, other: &Self) {
        for (g, o) in self.layers.iter_mut().zip(&other.layers) {
            *g += o * a;
        }
        self.output += &other.output * a;
    }

    pub fn norm2(&self) -> f64 {
        self.layers.iter().map(|g| g.norm_squared()).sum::<f64>() + self.output.norm_squared()
    }
}

/// Reverse-mode derivative of `N ↦ Ñ` at fixed sector: given `G = ∂L/∂Ñ`
/// (same shape as [`TransformedPolicy::ntilde`]), returns `∂L/∂W_i`.
pub fn transform_vjp(policy: &Policy, sector: &SectorBounds, g: &DMatrix<f64>) -> Result<PolicyGradient> {
    let iso = isolate(policy);
    let (n0, nphi) = (iso.n0(), iso.n_phi());
    if g.shape() != (1 + nphi, n0 + nphi) {
        return Err(Error::InvalidInput(format!("gradient shape {:?} does not match Ñ", g.shape())));
    }
    let p = pieces(&iso, sector);
    let g_uz = g.view((0, 0), (1, n0));
    let g_ux = g.view((0, n0), (1, nphi));
    let g_vz = g.view((1, 0), (nphi, n0));
    let g_vx = g.view((1, n0), (nphi, nphi));

    let sz = &p.s * &iso.n_vz;
    let sc3 = &p.s * &p.c3;
    let g_p = p.c2.transpose() * g_uz + g_vz;
    let g_q = p.c2.transpose() * g_ux + g_vx;
    let g_c2 = g_uz * sz.transpose() + g_ux * sc3.transpose();
    let g_c1 = g_ux.into_owned();
    let g_s = &g_p * iso.n_vz.transpose() + &g_q * p.c3.transpose();
    let st = p.s.transpose();
    let g_nvz = &st * &g_p;
    let g_c3 = &st * &g_q;
    let g_c4 = &st * g_s * &st;

    let scale_cols = |m: &DMatrix<f64>, d: &DVector<f64>| {
        let mut m = m.clone();
        for (j, mut col) in m.column_iter_mut().enumerate() {
            col *= d[j];
        }
        m
    };
    let g_nuw = scale_cols(&g_c1, &p.beta) + scale_cols(&g_c2, &p.alpha);
    let g_nvw = scale_cols(&g_c3, &p.beta) + scale_cols(&g_c4, &p.alpha);

    let ranges = iso.layer_ranges();
    let mut out = PolicyGradient::zeros_like(policy);
    for (i, r) in ranges.iter().enumerate() {
        out.layers[i] = if i == 0 {
            g_nvz.view((r.start, 0), (r.len(), n0)).into_owned()
        } else {
            let c = &ranges[i - 1];
            g_nvw.view((r.start, c.start), (r.len(), c.len())).into_owned()
        };
    }
    let last = ranges.last().cloned().unwrap_or(0..0);
    out.output = g_nuw.view((0, last.start), (1, last.len())).into_owned();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{propagate_bounds, sector_bounds, Hypercube};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (Policy, TransformedPolicy, Hypercube) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Policy::random(2, &[10, 10], &mut rng).unwrap();
        let iso = isolate(&p);
        let cube = Hypercube::symmetric(&[2.0, 40.0]).unwrap();
        let s = sector_bounds(&propagate_bounds(&iso, &cube).unwrap()).unwrap();
        let t = loop_transform(&iso, &s).unwrap();
        (p, t, cube)
    }

    #[test]
    fn identity_sector_reproduces_isolated_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = Policy::random(2, &[3, 3], &mut rng).unwrap();
        let iso = isolate(&p);
        let s = SectorBounds::unbounded(DVector::from_element(6, -1.0), DVector::from_element(6, 1.0));
        let t = loop_transform(&iso, &s).unwrap();
        assert_eq!(t.uz, iso.n_uz);
        assert_eq!(t.ux, iso.n_uw);
        assert_eq!(t.vz, iso.n_vz);
        assert_eq!(t.vx, iso.n_vw);
        assert_eq!(t.normalized(0, 0.3), 0.3f64.tanh());
    }

    #[test]
    fn neumann_series_matches_dense_inverse() {
        let (p, t, _) = setup(6);
        let iso = isolate(&p);
        let c4 = &iso.n_vw * DMatrix::from_diagonal(&t.sector.alpha());
        let s = neumann_inverse(&c4, 2);
        let dense = (DMatrix::identity(20, 20) - &c4).try_inverse().unwrap();
        assert!((s - dense).amax() < 1e-12);
    }

    #[test]
    fn transformed_forward_matches_network() {
        let (p, t, _) = setup(7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert_eq!(t.forward(&[0.0, 0.0]).unwrap().u, 0.0);
        for _ in 0..1000 {
            let z = [rng.random_range(-2.0..=2.0), rng.random_range(-40.0..=40.0)];
            let out = t.forward(&z).unwrap();
            assert!(out.in_bounds);
            assert!((out.u - p.forward(&z).unwrap()).abs() < 1e-9);
            // Normalized sector: |φ̃(ν)| ≤ |ν|.
            for i in 0..out.nu.len() {
                assert!(out.nu[i].powi(2) - out.x[i].powi(2) >= -1e-12 * (1.0 + out.nu[i].powi(2)));
            }
            let (_, _, omega) = isolate(&p).evaluate(&z);
            assert!((t.recover_omega(&out) - omega).amax() < 1e-12);
        }
        assert!(!t.forward(&[1e3, 1e3]).unwrap().in_bounds);
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let (p, t, _) = setup(9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g = DMatrix::from_fn(21, 22, |_, _| rng.random_range(-1.0..1.0));
        let loss = |q: &Policy| {
            let n = loop_transform(&isolate(q), &t.sector).unwrap().ntilde();
            n.component_mul(&g).sum()
        };
        let grad = transform_vjp(&p, &t.sector, &g).unwrap();
        let h = 1e-6;
        for (li, (r, c)) in [(0usize, (3usize, 1usize)), (1, (4, 7)), (1, (9, 0))] {
            let mut q = p.clone();
            q.layers[li].w[(r, c)] += h;
            let mut m = p.clone();
            m.layers[li].w[(r, c)] -= h;
            let fd = (loss(&q) - loss(&m)) / (2.0 * h);
            assert!((fd - grad.layers[li][(r, c)]).abs() < 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", grad.layers[li][(r, c)]);
        }
        let mut q = p.clone();
        q.output.w[(0, 5)] += h;
        let mut m = p.clone();
        m.output.w[(0, 5)] -= h;
        let fd = (loss(&q) - loss(&m)) / (2.0 * h);
        assert!((fd - grad.output[(0, 5)]).abs() < 1e-6 * (1.0 + fd.abs()));
    }
}
