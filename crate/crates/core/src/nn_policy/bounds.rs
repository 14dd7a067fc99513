use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::IsolatedPolicy;
use crate::error::{Error, Result};
use crate::linalg;

/// Axis-aligned state box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypercube {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl Hypercube {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::InvalidInput("hypercube bounds differ in length".into()));
        }
        for (&l, &h) in lo.iter().zip(&hi) {
            if !(l <= h) {
                return Err(Error::InvalidInterval { lo: l, hi: h });
            }
        }
        Ok(Self { lo: DVector::from_vec(lo), hi: DVector::from_vec(hi) })
    }

    /// `|Z_i| ≤ s_i`.
    pub fn symmetric(s: &[f64]) -> Result<Self> {
        Self::new(s.iter().map(|v| -v).collect(), s.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.dim() && z.iter().enumerate().all(|(i, &v)| self.lo[i] <= v && v <= self.hi[i])
    }
}

/// Per-neuron pre-activation intervals `ν ∈ [lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreactivationBounds {
    #[serde(with = "linalg::vector")]
    pub lo: DVector<f64>,
    #[serde(with = "linalg::vector")]
    pub hi: DVector<f64>,
}

/// Local sector `m_i ν² ≤ ν tanh(ν) ≤ r_i ν²` valid on `[nu_lo_i, nu_hi_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorBounds {
    #[serde(with = "linalg::vector")]
    pub nu_lo: DVector<f64>,
    #[serde(with = "linalg::vector")]
    pub nu_hi: DVector<f64>,
    #[serde(with = "linalg::vector")]
    pub m: DVector<f64>,
    #[serde(with = "linalg::vector")]
    pub r: DVector<f64>,
}

impl SectorBounds {
    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Sector center `(m + r) / 2`.
    pub fn alpha(&self) -> DVector<f64> {
        (&self.m + &self.r) * 0.5
    }

    /// Sector half-width `(r - m) / 2`.
    pub fn beta(&self) -> DVector<f64> {
        (&self.r - &self.m) * 0.5
    }

    /// Sector `[m, r]` claimed on the whole real line.
    pub fn unbounded(m: DVector<f64>, r: DVector<f64>) -> Self {
        let n = m.len();
        Self {
            nu_lo: DVector::from_element(n, f64::NEG_INFINITY),
            nu_hi: DVector::from_element(n, f64::INFINITY),
            m,
            r,
        }
    }

    pub fn contains(&self, nu: &DVector<f64>) -> bool {
        nu.iter().enumerate().all(|(i, &v)| self.nu_lo[i] <= v && v <= self.nu_hi[i])
    }
}

/// `tanh(ν) / ν`, continuously extended by 1 at the origin.
pub fn slope_ratio(nu: f64) -> f64 {
    if nu.abs() < 1e-4 {
        1.0 - nu * nu / 3.0
    } else {
        nu.tanh() / nu
    }
}

/// Interval propagation through the isolated network, layer by layer.
pub fn propagate_bounds(iso: &IsolatedPolicy, cube: &Hypercube) -> Result<PreactivationBounds> {
    if cube.dim() != iso.n0() {
        return Err(Error::InvalidInput(format!(
            "box has dimension {}, policy expects {}",
            cube.dim(),
            iso.n0()
        )));
    }
    let n_phi = iso.n_phi();
    let z_mid = (&cube.lo + &cube.hi) * 0.5;
    let z_rad = (&cube.hi - &cube.lo) * 0.5;
    let mut w_mid = DVector::zeros(n_phi);
    let mut w_rad = DVector::zeros(n_phi);
    let mut lo = DVector::zeros(n_phi);
    let mut hi = DVector::zeros(n_phi);
    for range in iso.layer_ranges() {
        for i in range.clone() {
            let rz = iso.n_vz.row(i);
            let rw = iso.n_vw.row(i);
            let mid = (rz * &z_mid)[0] + (rw * &w_mid)[0] + iso.n_vb[i];
            let rad = (rz.abs() * &z_rad)[0] + (rw.abs() * &w_rad)[0];
            lo[i] = mid - rad;
            hi[i] = mid + rad;
        }
        for i in range {
            let (a, b) = (lo[i].tanh(), hi[i].tanh());
            w_mid[i] = 0.5 * (a + b);
            w_rad[i] = 0.5 * (b - a);
        }
    }
    Ok(PreactivationBounds { lo, hi })
}

/// Tightest sector of tanh over each pre-activation interval.
pub fn sector_bounds(b: &PreactivationBounds) -> Result<SectorBounds> {
    let n = b.lo.len();
    let mut m = DVector::zeros(n);
    let mut r = DVector::zeros(n);
    for i in 0..n {
        let (l, h) = (b.lo[i], b.hi[i]);
        if !(l.is_finite() && h.is_finite() && l <= h) {
            return Err(Error::InvalidInterval { lo: l, hi: h });
        }
        let (gl, gh) = (slope_ratio(l), slope_ratio(h));
        m[i] = gl.min(gh);
        r[i] = if l <= 0.0 && 0.0 <= h { 1.0 } else { gl.max(gh) };
    }
    Ok(SectorBounds { nu_lo: b.lo.clone(), nu_hi: b.hi.clone(), m, r })
}

#[cfg(test)]
mod tests {
    use super::super::{isolate, Policy};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bounds(lo: f64, hi: f64) -> PreactivationBounds {
        PreactivationBounds { lo: DVector::from_element(1, lo), hi: DVector::from_element(1, hi) }
    }

    #[test]
    fn sector_examples() {
        let s = sector_bounds(&bounds(-2.0, 2.0)).unwrap();
        assert!((s.m[0] - 0.4820).abs() < 1e-4);
        assert_eq!(s.r[0], 1.0);

        let s = sector_bounds(&bounds(0.5, 1.0)).unwrap();
        assert!((s.m[0] - 0.7616).abs() < 1e-4);
        assert!((s.r[0] - 0.9242).abs() < 1e-4);

        let s = sector_bounds(&bounds(-1.0, 1.0)).unwrap();
        assert!((s.m[0] - 1f64.tanh()).abs() < 1e-15);
        let s = sector_bounds(&bounds(-3.0, 3.0)).unwrap();
        assert!((s.m[0] - 3f64.tanh() / 3.0).abs() < 1e-15);
        assert!((s.m[0] - 0.33167).abs() < 1e-4);

        let s = sector_bounds(&bounds(0.0, 0.0)).unwrap();
        assert_eq!((s.m[0], s.r[0]), (1.0, 1.0));
        assert_eq!(s.beta()[0], 0.0);
    }

    #[test]
    fn reversed_interval_is_rejected() {
        assert!(matches!(sector_bounds(&bounds(1.0, -1.0)), Err(Error::InvalidInterval { .. })));
        assert!(sector_bounds(&bounds(f64::NAN, 1.0)).is_err());
    }

    #[test]
    fn sampled_preactivations_stay_inside_intervals() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = Policy::random(2, &[10, 10], &mut rng).unwrap();
        let iso = isolate(&p);
        let cube = Hypercube::symmetric(&[2.0, 40.0]).unwrap();
        let b = propagate_bounds(&iso, &cube).unwrap();
        let s = sector_bounds(&b).unwrap();
        for _ in 0..2000 {
            let z = [rng.random_range(-2.0..=2.0), rng.random_range(-40.0..=40.0)];
            let (_, nu, omega) = iso.evaluate(&z);
            for i in 0..nu.len() {
                assert!(b.lo[i] - 1e-12 <= nu[i] && nu[i] <= b.hi[i] + 1e-12);
                let q = (omega[i] - s.m[i] * nu[i]) * (s.r[i] * nu[i] - omega[i]);
                assert!(q >= -1e-12, "sector violated at neuron {i}: {q}");
            }
        }
    }

    #[test]
    fn box_checks() {
        assert!(Hypercube::new(vec![1.0], vec![0.0]).is_err());
        let c = Hypercube::symmetric(&[1.0, 2.0]).unwrap();
        assert!(c.contains(&[1.0, -2.0]));
        assert!(!c.contains(&[1.1, 0.0]));
    }
}
