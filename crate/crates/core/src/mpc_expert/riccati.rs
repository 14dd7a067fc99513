use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Stabilizing solution of the discrete algebraic Riccati equation with gain
/// `K` for the law `u = −K Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dare {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub iterations: usize,
}

/// Riccati recursion `P ← Q + AᵀPA − AᵀPB (R + BᵀPB)⁻¹ BᵀPA` from `P = Q`
/// until the relative update falls below `tol`.
pub fn dare(a: &DMatrix<f64>, b: &DVector<f64>, q: &DMatrix<f64>, r: f64, tol: f64, max_iter: usize) -> Result<Dare> {
    let at = a.transpose();
    let mut p = q.clone();
    for it in 1..=max_iter {
        let pb = &p * b;
        let s = r + b.dot(&pb);
        let pa = &p * a;
        let btpa = pb.transpose() * a;
        let next = linalg::symmetrize(&(q + &at * &pa - btpa.transpose() * &btpa / s));
        if !next.iter().all(|v| v.is_finite()) || next.amax() > 1e30 {
            return Err(Error::InvalidConfig("Riccati iteration diverged; (A, B) is not stabilizable".into()));
        }
        let delta = (&next - &p).amax() / next.amax().max(1e-300);
        p = next;
        if delta < tol {
            let pb = &p * b;
            let kt = a.transpose() * &pb / (r + b.dot(&pb));
            let k = DMatrix::from_row_slice(1, kt.len(), kt.as_slice());
            return Ok(Dare { p, k, iterations: it });
        }
    }
    Err(Error::InvalidConfig(format!("Riccati iteration did not converge in {max_iter} steps")))
}

/// Terminal ellipsoid `{Z : Zᵀ P̄ Z ≤ c_f}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalSet {
    #[serde(with = "linalg::rows")]
    pub p_bar: DMatrix<f64>,
    pub c_f: f64,
    /// LQR gain whose constraint-admissible level set this is.
    #[serde(with = "linalg::rows")]
    pub k: DMatrix<f64>,
}

impl TerminalSet {
    pub fn contains(&self, z: &DVector<f64>) -> bool {
        z.dot(&(&self.p_bar * z)) <= self.c_f
    }
}

/// Largest `c` with `{ZᵀPZ ≤ c} ⊂ {|g_iᵀZ| ≤ h_i}` for every slab:
/// `c = min_i h_i² / (g_iᵀ P⁻¹ g_i)`.
pub fn largest_level_in_slabs(p: &DMatrix<f64>, slabs: &[(DVector<f64>, f64)]) -> Result<f64> {
    let pinv = linalg::inverse_spd(p)?;
    let mut c = f64::INFINITY;
    for (g, h) in slabs {
        let w = g.dot(&(&pinv * g));
        if w > 0.0 {
            c = c.min(h * h / w);
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_dare_matches_quadratic_root() {
        // p = q + a²p − a²p²b²/(r + b²p)  ⇔  b²p² + (r − a²r − q b²)p − q r = 0.
        let (a, b, q, r) = (1.2f64, 0.5f64, 2.0f64, 1.0f64);
        let d = dare(
            &DMatrix::from_element(1, 1, a),
            &DVector::from_element(1, b),
            &DMatrix::from_element(1, 1, q),
            r,
            1e-13,
            10_000,
        )
        .unwrap();
        let (qa, qb, qc) = (b * b, r - a * a * r - q * b * b, -q * r);
        let root = (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa);
        assert!((d.p[(0, 0)] - root).abs() < 1e-9 * root);
        assert!((a - b * d.k[(0, 0)]).abs() < 1.0);
    }

    #[test]
    fn unstabilizable_pair_errors() {
        let r = dare(
            &DMatrix::from_element(1, 1, 1.5),
            &DVector::zeros(1),
            &DMatrix::identity(1, 1),
            1.0,
            1e-10,
            100_000,
        );
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn level_in_unit_slab() {
        let c = largest_level_in_slabs(&DMatrix::identity(2, 2), &[(DVector::from_vec(vec![1.0, 0.0]), 2.0)]).unwrap();
        assert!((c - 4.0).abs() < 1e-12);
    }
}
