//! Lyapunov/LMI certificates for the truncated closed loop: the theorem-form
//! and Schur-convexified assemblies, ellipsoid containment, the SDP
//! certificate subproblem, and the post-training residual check that
//! accounts for the neglected modes.

pub mod sdp;
mod step;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mpc_expert::StateBox;
use crate::spectral::TruncatedSystem;

pub use step::{certificate_step, CertLayout, CertificateProblem, LogdetMode, StepOutput};

/// Decision variables of the convex LMI: `H₁ = P⁻¹`, `H₂ = Λ⁻¹` (diagonal)
/// and the coupling blocks `L = 𝓕(N) H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateVars {
    #[serde(rename = "H1", with = "linalg::rows")]
    pub h1: DMatrix<f64>,
    #[serde(rename = "H2", with = "linalg::vector")]
    pub h2: DVector<f64>,
    #[serde(rename = "L1", with = "linalg::rows")]
    pub l1: DMatrix<f64>,
    #[serde(rename = "L2", with = "linalg::rows")]
    pub l2: DMatrix<f64>,
    #[serde(rename = "L3", with = "linalg::rows")]
    pub l3: DMatrix<f64>,
    #[serde(rename = "L4", with = "linalg::rows")]
    pub l4: DMatrix<f64>,
}

impl CertificateVars {
    pub fn n0(&self) -> usize {
        self.h1.nrows()
    }

    pub fn n_phi(&self) -> usize {
        self.h2.len()
    }

    /// `blockdiag(H₁, H₂)`.
    pub fn h_matrix(&self) -> DMatrix<f64> {
        let (n0, np) = (self.n0(), self.n_phi());
        let mut h = DMatrix::zeros(n0 + np, n0 + np);
        h.view_mut((0, 0), (n0, n0)).copy_from(&self.h1);
        for i in 0..np {
            h[(n0 + i, n0 + i)] = self.h2[i];
        }
        h
    }

    /// `[[L₁, L₂], [L₃, L₄]]`.
    pub fn l_matrix(&self) -> DMatrix<f64> {
        let (n0, np) = (self.n0(), self.n_phi());
        let mut l = DMatrix::zeros(1 + np, n0 + np);
        l.view_mut((0, 0), (1, n0)).copy_from(&self.l1);
        l.view_mut((0, n0), (1, np)).copy_from(&self.l2);
        l.view_mut((1, 0), (np, n0)).copy_from(&self.l3);
        l.view_mut((1, n0), (np, np)).copy_from(&self.l4);
        l
    }

    /// Exact coupling `L = Ñ H`.
    pub fn coupled(h1: DMatrix<f64>, h2: DVector<f64>, ntilde: &DMatrix<f64>) -> Self {
        let (n0, np) = (h1.nrows(), h2.len());
        let mut v = Self {
            h1,
            h2,
            l1: DMatrix::zeros(1, n0),
            l2: DMatrix::zeros(1, np),
            l3: DMatrix::zeros(np, n0),
            l4: DMatrix::zeros(np, np),
        };
        let l = ntilde * v.h_matrix();
        v.l1 = l.view((0, 0), (1, n0)).into_owned();
        v.l2 = l.view((0, n0), (1, np)).into_owned();
        v.l3 = l.view((1, 0), (np, n0)).into_owned();
        v.l4 = l.view((1, n0), (np, np)).into_owned();
        v
    }

    /// `‖Ñ H − L‖_F`.
    pub fn consistency(&self, ntilde: &DMatrix<f64>) -> f64 {
        (ntilde * self.h_matrix() - self.l_matrix()).norm()
    }

    /// `(P, Λ) = (H₁⁻¹, H₂⁻¹)`.
    pub fn lyapunov(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let p = linalg::inverse_spd(&self.h1)?;
        if self.h2.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidCertificate("H2 must be positive".into()));
        }
        Ok((p, self.h2.map(|v| 1.0 / v)))
    }
}

fn split_ntilde(nt: &DMatrix<f64>, n0: usize) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    if nt.nrows() == 0 || nt.ncols() < n0 || nt.ncols() - n0 != nt.nrows() - 1 {
        return Err(Error::InvalidInput(format!("Ñ has shape {:?}, expected (1+nφ)×({n0}+nφ)", nt.shape())));
    }
    let np = nt.nrows() - 1;
    Ok((
        nt.view((0, 0), (1, n0)).into_owned(),
        nt.view((0, n0), (1, np)).into_owned(),
        nt.view((1, 0), (np, n0)).into_owned(),
        nt.view((1, n0), (np, np)).into_owned(),
    ))
}

/// `R̃_ν = [[I, 0], [Ñ_uz, Ñ_ux]]`, mapping `(Z, x)` to `(Z, u)`.
pub fn r_nu(nt: &DMatrix<f64>, n0: usize) -> Result<DMatrix<f64>> {
    let (uz, ux, _, _) = split_ntilde(nt, n0)?;
    let np = ux.ncols();
    let mut r = DMatrix::zeros(n0 + 1, n0 + np);
    r.view_mut((0, 0), (n0, n0)).fill_with_identity();
    r.view_mut((n0, 0), (1, n0)).copy_from(&uz);
    r.view_mut((n0, n0), (1, np)).copy_from(&ux);
    Ok(r)
}

/// `R̃_φ = [[Ñ_νz, Ñ_νx], [0, I]]`, mapping `(Z, x)` to `(ν, x)`.
pub fn r_phi(nt: &DMatrix<f64>, n0: usize) -> Result<DMatrix<f64>> {
    let (_, _, vz, vx) = split_ntilde(nt, n0)?;
    let np = vx.ncols();
    let mut r = DMatrix::zeros(2 * np, n0 + np);
    r.view_mut((0, 0), (np, n0)).copy_from(&vz);
    r.view_mut((0, n0), (np, np)).copy_from(&vx);
    r.view_mut((np, n0), (np, np)).fill_with_identity();
    Ok(r)
}

fn check_dims(sys: &TruncatedSystem, p: &DMatrix<f64>, lambda: &DVector<f64>, nt: &DMatrix<f64>) -> Result<()> {
    let n0 = sys.n0();
    if p.shape() != (n0, n0) || nt.nrows() != lambda.len() + 1 || nt.ncols() != n0 + lambda.len() {
        return Err(Error::InvalidInput("certificate dimensions do not match the system and policy".into()));
    }
    if lambda.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidInput("Λ must be nonnegative".into()));
    }
    Ok(())
}

/// `R̃_νᵀ Q₁ R̃_ν + R̃_φᵀ Q₂ R̃_φ` with decay weight `decay` in
/// `Q₁ = [[AᵀP + PA + decay·P, PB], [BᵀP, 0]]`.
fn lyapunov_form(sys: &TruncatedSystem, nt: &DMatrix<f64>, p: &DMatrix<f64>, lambda: &DVector<f64>, decay: f64) -> Result<DMatrix<f64>> {
    check_dims(sys, p, lambda, nt)?;
    let n0 = sys.n0();
    let np = lambda.len();
    let a = sys.a_matrix();
    let pb = p * &sys.b;
    let mut q1 = DMatrix::zeros(n0 + 1, n0 + 1);
    q1.view_mut((0, 0), (n0, n0)).copy_from(&(a.transpose() * p + p * &a + p * decay));
    q1.view_mut((0, n0), (n0, 1)).copy_from(&pb);
    q1.view_mut((n0, 0), (1, n0)).copy_from(&pb.transpose());
    let mut q2 = DMatrix::zeros(2 * np, 2 * np);
    for i in 0..np {
        q2[(i, i)] = lambda[i];
        q2[(np + i, np + i)] = -lambda[i];
    }
    let rn = r_nu(nt, n0)?;
    let rp = r_phi(nt, n0)?;
    Ok(linalg::symmetrize(&(rn.transpose() * q1 * &rn + rp.transpose() * q2 * &rp)))
}

/// Theorem-form left-hand side, required `≺ 0`.
pub fn assemble_theorem_lhs(
    sys: &TruncatedSystem,
    ntilde: &DMatrix<f64>,
    p: &DMatrix<f64>,
    lambda: &DVector<f64>,
    delta: f64,
    tau: f64,
) -> Result<DMatrix<f64>> {
    let mut m = lyapunov_form(sys, ntilde, p, lambda, 2.0 * delta)?;
    let n0 = sys.n0();
    m.view_mut((0, 0), (n0, n0)).add_assign(&(p * tau));
    for i in 0..lambda.len() {
        m[(n0 + i, n0 + i)] += tau * lambda[i];
    }
    Ok(m)
}

/// Schur-convexified LMI in `(H, L)`, required `≻ 0`.
pub fn assemble_convex_lmi(sys: &TruncatedSystem, v: &CertificateVars, delta: f64, tau: f64) -> Result<DMatrix<f64>> {
    let (n0, np) = (sys.n0(), v.n_phi());
    if v.h1.shape() != (n0, n0)
        || v.l1.shape() != (1, n0)
        || v.l2.shape() != (1, np)
        || v.l3.shape() != (np, n0)
        || v.l4.shape() != (np, np)
    {
        return Err(Error::InvalidInput("certificate variables have inconsistent shapes".into()));
    }
    let a = sys.a_matrix();
    let b = DMatrix::from_column_slice(n0, 1, sys.b.as_slice());
    let theta = &v.h1 * a.transpose() + &a * &v.h1 + &b * &v.l1 + v.l1.transpose() * b.transpose() + &v.h1 * (2.0 * delta + tau);
    let bl2 = &b * &v.l2;
    let h2 = DMatrix::from_diagonal(&v.h2);
    let n = n0 + 2 * np;
    let mut m = DMatrix::zeros(n, n);
    m.view_mut((0, 0), (n0, n0)).copy_from(&(-theta));
    m.view_mut((0, n0), (n0, np)).copy_from(&(-&bl2));
    m.view_mut((n0, 0), (np, n0)).copy_from(&(-bl2.transpose()));
    m.view_mut((0, n0 + np), (n0, np)).copy_from(&v.l3.transpose());
    m.view_mut((n0 + np, 0), (np, n0)).copy_from(&v.l3);
    m.view_mut((n0, n0), (np, np)).copy_from(&(&h2 * (1.0 - tau)));
    m.view_mut((n0, n0 + np), (np, np)).copy_from(&v.l4.transpose());
    m.view_mut((n0 + np, n0), (np, np)).copy_from(&v.l4);
    m.view_mut((n0 + np, n0 + np), (np, np)).copy_from(&h2);
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainmentRow {
    /// `S_i H₁ S_iᵀ`.
    pub value: f64,
    /// `s_i²`.
    pub bound: f64,
    pub satisfied: bool,
}

/// `E(H₁⁻¹) ⊆ {|S_i Z| ≤ s_i}` row by row.
pub fn containment_constraints(h1: &DMatrix<f64>, sb: &StateBox) -> Result<Vec<ContainmentRow>> {
    if sb.s.iter().any(|&s| s < 0.0) {
        return Err(Error::InvalidConfig("containment bounds must be nonnegative".into()));
    }
    if sb.dim() != h1.nrows() || sb.s.len() != sb.s_matrix.nrows() {
        return Err(Error::InvalidInput("state box does not match H1".into()));
    }
    Ok(sb
        .s_matrix
        .row_iter()
        .zip(&sb.s)
        .map(|(row, &s)| {
            let value = (row * h1 * row.transpose())[0];
            let bound = s * s;
            ContainmentRow { value, bound, satisfied: value <= bound }
        })
        .collect())
}

/// Inner approximation `E(P) = {Z : ZᵀPZ ≤ 1}` of the region of attraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoaEllipsoid {
    #[serde(rename = "P", with = "linalg::rows")]
    pub p: DMatrix<f64>,
    /// `logdet(P⁻¹)`, the log-volume proxy.
    pub logdet_h1: f64,
    pub semi_axes: Vec<f64>,
}

impl RoaEllipsoid {
    pub fn contains(&self, z: &DVector<f64>) -> bool {
        z.dot(&(&self.p * z)) <= 1.0
    }

    /// Point on the boundary in direction `d`.
    pub fn boundary_point(&self, d: &DVector<f64>) -> DVector<f64> {
        d / d.dot(&(&self.p * d)).sqrt()
    }
}

pub fn roa(p: &DMatrix<f64>) -> Result<RoaEllipsoid> {
    let ld = linalg::logdet_spd(p)?;
    let semi_axes = linalg::sym_eigenvalues(p).iter().map(|l| 1.0 / l.sqrt()).collect();
    Ok(RoaEllipsoid { p: p.clone(), logdet_h1: -ld, semi_axes })
}

/// Which quadratic form the Young's-inequality coupling multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// `R̃_νᵀ R̃_ν`, as printed.
    #[default]
    Full,
    /// Only the input row, `r_uᵀ r_u` with `r_u = [Ñ_uz Ñ_ux]`.
    InputRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub coupling: Coupling,
    /// Weight on `P` in the nominal block: 1 gives `δP`, 2 gives `2δP`.
    pub decay_factor: f64,
    pub eig_tol: f64,
    pub alpha_cap: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { coupling: Coupling::Full, decay_factor: 1.0, eig_tol: 1e-8, alpha_cap: 1e12 }
    }
}

/// Outcome of the spillover check with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub feasible: bool,
    pub gamma: f64,
    pub alpha_star: Option<f64>,
    /// Lower bound on `α` from the first neglected mode.
    pub alpha_min: Option<f64>,
    /// Upper bound on `α` from the coupled Lyapunov condition.
    pub alpha_max: Option<f64>,
    /// Largest eigenvalue of condition (i) at `α → 0⁺`.
    pub nominal_max_eig: f64,
    pub condition_i_max_eig: Option<f64>,
    pub gamma_star_max_eig: Option<f64>,
    /// Factor `c` such that `(cP, cΛ)` would pass; `None` when even the
    /// nominal part fails.
    pub required_scaling: Option<f64>,
    pub reason: Option<String>,
}

/// `M₀` and `G` of the coupled condition `M₀ + αγ‖β‖²G ⪯ 0`.
fn coupled_parts(
    sys: &TruncatedSystem,
    ntilde: &DMatrix<f64>,
    p: &DMatrix<f64>,
    lambda: &DVector<f64>,
    delta: f64,
    opts: &VerifyOptions,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n0 = sys.n0();
    let m0 = lyapunov_form(sys, ntilde, p, lambda, opts.decay_factor * delta)?;
    let g = match opts.coupling {
        Coupling::Full => {
            let r = r_nu(ntilde, n0)?;
            r.transpose() * r
        }
        Coupling::InputRow => {
            let r = ntilde.rows(0, 1).into_owned();
            r.transpose() * r
        }
    };
    Ok((m0, g))
}

/// Largest eigenvalue of the coupled condition at a given `α`.
#[allow(clippy::too_many_arguments)]
pub fn coupled_condition_max_eig(
    sys: &TruncatedSystem,
    ntilde: &DMatrix<f64>,
    p: &DMatrix<f64>,
    lambda: &DVector<f64>,
    delta: f64,
    gamma: f64,
    tail_norm2: f64,
    alpha: f64,
    opts: &VerifyOptions,
) -> Result<f64> {
    let (m0, g) = coupled_parts(sys, ntilde, p, lambda, delta, opts)?;
    Ok(linalg::max_eigenvalue(&(m0 + g * (alpha * gamma * tail_norm2))))
}

/// Largest `α` with `M₀ + α·c·G ⪯ 0` and `α ≥ 1/(2γ(λ_{n₀+1} − q_c − δ))`.
#[allow(clippy::too_many_arguments)]
pub fn verify_residual(
    sys: &TruncatedSystem,
    ntilde: &DMatrix<f64>,
    p: &DMatrix<f64>,
    lambda: &DVector<f64>,
    delta: f64,
    gamma: f64,
    tail_norm2: f64,
    lambda_next: f64,
    opts: &VerifyOptions,
) -> Result<ResidualReport> {
    if !(gamma > 0.0) || !(tail_norm2 >= 0.0) {
        return Err(Error::InvalidInput("need γ > 0 and a nonnegative tail energy".into()));
    }
    if linalg::min_eigenvalue(p) <= 0.0 {
        return Err(Error::InvalidCertificate("P is not positive definite".into()));
    }
    let (m0, g) = coupled_parts(sys, ntilde, p, lambda, delta, opts)?;
    let cond_i = |alpha: f64| linalg::max_eigenvalue(&(&m0 + &g * (alpha * gamma * tail_norm2)));
    let nominal = linalg::max_eigenvalue(&m0);
    let a22 = 2.0 * gamma * (-lambda_next + sys.q_c + delta);
    let gamma_star = |alpha: f64| linalg::max_eigenvalue(&DMatrix::from_row_slice(2, 2, &[a22, 1.0, 1.0, -alpha]));
    let alpha_min = (a22 < 0.0).then(|| -1.0 / a22);

    let mut report = ResidualReport {
        feasible: false,
        gamma,
        alpha_star: None,
        alpha_min,
        alpha_max: None,
        nominal_max_eig: nominal,
        condition_i_max_eig: None,
        gamma_star_max_eig: None,
        required_scaling: None,
        reason: None,
    };
    if nominal > opts.eig_tol {
        report.reason = Some("nominal Lyapunov condition fails even as α → 0⁺".into());
        return Ok(report);
    }
    // Bracket then bisect the largest α keeping condition (i).
    let ok = |a: f64| cond_i(a) <= opts.eig_tol;
    let alpha_max = if ok(opts.alpha_cap) {
        opts.alpha_cap
    } else {
        let mut lo = 0.0;
        let mut hi = 1.0;
        while ok(hi) {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if ok(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * hi {
                break;
            }
        }
        lo
    };
    report.alpha_max = Some(alpha_max);
    if let Some(amin) = alpha_min {
        if alpha_max > 0.0 {
            report.required_scaling = Some((amin / alpha_max).max(1.0));
        }
    }
    match alpha_min {
        None => report.reason = Some("first neglected mode violates the decay margin".into()),
        Some(amin) if alpha_max < amin => {
            report.reason = Some(format!(
                "coupled condition allows α ≤ {alpha_max:.4e} but the neglected modes need α ≥ {amin:.4e}"
            ))
        }
        Some(_) if alpha_max <= 0.0 => report.reason = Some("no positive α satisfies condition (i)".into()),
        Some(_) => {
            report.feasible = true;
            report.alpha_star = Some(alpha_max);
            report.condition_i_max_eig = Some(cond_i(alpha_max));
            report.gamma_star_max_eig = Some(gamma_star(alpha_max));
        }
    }
    Ok(report)
}

/// γ line search over `{10⁻², …, 10²}` starting from the configured value.
#[allow(clippy::too_many_arguments)]
pub fn verify_residual_search(
    sys: &TruncatedSystem,
    ntilde: &DMatrix<f64>,
    p: &DMatrix<f64>,
    lambda: &DVector<f64>,
    delta: f64,
    gamma: f64,
    tail_norm2: f64,
    lambda_next: f64,
    opts: &VerifyOptions,
) -> Result<ResidualReport> {
    let first = verify_residual(sys, ntilde, p, lambda, delta, gamma, tail_norm2, lambda_next, opts)?;
    if first.feasible {
        return Ok(first);
    }
    for k in -2..=2 {
        let g = 10f64.powi(k);
        let r = verify_residual(sys, ntilde, p, lambda, delta, g, tail_norm2, lambda_next, opts)?;
        if r.feasible {
            return Ok(r);
        }
    }
    Ok(first)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdMargins {
    /// Smallest eigenvalue of the convex LMI.
    pub lmi: f64,
    pub h1: f64,
    /// `s_i² − S_i H₁ S_iᵀ` per row.
    pub containment: Vec<f64>,
    /// Largest eigenvalue of the theorem-form matrix.
    pub theorem: f64,
}

/// Persisted certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    #[serde(flatten)]
    pub vars: CertificateVars,
    #[serde(rename = "P", with = "linalg::rows")]
    pub p: DMatrix<f64>,
    #[serde(rename = "Lambda", with = "linalg::vector")]
    pub lambda: DVector<f64>,
    pub delta: f64,
    pub tau: f64,
    pub gamma: f64,
    pub alpha: Option<f64>,
    pub logdet: f64,
    pub psd_margins: PsdMargins,
}

impl Certificate {
    /// Derives `P`, `Λ` and every margin from the variables.
    pub fn new(sys: &TruncatedSystem, sb: &StateBox, ntilde: &DMatrix<f64>, vars: CertificateVars, delta: f64, tau: f64, gamma: f64) -> Result<Self> {
        let (p, lambda) = vars.lyapunov()?;
        let lmi = linalg::min_eigenvalue(&assemble_convex_lmi(sys, &vars, delta, tau)?);
        let theorem = linalg::max_eigenvalue(&assemble_theorem_lhs(sys, ntilde, &p, &lambda, delta, tau)?);
        let containment = containment_constraints(&vars.h1, sb)?.iter().map(|r| r.bound - r.value).collect();
        let psd_margins = PsdMargins { lmi, h1: linalg::min_eigenvalue(&vars.h1), containment, theorem };
        let logdet = linalg::logdet_spd(&vars.h1)?;
        Ok(Self { vars, p, lambda, delta, tau, gamma, alpha: None, logdet, psd_margins })
    }

    pub fn roa(&self) -> Result<RoaEllipsoid> {
        roa(&self.p)
    }
}

use std::ops::AddAssign;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{build_truncated, SpectralModel};

    fn sys_a() -> TruncatedSystem {
        build_truncated(&SpectralModel::new(24.0, 2, 20, 10).unwrap(), 2, 5.0).unwrap()
    }

    fn stable_sys() -> TruncatedSystem {
        let mut s = sys_a();
        s.a = DVector::from_vec(vec![-3.0, -7.0]);
        s
    }

    #[test]
    fn open_loop_stable_theorem_form() {
        let s = stable_sys();
        let nt = DMatrix::zeros(3, 4);
        let lhs = assemble_theorem_lhs(&s, &nt, &DMatrix::identity(2, 2), &DVector::zeros(2), 0.1, 1e-3).unwrap();
        assert_eq!(lhs, lhs.transpose());
        // Λ = 0 leaves the x-block at zero; the Z-block carries the Lyapunov decrease.
        assert!(linalg::max_eigenvalue(&lhs.view((0, 0), (2, 2)).into_owned()) < 0.0);
        let lhs = assemble_theorem_lhs(&s, &nt, &DMatrix::identity(2, 2), &DVector::from_element(2, 1.0), 0.1, 1e-3).unwrap();
        assert!(linalg::max_eigenvalue(&lhs) < 0.0);
    }

    #[test]
    fn convex_lmi_decouples_when_l_is_zero() {
        let s = stable_sys();
        let v = CertificateVars::coupled(DMatrix::identity(2, 2), DVector::from_element(3, 2.0), &DMatrix::zeros(4, 5));
        let m = assemble_convex_lmi(&s, &v, 0.5, 0.1).unwrap();
        assert_eq!(m, m.transpose());
        // −Θ = diag(6 − 1.1, 14 − 1.1).
        assert!((m[(0, 0)] - 4.9).abs() < 1e-12 && (m[(1, 1)] - 12.9).abs() < 1e-12);
        assert!(linalg::min_eigenvalue(&m) > 0.0);
    }

    #[test]
    fn containment_examples() {
        let sb = StateBox::symmetric(&[2.0, 40.0]);
        let rows = containment_constraints(&DMatrix::identity(2, 2), &sb).unwrap();
        assert_eq!((rows[0].value, rows[0].bound), (1.0, 4.0));
        assert_eq!((rows[1].value, rows[1].bound), (1.0, 1600.0));
        assert!(rows.iter().all(|r| r.satisfied));
        let rows = containment_constraints(&DMatrix::from_diagonal(&DVector::from_vec(vec![9.0, 1.0])), &sb).unwrap();
        assert!(!rows[0].satisfied);
        let bad = StateBox { s_matrix: DMatrix::identity(2, 2), s: vec![-1.0, 1.0] };
        assert!(containment_constraints(&DMatrix::identity(2, 2), &bad).is_err());
    }

    #[test]
    fn roa_examples() {
        let r = roa(&DMatrix::identity(2, 2)).unwrap();
        assert!(r.logdet_h1.abs() < 1e-15);
        let r = roa(&DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]))).unwrap();
        assert!((r.semi_axes[0] - 1.0).abs() < 1e-12 && (r.semi_axes[1] - 0.5).abs() < 1e-12);
        assert!(roa(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]))).is_err());
    }

    #[test]
    fn gamma_star_lower_bound() {
        // Open loop Ñ = 0 with a stable system: only Γ* constrains α from below.
        let s = stable_sys();
        let nt = DMatrix::zeros(3, 4);
        let lam = DVector::from_element(2, 1.0);
        let lambda3 = (2.5 * std::f64::consts::PI).powi(2);
        let r = verify_residual(&s, &nt, &DMatrix::identity(2, 2), &lam, 5.0, 1.0, 0.0, lambda3, &VerifyOptions::default()).unwrap();
        let amin = r.alpha_min.unwrap();
        assert!((amin - 1.0 / 65.37).abs() < 1e-4, "{amin}");
        assert!(r.feasible);
        assert_eq!(r.alpha_star, Some(VerifyOptions::default().alpha_cap));
    }
}
