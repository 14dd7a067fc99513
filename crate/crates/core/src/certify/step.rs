use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::sdp::{self, AffineBlock, SdpProblem, SdpSettings};
use super::{assemble_convex_lmi, CertificateVars};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mpc_expert::StateBox;
use crate::nn_policy::isolate::layer_ranges;
use crate::spectral::TruncatedSystem;

/// Packing of [`CertificateVars`] into a flat vector: upper triangle of `H₁`,
/// diagonal of `H₂`, then `L₁`, `L₂`, `L₃` and the admissible entries of `L₄`.
#[derive(Debug, Clone, PartialEq)]
pub struct CertLayout {
    pub n0: usize,
    pub n_phi: usize,
    /// Entries of `L₄` that `Ñ_νx` can populate: column layer strictly
    /// before row layer.
    pub l4_mask: Vec<(usize, usize)>,
}

impl CertLayout {
    pub fn new(n0: usize, layer_sizes: &[usize]) -> Self {
        let ranges = layer_ranges(layer_sizes);
        let mut l4_mask = Vec::new();
        for (li, ri) in ranges.iter().enumerate() {
            for i in ri.clone() {
                for rj in &ranges[..li] {
                    l4_mask.extend(rj.clone().map(|j| (i, j)));
                }
            }
        }
        Self { n0, n_phi: layer_sizes.iter().sum(), l4_mask }
    }

    fn n_h1(&self) -> usize {
        self.n0 * (self.n0 + 1) / 2
    }

    /// Number of `H` variables, which come first.
    pub fn n_h(&self) -> usize {
        self.n_h1() + self.n_phi
    }

    pub fn n_vars(&self) -> usize {
        self.n_h() + self.n0 + self.n_phi + self.n_phi * self.n0 + self.l4_mask.len()
    }

    fn unpack_h(&self, x: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let n0 = self.n0;
        let mut h1 = DMatrix::zeros(n0, n0);
        let mut k = 0;
        for i in 0..n0 {
            for j in i..n0 {
                h1[(i, j)] = x[k];
                h1[(j, i)] = x[k];
                k += 1;
            }
        }
        (h1, DVector::from_column_slice(&x[k..k + self.n_phi]))
    }

    pub fn unpack(&self, x: &DVector<f64>) -> CertificateVars {
        let (n0, np) = (self.n0, self.n_phi);
        let (h1, h2) = self.unpack_h(x.as_slice());
        let mut k = self.n_h();
        let mut take = |len: usize| {
            let s = &x.as_slice()[k..k + len];
            k += len;
            s.to_vec()
        };
        let l1 = DMatrix::from_row_slice(1, n0, &take(n0));
        let l2 = DMatrix::from_row_slice(1, np, &take(np));
        let l3 = DMatrix::from_row_slice(np, n0, &take(np * n0));
        let mut l4 = DMatrix::zeros(np, np);
        for (&(i, j), v) in self.l4_mask.iter().zip(take(self.l4_mask.len())) {
            l4[(i, j)] = v;
        }
        CertificateVars { h1, h2, l1, l2, l3, l4 }
    }

    /// Inverse of [`unpack`](Self::unpack); `L₄` entries outside the mask are dropped.
    pub fn pack(&self, v: &CertificateVars) -> DVector<f64> {
        let mut x = self.pack_h(&v.h1, &v.h2);
        x.extend(v.l1.iter().copied());
        x.extend(v.l2.iter().copied());
        x.extend(v.l3.transpose().iter().copied());
        x.extend(self.l4_mask.iter().map(|&(i, j)| v.l4[(i, j)]));
        DVector::from_vec(x)
    }

    fn pack_h(&self, h1: &DMatrix<f64>, h2: &DVector<f64>) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.n_vars());
        for i in 0..self.n0 {
            for j in i..self.n0 {
                x.push(h1[(i, j)]);
            }
        }
        x.extend(h2.iter().copied());
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub vars: CertificateVars,
    pub objective: f64,
    /// Smallest eigenvalue of the convex LMI.
    pub lmi_margin: f64,
    pub iterations: u32,
}

/// Certificate subproblem with its fixed feasible set.
#[derive(Debug, Clone)]
pub struct CertificateProblem {
    pub layout: CertLayout,
    pub sys: TruncatedSystem,
    pub state_box: StateBox,
    pub delta: f64,
    pub tau: f64,
    /// Margin imposed inside the solver; ten times the certified 1e-7 so
    /// that eigenvalue round-off cannot eat it.
    pub eps: f64,
    pub settings: SdpSettings,
    pub logdet: LogdetMode,
    base: SdpProblem,
    center: Option<DVector<f64>>,
}

/// Treatment of the `−η₂ logdet H₁` term in the certificate step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogdetMode {
    /// Kept as a conic term.
    #[default]
    Exact,
    /// `tr((H₁ᵏ⁻¹)⁻¹ H₁)` around the previous iterate.
    Linearized,
}

/// Upper bound on `H₂ = Λ⁻¹`, i.e. `Λ ≥ 10⁻²`.
const H2_BOUND: f64 = 1e2;

fn bound_vars(p: &mut SdpProblem, lay: &CertLayout) {
    let h2 = lay.n_h1()..lay.n_h();
    p.hi.rows_mut(h2.start, h2.len()).fill(H2_BOUND);
}

fn constraint_blocks(
    n: usize,
    sys: &TruncatedSystem,
    sb: &StateBox,
    delta: f64,
    tau: f64,
    eps: f64,
    vars: impl Fn(&DVector<f64>) -> CertificateVars,
) -> Vec<AffineBlock> {
    let n0 = sys.n0();
    let mut blocks = vec![
        AffineBlock::from_fn(n, |x| {
            let m = assemble_convex_lmi(sys, &vars(x), delta, tau).expect("layout shapes match");
            let d = m.nrows();
            m - DMatrix::identity(d, d) * eps
        }),
        AffineBlock::from_fn(n, |x| vars(x).h1 - DMatrix::identity(n0, n0) * eps),
    ];
    for (row, &s) in sb.s_matrix.row_iter().zip(&sb.s) {
        blocks.push(AffineBlock::from_fn(n, |x| {
            let h1 = vars(x).h1;
            DMatrix::from_element(1, 1, s * s - (row * h1 * row.transpose())[0])
        }));
    }
    blocks
}

impl CertificateProblem {
    pub fn new(sys: &TruncatedSystem, sb: &StateBox, delta: f64, tau: f64, layer_sizes: &[usize]) -> Result<Self> {
        sb.validate()?;
        if sb.dim() != sys.n0() {
            return Err(Error::InvalidInput("state box dimension does not match the system".into()));
        }
        if sb.s.iter().any(|&s| s < 0.0) {
            return Err(Error::InvalidConfig("containment bounds must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&tau) || tau == 0.0 {
            return Err(Error::InvalidConfig(format!("τ = {tau} must lie in (0, 1)")));
        }
        let layout = CertLayout::new(sys.n0(), layer_sizes);
        let n = layout.n_vars();
        let eps = 1e-6;
        let mut base = SdpProblem::new(n);
        base.constraints = constraint_blocks(n, sys, sb, delta, tau, eps, |x| layout.unpack(x));
        bound_vars(&mut base, &layout);
        Ok(Self {
            layout,
            sys: sys.clone(),
            state_box: sb.clone(),
            delta,
            tau,
            eps,
            settings: SdpSettings::default(),
            logdet: LogdetMode::default(),
            base,
            center: None,
        })
    }

    /// The largest-volume `H₁` over the LMI and containment constraints with
    /// `L` left free, computed once. Starting point of the alternating scheme.
    pub fn interior_point(&mut self) -> Result<CertificateVars> {
        if self.center.is_none() {
            let mut p = self.base.clone();
            let lay = &self.layout;
            p.logdet_terms = vec![(1.0, AffineBlock::from_fn(lay.n_vars(), |x| lay.unpack_h(x.as_slice()).0))];
            self.center = Some(sdp::solve(&p, &self.settings)?.x);
        }
        Ok(self.layout.unpack(self.center.as_ref().unwrap()))
    }

    /// `R_i = Ñ·H(e_i) − L(e_i)` as columns of one matrix.
    fn residual_map(&self, ntilde: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.layout.n_vars();
        let rows = ntilde.len();
        let mut m = DMatrix::zeros(rows, n);
        let mut e = DVector::zeros(n);
        for i in 0..n {
            e[i] = 1.0;
            let v = self.layout.unpack(&e);
            let r = ntilde * v.h_matrix() - v.l_matrix();
            m.column_mut(i).copy_from_slice(r.as_slice());
            e[i] = 0.0;
        }
        m
    }

    /// Minimizes `−η₂ logdet H₁ + ⟨Y, R⟩ + (ρ/2)‖R‖²`, `R = Ñ H − L`, over
    /// the LMI set; with [`LogdetMode::Linearized`] the `logdet` is replaced
    /// by its tangent at `h1_prev`.
    pub fn step(&self, ntilde: &DMatrix<f64>, y: &DMatrix<f64>, rho: f64, eta2: f64, h1_prev: &DMatrix<f64>) -> Result<StepOutput> {
        let (n0, np) = (self.layout.n0, self.layout.n_phi);
        if ntilde.shape() != (1 + np, n0 + np) || y.shape() != ntilde.shape() || h1_prev.shape() != (n0, n0) {
            return Err(Error::InvalidInput("certificate step operands have inconsistent shapes".into()));
        }
        if !(rho > 0.0) || eta2 < 0.0 {
            return Err(Error::InvalidConfig("need ρ > 0 and η₂ ≥ 0".into()));
        }
        let g = linalg::inverse_spd(h1_prev)?;
        let r = self.residual_map(ntilde);
        let mut p = self.base.clone();
        p.q = (r.transpose() * &r) * rho;
        let yv = DVector::from_column_slice(y.as_slice());
        p.c = r.transpose() * yv;
        match self.logdet {
            LogdetMode::Exact => {
                let lay = &self.layout;
                p.logdet_terms = vec![(eta2, AffineBlock::from_fn(p.n, |x| lay.unpack_h(x.as_slice()).0))];
            }
            LogdetMode::Linearized => {
                let mut e = DVector::zeros(p.n);
                for i in 0..self.layout.n_h() {
                    e[i] = 1.0;
                    p.c[i] -= eta2 * (&g * self.layout.unpack(&e).h1).trace();
                    e[i] = 0.0;
                }
            }
        }
        let sol = sdp::solve(&p, &self.settings)?;
        let vars = self.layout.unpack(&sol.x);
        let lmi_margin = linalg::min_eigenvalue(&assemble_convex_lmi(&self.sys, &vars, self.delta, self.tau)?);
        Ok(StepOutput { vars, objective: sol.objective, lmi_margin, iterations: sol.iterations })
    }

    /// Maximizes `logdet H₁` with the coupling `L = Ñ H` imposed exactly.
    pub fn polish(&self, ntilde: &DMatrix<f64>) -> Result<CertificateVars> {
        let lay = &self.layout;
        let (n0, np) = (lay.n0, lay.n_phi);
        if ntilde.shape() != (1 + np, n0 + np) {
            return Err(Error::InvalidInput("Ñ does not match the certificate layout".into()));
        }
        let n = lay.n_h();
        let vars = |x: &DVector<f64>| {
            let (h1, h2) = lay.unpack_h(x.as_slice());
            CertificateVars::coupled(h1, h2, ntilde)
        };
        let mut p = SdpProblem::new(n);
        p.constraints = constraint_blocks(n, &self.sys, &self.state_box, self.delta, self.tau, self.eps, vars);
        p.logdet_terms = vec![(1.0, AffineBlock::from_fn(n, |x| lay.unpack_h(x.as_slice()).0))];
        bound_vars(&mut p, lay);
        let sol = sdp::solve(&p, &self.settings)?;
        let (h1, h2) = lay.unpack_h(sol.x.as_slice());
        Ok(CertificateVars::coupled(h1, h2, ntilde))
    }
}

/// One certificate update of the alternating scheme.
pub fn certificate_step(
    problem: &CertificateProblem,
    ntilde: &DMatrix<f64>,
    y: &DMatrix<f64>,
    rho: f64,
    eta2: f64,
    h1_prev: &DMatrix<f64>,
) -> Result<StepOutput> {
    problem.step(ntilde, y, rho, eta2, h1_prev)
}
