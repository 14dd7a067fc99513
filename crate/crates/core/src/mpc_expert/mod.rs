//! Linear MPC expert over the discretized truncated model and the
//! feasibility-filtered imitation dataset it produces.

pub mod qp;
mod riccati;

use std::ops::AddAssign;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::nn_policy::Hypercube;
use crate::spectral::TruncatedSystem;

pub use qp::{KktResidual, QpSettings};
pub use riccati::{dare, largest_level_in_slabs, Dare, TerminalSet};

/// Polytopic state set `{Z : |S_i Z| ≤ s_i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateBox {
    #[serde(rename = "S", with = "linalg::rows")]
    pub s_matrix: DMatrix<f64>,
    pub s: Vec<f64>,
}

impl StateBox {
    pub fn symmetric(bounds: &[f64]) -> Self {
        let n = bounds.len();
        Self { s_matrix: DMatrix::identity(n, n), s: bounds.to_vec() }
    }

    pub fn dim(&self) -> usize {
        self.s_matrix.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.s.len() != self.s_matrix.nrows() {
            return Err(Error::InvalidConfig("state box: S and s disagree in row count".into()));
        }
        if self.s.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig("state box: s must be finite and nonnegative".into()));
        }
        Ok(())
    }

    pub fn contains(&self, z: &DVector<f64>) -> bool {
        let sz = &self.s_matrix * z;
        sz.iter().zip(&self.s).all(|(v, s)| v.abs() <= *s)
    }

    /// The hypercube when `S = I`.
    pub fn hypercube(&self) -> Result<Hypercube> {
        let n = self.dim();
        if self.s_matrix.shape() != (n, n) || self.s_matrix != DMatrix::identity(n, n) {
            return Err(Error::InvalidConfig("state box must be axis aligned (S = I)".into()));
        }
        Hypercube::symmetric(&self.s)
    }

    /// Keeps the first `n` coordinates (rows that only touch them).
    pub fn restrict(&self, n: usize) -> Self {
        let rows: Vec<usize> = (0..self.s.len())
            .filter(|&i| (n..self.dim()).all(|j| self.s_matrix[(i, j)] == 0.0))
            .collect();
        let s_matrix = DMatrix::from_fn(rows.len(), n, |r, c| self.s_matrix[(rows[r], c)]);
        Self { s_matrix, s: rows.iter().map(|&i| self.s[i]).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcConfig {
    #[serde(rename = "M")]
    pub horizon: usize,
    #[serde(rename = "Qbar", with = "linalg::rows")]
    pub q_bar: DMatrix<f64>,
    #[serde(rename = "Rbar")]
    pub r_bar: f64,
    pub dt: f64,
    #[serde(rename = "U")]
    pub u_max: f64,
    #[serde(rename = "Z_box")]
    pub state_box: StateBox,
}

impl MpcConfig {
    pub fn validate(&self, n0: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("MPC horizon must be positive".into()));
        }
        if self.q_bar.shape() != (n0, n0) || self.state_box.dim() != n0 {
            return Err(Error::InvalidConfig(format!("MPC weights and box must be {n0}-dimensional")));
        }
        if n0 > 0 && linalg::min_eigenvalue(&self.q_bar) < -1e-12 {
            return Err(Error::InvalidConfig("Qbar must be positive semidefinite".into()));
        }
        if !(self.r_bar > 0.0) || !(self.dt > 0.0) || !(self.u_max >= 0.0) {
            return Err(Error::InvalidConfig("need Rbar > 0, dt > 0 and U ≥ 0".into()));
        }
        self.state_box.validate()
    }
}

/// Zero-order-hold discretization of the diagonal truncated system.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSystem {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub dt: f64,
}

impl DiscreteSystem {
    pub fn n0(&self) -> usize {
        self.a.len()
    }

    pub fn step(&self, z: &DVector<f64>, u: f64) -> DVector<f64> {
        self.a.component_mul(z) + &self.b * u
    }
}

pub fn discretize(sys: &TruncatedSystem, dt: f64) -> Result<DiscreteSystem> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidConfig(format!("sampling period must be positive, got {dt}")));
    }
    let a = sys.a.map(|ai| (ai * dt).exp());
    let b = DVector::from_fn(sys.a.len(), |i, _| {
        let ai = sys.a[i];
        let x = ai * dt;
        // (e^x − 1)/a = dt·expm1(x)/x, with the series near x = 0.
        let g = if x.abs() < 1e-8 { dt * (1.0 + 0.5 * x) } else { x.exp_m1() / ai };
        g * sys.b[i]
    });
    Ok(DiscreteSystem { a, b, dt })
}

/// `P̄` from the Riccati equation and the largest LQR level set that keeps
/// both `Z ∈ 𝒵` and `|K Z| ≤ U`.
pub fn terminal_ingredients(cfg: &MpcConfig, sys: &DiscreteSystem) -> Result<TerminalSet> {
    let d = dare(&DMatrix::from_diagonal(&sys.a), &sys.b, &cfg.q_bar, cfg.r_bar, 1e-10, 1_000_000)?;
    let mut slabs: Vec<(DVector<f64>, f64)> = cfg
        .state_box
        .s_matrix
        .row_iter()
        .zip(&cfg.state_box.s)
        .map(|(row, &s)| (row.transpose(), s))
        .collect();
    slabs.push((d.k.row(0).transpose(), cfg.u_max));
    let c_f = largest_level_in_slabs(&d.p, &slabs)?;
    Ok(TerminalSet { p_bar: d.p, c_f, k: d.k })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub u: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt: KktResidual,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MpcOutcome {
    Optimal(MpcSolution),
    Infeasible,
}

impl MpcOutcome {
    pub fn optimal(self) -> Option<MpcSolution> {
        match self {
            Self::Optimal(s) => Some(s),
            Self::Infeasible => None,
        }
    }
}

/// Condensed MPC with prediction matrices precomputed once. The decision
/// variable is `v` in `u_k = −K Z_k + v_k` (LQR pre-stabilization), which
/// keeps the condensed Hessian well conditioned for unstable modes.
#[derive(Debug, Clone)]
pub struct MpcController {
    pub cfg: MpcConfig,
    pub sys: DiscreteSystem,
    pub terminal: TerminalSet,
    pub settings: QpSettings,
    phi: DMatrix<f64>,
    gamma: DMatrix<f64>,
    psi: DMatrix<f64>,
    theta: DMatrix<f64>,
    q_blk: DMatrix<f64>,
    h: DMatrix<f64>,
    p_chol_t: DMatrix<f64>,
}

impl MpcController {
    pub fn new(cfg: MpcConfig, sys: DiscreteSystem) -> Result<Self> {
        let terminal = terminal_ingredients(&cfg, &sys)?;
        Self::with_terminal(cfg, sys, terminal)
    }

    pub fn with_terminal(cfg: MpcConfig, sys: DiscreteSystem, terminal: TerminalSet) -> Result<Self> {
        let n = sys.n0();
        cfg.validate(n)?;
        if (cfg.dt - sys.dt).abs() > 1e-15 * cfg.dt {
            return Err(Error::InvalidConfig("MPC dt differs from the discretization step".into()));
        }
        let m = cfg.horizon;
        let k = &terminal.k;
        let a_cl = DMatrix::from_diagonal(&sys.a) - &sys.b * k;

        let mut phi = DMatrix::zeros((m + 1) * n, n);
        let mut gamma = DMatrix::zeros((m + 1) * n, m);
        phi.view_mut((0, 0), (n, n)).fill_with_identity();
        for step in 1..=m {
            let prev_phi = phi.view(((step - 1) * n, 0), (n, n)).into_owned();
            phi.view_mut((step * n, 0), (n, n)).copy_from(&(&a_cl * prev_phi));
            let prev_g = gamma.view(((step - 1) * n, 0), (n, m)).into_owned();
            let mut g = &a_cl * prev_g;
            g.column_mut(step - 1).add_assign(&sys.b);
            gamma.view_mut((step * n, 0), (n, m)).copy_from(&g);
        }
        let mut psi = DMatrix::zeros(m, n);
        let mut theta = DMatrix::zeros(m, m);
        for step in 0..m {
            psi.row_mut(step).copy_from(&(-(k * phi.view((step * n, 0), (n, n)))));
            let mut row = -(k * gamma.view((step * n, 0), (n, m)));
            row[(0, step)] += 1.0;
            theta.row_mut(step).copy_from(&row);
        }
        let mut q_blk = DMatrix::zeros((m + 1) * n, (m + 1) * n);
        for step in 0..m {
            q_blk.view_mut((step * n, step * n), (n, n)).copy_from(&cfg.q_bar);
        }
        q_blk.view_mut((m * n, m * n), (n, n)).copy_from(&terminal.p_bar);
        let h = linalg::symmetrize(&((gamma.transpose() * &q_blk * &gamma + theta.transpose() * &theta * cfg.r_bar) * 2.0));
        let p_chol_t = if n == 0 {
            DMatrix::zeros(0, 0)
        } else {
            terminal
                .p_bar
                .clone()
                .cholesky()
                .ok_or_else(|| Error::InvalidConfig("terminal weight is not positive definite".into()))?
                .l()
                .transpose()
        };
        Ok(Self { cfg, sys, terminal, settings: QpSettings::default(), phi, gamma, psi, theta, q_blk, h, p_chol_t })
    }

    pub fn n0(&self) -> usize {
        self.sys.n0()
    }

    /// The condensed QP in `v` for initial state `z0`, with the constant
    /// term of the objective.
    pub fn build_qp(&self, z0: &DVector<f64>) -> (qp::QpProblem, f64) {
        let (n, m) = (self.n0(), self.cfg.horizon);
        let phi_z = &self.phi * z0;
        let psi_z = &self.psi * z0;
        let q = (self.gamma.transpose() * &self.q_blk * &phi_z + self.theta.transpose() * &psi_z * self.cfg.r_bar) * 2.0;
        let c0 = phi_z.dot(&(&self.q_blk * &phi_z)) + self.cfg.r_bar * psi_z.norm_squared();

        let sb = &self.cfg.state_box;
        let nz = sb.s.len();
        let rows = m + m * nz;
        let mut a = DMatrix::zeros(rows, m);
        let mut lo = DVector::zeros(rows);
        let mut hi = DVector::zeros(rows);
        a.rows_mut(0, m).copy_from(&self.theta);
        for i in 0..m {
            lo[i] = -self.cfg.u_max - psi_z[i];
            hi[i] = self.cfg.u_max - psi_z[i];
        }
        for step in 1..=m {
            let base = m + (step - 1) * nz;
            let sg = &sb.s_matrix * self.gamma.view((step * n, 0), (n, m));
            let sphi = &sb.s_matrix * phi_z.rows(step * n, n);
            a.rows_mut(base, nz).copy_from(&sg);
            for r in 0..nz {
                lo[base + r] = -sb.s[r] - sphi[r];
                hi[base + r] = sb.s[r] - sphi[r];
            }
        }
        let ball = qp::Ball {
            g: &self.p_chol_t * self.gamma.view((m * n, 0), (n, m)),
            center: -(&self.p_chol_t * phi_z.rows(m * n, n)),
            radius: self.terminal.c_f.sqrt(),
        };
        (qp::QpProblem { h: self.h.clone(), q, a, lo, hi, ball: Some(ball) }, c0)
    }

    pub fn solve(&self, z0: &[f64]) -> Result<MpcOutcome> {
        if z0.len() != self.n0() || z0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("initial state must be {} finite values", self.n0())));
        }
        let z0 = DVector::from_column_slice(z0);
        if !self.cfg.state_box.contains(&z0) {
            return Ok(MpcOutcome::Infeasible);
        }
        let (prob, c0) = self.build_qp(&z0);
        match qp::solve(&prob, &self.settings)? {
            qp::QpOutcome::Infeasible { .. } => Ok(MpcOutcome::Infeasible),
            qp::QpOutcome::Solved(sol) => {
                let u = (&self.psi * &z0 + &self.theta * &sol.x).iter().copied().collect();
                let kkt = prob.kkt_residual(&sol.x, &sol.y, &sol.y_ball);
                Ok(MpcOutcome::Optimal(MpcSolution {
                    u,
                    objective: sol.objective + c0,
                    iterations: sol.iterations,
                    kkt,
                }))
            }
        }
    }

    /// Predicted states `Z_0 … Z_M` under an input sequence.
    pub fn predict(&self, z0: &[f64], u: &[f64]) -> Vec<DVector<f64>> {
        let mut z = DVector::from_column_slice(z0);
        let mut out = vec![z.clone()];
        for &uk in u {
            z = self.sys.step(&z, uk);
            out.push(z.clone());
        }
        out
    }

    /// Cost of an input sequence under the MPC objective.
    pub fn cost(&self, z0: &[f64], u: &[f64]) -> f64 {
        let zs = self.predict(z0, u);
        let stage: f64 = zs[..u.len()].iter().zip(u).map(|(z, &uk)| z.dot(&(&self.cfg.q_bar * z)) + self.cfg.r_bar * uk * uk).sum();
        let zm = &zs[u.len()];
        stage + zm.dot(&(&self.terminal.p_bar * zm))
    }
}

/// One-shot form: builds the controller and solves once.
pub fn solve_mpc(z0: &[f64], cfg: &MpcConfig, sys: &DiscreteSystem) -> Result<MpcOutcome> {
    MpcController::new(cfg.clone(), sys.clone())?.solve(z0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub grid: Vec<usize>,
    pub bounds: Vec<f64>,
    pub horizon: usize,
    pub feasible: usize,
    pub infeasible: usize,
    pub solver_failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<f64>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn n0(&self) -> usize {
        self.states.first().map_or(self.meta.grid.len(), Vec::len)
    }

    pub fn write(&self, csv_path: &Path, meta_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(csv_path).map_err(|e| Error::Artifact(e.to_string()))?;
        let mut header: Vec<String> = (1..=self.n0()).map(|i| format!("z_{i}")).collect();
        header.push("u".into());
        w.write_record(&header).map_err(|e| Error::Artifact(e.to_string()))?;
        for (z, u) in self.states.iter().zip(&self.actions) {
            let rec: Vec<String> = z.iter().chain(std::iter::once(u)).map(|v| format!("{v:e}")).collect();
            w.write_record(&rec).map_err(|e| Error::Artifact(e.to_string()))?;
        }
        w.flush()?;
        std::fs::write(meta_path, serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn read(csv_path: &Path, meta_path: &Path) -> Result<Self> {
        let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(meta_path)?)?;
        let mut r = csv::Reader::from_path(csv_path).map_err(|e| Error::Artifact(e.to_string()))?;
        let n0 = meta.grid.len();
        let (mut states, mut actions) = (Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::Artifact(e.to_string()))?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Artifact(format!("bad dataset value {s:?}: {e}"))))
                .collect::<Result<_>>()?;
            if vals.len() != n0 + 1 {
                return Err(Error::Artifact(format!("dataset row has {} fields, expected {}", vals.len(), n0 + 1)));
            }
            actions.push(vals[n0]);
            states.push(vals[..n0].to_vec());
        }
        Ok(Self { states, actions, meta })
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Solves the MPC at every point of a uniform grid over the box and keeps
/// `(Z₀, u₀)` wherever a feasible solution exists.
pub fn generate_dataset(ctrl: &MpcController, grid: &[usize]) -> Result<Dataset> {
    let cube = ctrl.cfg.state_box.hypercube()?;
    if grid.len() != cube.dim() {
        return Err(Error::InvalidConfig(format!("grid has {} axes, state has {}", grid.len(), cube.dim())));
    }
    let axes: Vec<Vec<f64>> = (0..cube.dim()).map(|i| linspace(cube.lo[i], cube.hi[i], grid[i])).collect();
    let total: usize = grid.iter().product();
    let (mut states, mut actions) = (Vec::new(), Vec::new());
    let (mut infeasible, mut failures) = (0, 0);
    let mut idx = vec![0usize; grid.len()];
    for _ in 0..total {
        let z: Vec<f64> = idx.iter().enumerate().map(|(d, &i)| axes[d][i]).collect();
        match ctrl.solve(&z) {
            Ok(MpcOutcome::Optimal(s)) => {
                states.push(z);
                actions.push(s.u[0]);
            }
            Ok(MpcOutcome::Infeasible) => infeasible += 1,
            Err(Error::SolverFailure(_)) => failures += 1,
            Err(e) => return Err(e),
        }
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < grid[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    let meta = DatasetMeta {
        grid: grid.to_vec(),
        bounds: cube.hi.iter().copied().collect(),
        horizon: ctrl.cfg.horizon,
        feasible: actions.len(),
        infeasible,
        solver_failures: failures,
    };
    Ok(Dataset { states, actions, meta })
}
