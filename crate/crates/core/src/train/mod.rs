//! Safe imitation learning: ADMM alternation between Adam updates of the
//! policy weights and convex certificate updates, tied together by the
//! coupling `𝓕(N) H = L` and its multiplier `Y`.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::certify::{self, Certificate, CertificateProblem, CertificateVars, LogdetMode, ResidualReport, VerifyOptions};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mpc_expert::{Dataset, StateBox};
use crate::nn_policy::{isolate, loop_transform, propagate_bounds, sector_bounds, transform_vjp, Hypercube, Policy, PolicyGradient, SectorBounds};
use crate::spectral::TruncatedSystem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub eta1: f64,
    pub eta2: f64,
    pub rho: f64,
    pub gamma: f64,
    pub tau: f64,
    /// Inner Adam epochs per outer iteration.
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub lr: f64,
    pub k_max: usize,
    pub tol_c: f64,
    pub tol_o: f64,
    /// Factor applied to `ρ` after an outer iteration that fails to shrink
    /// the consistency residual by `rho_shrink`; `1` keeps `ρ` fixed.
    pub rho_growth: f64,
    pub rho_shrink: f64,
    pub rho_max: f64,
    pub logdet: LogdetMode,
    pub sector: SectorMode,
    pub verify: VerifyOptions,
}

/// How the policy update treats the sector bounds behind `𝓕(N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectorMode {
    /// Held at their value from the start of the outer iteration.
    #[default]
    Frozen,
    /// Recomputed inside the coupling term; finite-difference gradient.
    Tracked,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![10, 10],
            eta1: 1.0,
            eta2: 200.0,
            rho: 1.0,
            gamma: 1.0,
            tau: 0.1,
            epochs: 400,
            pretrain_epochs: 500,
            lr: 1e-3,
            k_max: 60,
            tol_c: 1e-3,
            tol_o: 1e-4,
            rho_growth: 1.0,
            rho_shrink: 0.9,
            rho_max: 1e4,
            logdet: LogdetMode::Exact,
            sector: SectorMode::Frozen,
            verify: VerifyOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layers must be nonempty");
        }
        if !(self.rho > 0.0) || self.eta1 < 0.0 || self.eta2 < 0.0 || !(self.gamma > 0.0) {
            return bad("need ρ > 0, γ > 0 and nonnegative η weights");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("τ must lie in (0, 1)");
        }
        if !(self.rho_growth >= 1.0) || !(self.rho_shrink > 0.0 && self.rho_shrink <= 1.0) || !(self.rho_max >= self.rho) {
            return bad("need ρ growth ≥ 1, shrink in (0, 1] and ρ_max ≥ ρ");
        }
        if self.epochs == 0 || !(self.lr > 0.0) || !(self.tol_c > 0.0) || !(self.tol_o > 0.0) {
            return bad("epochs, step size and tolerances must be positive");
        }
        Ok(())
    }
}

/// `(1/|D|) Σ (π(Z) − u)²`.
pub fn imitation_loss(policy: &Policy, data: &Dataset) -> Result<f64> {
    check_data(policy, data)?;
    let s: f64 = data.states.iter().zip(&data.actions).map(|(z, u)| (policy.forward_unchecked(z) - u).powi(2)).sum();
    Ok(s / data.len() as f64)
}

fn check_data(policy: &Policy, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidInput("dataset is empty".into()));
    }
    if data.n0() != policy.input_dim() {
        return Err(Error::InvalidInput(format!("dataset has {} states, policy expects {}", data.n0(), policy.input_dim())));
    }
    Ok(())
}

fn imitation_grad(policy: &Policy, data: &Dataset) -> (f64, PolicyGradient) {
    let mut g = PolicyGradient::zeros_like(policy);
    let mut loss = 0.0;
    let n = data.len() as f64;
    for (z, u) in data.states.iter().zip(&data.actions) {
        let (v, gz) = policy.value_and_grad(z);
        let e = v - u;
        loss += e * e;
        g.axpy(2.0 * e / n, &gz);
    }
    (loss / n, g)
}

/// Sector bounds of `policy` over the state box.
pub fn current_sector(policy: &Policy, cube: &Hypercube) -> Result<SectorBounds> {
    sector_bounds(&propagate_bounds(&isolate(policy), cube)?)
}

/// `𝓕(N)` at a fixed sector.
pub fn ntilde(policy: &Policy, sector: &SectorBounds) -> Result<DMatrix<f64>> {
    Ok(loop_transform(&isolate(policy), sector)?.ntilde())
}

/// Exact augmented Lagrangian
/// `η₁𝓛(N) − η₂ logdet H₁ + tr(Yᵀ(𝓕(N)H − L)) + (ρ/2)‖𝓕(N)H − L‖²_F`.
#[allow(clippy::too_many_arguments)]
pub fn augmented_lagrangian(
    policy: &Policy,
    sector: &SectorBounds,
    vars: &CertificateVars,
    y: &DMatrix<f64>,
    rho: f64,
    eta1: f64,
    eta2: f64,
    data: &Dataset,
) -> Result<f64> {
    let logdet = linalg::logdet_spd(&vars.h1).map_err(|_| Error::InvalidCertificate("H1 is not positive definite".into()))?;
    let r = ntilde(policy, sector)? * vars.h_matrix() - vars.l_matrix();
    if y.shape() != r.shape() {
        return Err(Error::InvalidInput("multiplier shape does not match 𝓕(N)H − L".into()));
    }
    Ok(eta1 * imitation_loss(policy, data)? - eta2 * logdet + y.dot(&r) + 0.5 * rho * r.norm_squared())
}

/// Value and weight gradient of [`augmented_lagrangian`] with the sector held fixed.
#[allow(clippy::too_many_arguments)]
pub fn augmented_lagrangian_grad(
    policy: &Policy,
    sector: &SectorBounds,
    vars: &CertificateVars,
    y: &DMatrix<f64>,
    rho: f64,
    eta1: f64,
    eta2: f64,
    data: &Dataset,
) -> Result<(f64, PolicyGradient)> {
    check_data(policy, data)?;
    let logdet = linalg::logdet_spd(&vars.h1).map_err(|_| Error::InvalidCertificate("H1 is not positive definite".into()))?;
    let h = vars.h_matrix();
    let r = ntilde(policy, sector)? * &h - vars.l_matrix();
    if y.shape() != r.shape() {
        return Err(Error::InvalidInput("multiplier shape does not match 𝓕(N)H − L".into()));
    }
    let (mse, gm) = imitation_grad(policy, data);
    let g_nt = (y + &r * rho) * h.transpose();
    let mut g = transform_vjp(policy, sector, &g_nt)?;
    g.axpy(eta1, &gm);
    let value = eta1 * mse - eta2 * logdet + y.dot(&r) + 0.5 * rho * r.norm_squared();
    Ok((value, g))
}

/// Adaptive-moment optimizer over the policy weights; biases stay at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: PolicyGradient,
    v: PolicyGradient,
}

impl Adam {
    pub fn new(policy: &Policy, lr: f64) -> Self {
        let z = PolicyGradient::zeros_like(policy);
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: z.clone(), v: z }
    }

    pub fn step(&mut self, policy: &mut Policy, g: &PolicyGradient) -> Result<()> {
        if !(g.norm2().is_finite()) {
            return Err(Error::TrainingDiverged("non-finite gradient".into()));
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (lr, eps) = (self.lr, self.eps);
        let update = |w: &mut DMatrix<f64>, m: &mut DMatrix<f64>, v: &mut DMatrix<f64>, g: &DMatrix<f64>| {
            for i in 0..w.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        };
        for (l, ((m, v), g)) in policy.layers.iter_mut().zip(self.m.layers.iter_mut().zip(self.v.layers.iter_mut()).zip(&g.layers)) {
            update(&mut l.w, m, v, g);
        }
        update(&mut policy.output.w, &mut self.m.output, &mut self.v.output, &g.output);
        Ok(())
    }
}

/// Plain imitation descent, `nn_step` with `ρ = 0` and `Y = 0`.
pub fn pretrain(policy: &mut Policy, data: &Dataset, epochs: usize, lr: f64) -> Result<f64> {
    check_data(policy, data)?;
    let mut opt = Adam::new(policy, lr);
    for _ in 0..epochs {
        let (_, g) = imitation_grad(policy, data);
        opt.step(policy, &g)?;
    }
    imitation_loss(policy, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub k: usize,
    pub imitation: f64,
    pub logdet: f64,
    pub consistency: f64,
    pub psd_margin: f64,
    pub lagrangian: f64,
}

pub fn write_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Artifact(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Artifact(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AdmmState {
    pub policy: Policy,
    pub vars: CertificateVars,
    pub y: DMatrix<f64>,
    pub rho: f64,
    pub k: usize,
    pub sector: SectorBounds,
    pub history: Vec<HistoryRow>,
    pub adam: Adam,
}

impl AdmmState {
    pub fn new(policy: Policy, vars: CertificateVars, sector: SectorBounds, rho: f64, lr: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::InvalidConfig("ρ must be positive".into()));
        }
        let y = DMatrix::zeros(1 + policy.n_phi(), policy.input_dim() + policy.n_phi());
        let adam = Adam::new(&policy, lr);
        Ok(Self { policy, vars, y, rho, k: 0, sector, history: Vec::new(), adam })
    }

    /// `𝓕(N)H − L`.
    pub fn residual(&self) -> Result<DMatrix<f64>> {
        Ok(ntilde(&self.policy, &self.sector)? * self.vars.h_matrix() - self.vars.l_matrix())
    }
}

/// `E` Adam passes on the augmented Lagrangian with `H`, `L`, `Y` and the
/// sector frozen.
pub fn nn_step(state: &mut AdmmState, data: &Dataset, epochs: usize, eta1: f64, eta2: f64) -> Result<()> {
    if epochs == 0 {
        return Err(Error::InvalidConfig("need at least one epoch".into()));
    }
    for _ in 0..epochs {
        let (v, g) = augmented_lagrangian_grad(&state.policy, &state.sector, &state.vars, &state.y, state.rho, eta1, eta2, data)?;
        if !v.is_finite() {
            return Err(Error::TrainingDiverged("augmented Lagrangian is not finite".into()));
        }
        state.adam.step(&mut state.policy, &g)?;
    }
    Ok(())
}

/// Coupling part `tr(YᵀR) + (ρ/2)‖R‖²` of the augmented Lagrangian with the
/// sector recomputed from the weights.
fn coupling_tracked(policy: &Policy, cube: &Hypercube, vars: &CertificateVars, y: &DMatrix<f64>, rho: f64) -> Result<f64> {
    let r = ntilde(policy, &current_sector(policy, cube)?)? * vars.h_matrix() - vars.l_matrix();
    Ok(y.dot(&r) + 0.5 * rho * r.norm_squared())
}

/// Central-difference weight gradient of [`coupling_tracked`].
pub fn coupling_tracked_grad(policy: &Policy, cube: &Hypercube, vars: &CertificateVars, y: &DMatrix<f64>, rho: f64) -> Result<PolicyGradient> {
    let mut g = PolicyGradient::zeros_like(policy);
    let mut p = policy.clone();
    let nl = policy.layers.len();
    for li in 0..=nl {
        let len = if li < nl { policy.layers[li].w.len() } else { policy.output.w.len() };
        for k in 0..len {
            let w0 = if li < nl { policy.layers[li].w[k] } else { policy.output.w[k] };
            let h = 1e-6 * (1.0 + w0.abs());
            let mut eval = |w: f64| -> Result<f64> {
                if li < nl { p.layers[li].w[k] = w } else { p.output.w[k] = w }
                coupling_tracked(&p, cube, vars, y, rho)
            };
            let d = (eval(w0 + h)? - eval(w0 - h)?) / (2.0 * h);
            eval(w0)?;
            if li < nl { g.layers[li][k] = d } else { g.output[k] = d }
        }
    }
    Ok(g)
}

/// [`nn_step`] with the sector following the weights at every epoch.
pub fn nn_step_tracked(state: &mut AdmmState, data: &Dataset, cube: &Hypercube, epochs: usize, eta1: f64) -> Result<()> {
    for _ in 0..epochs {
        let (_, gm) = imitation_grad(&state.policy, data);
        let mut g = coupling_tracked_grad(&state.policy, cube, &state.vars, &state.y, state.rho)?;
        g.axpy(eta1, &gm);
        state.adam.step(&mut state.policy, &g)?;
    }
    Ok(())
}

/// `Y ← Y + ρ(𝓕(N)H − L)`; returns the new multiplier.
pub fn multiplier_update(state: &mut AdmmState) -> Result<DMatrix<f64>> {
    let r = state.residual()?;
    state.y += r * state.rho;
    Ok(state.y.clone())
}

/// Structured recommendation when the spillover check fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Remedy {
    /// Extend the design model by the next stable mode.
    AddMode,
    /// Widen the gap `λ_{n₀+1} − q_c − δ` (smaller `δ` or more modes).
    IncreaseDeltaMargin,
    /// Certify a smaller state box.
    ShrinkBox,
}

pub fn recommend(report: &ResidualReport) -> Option<Remedy> {
    if report.feasible {
        None
    } else if report.nominal_max_eig > 0.0 {
        Some(Remedy::ShrinkBox)
    } else if report.alpha_min.is_none() {
        Some(Remedy::IncreaseDeltaMargin)
    } else {
        Some(Remedy::AddMode)
    }
}

/// Everything the training loop reads but does not own.
#[derive(Debug, Clone, Copy)]
pub struct TrainContext<'a> {
    pub sys: &'a TruncatedSystem,
    pub state_box: &'a StateBox,
    pub data: &'a Dataset,
    pub tail_norm2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub converged: bool,
    pub iterations: usize,
    pub pretrain_loss: f64,
    pub final_imitation: f64,
    pub final_consistency: f64,
    /// Whether the exact-coupling refinement succeeded.
    pub polished: bool,
    pub polish_error: Option<String>,
    pub residual: ResidualReport,
    pub remedy: Option<Remedy>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub sector: SectorBounds,
    pub ntilde: DMatrix<f64>,
    pub certificate: Certificate,
    pub history: Vec<HistoryRow>,
    pub report: TrainReport,
}

fn record(state: &mut AdmmState, data: &Dataset, cfg: &TrainConfig, margin: f64) -> Result<()> {
    let row = HistoryRow {
        k: state.k,
        imitation: imitation_loss(&state.policy, data)?,
        logdet: linalg::logdet_spd(&state.vars.h1)?,
        consistency: state.residual()?.norm(),
        psd_margin: margin,
        lagrangian: augmented_lagrangian(&state.policy, &state.sector, &state.vars, &state.y, state.rho, cfg.eta1, cfg.eta2, data)?,
    };
    if !row.lagrangian.is_finite() {
        return Err(Error::TrainingDiverged(format!("augmented Lagrangian diverged at k = {}", state.k)));
    }
    state.history.push(row);
    Ok(())
}

/// Full alternation from a given initial policy, then the final refinement
/// and the spillover check.
pub fn train(cfg: &TrainConfig, ctx: TrainContext, initial: Policy) -> Result<TrainOutcome> {
    cfg.validate()?;
    let sys = ctx.sys;
    let cube = ctx.state_box.hypercube()?;
    let mut policy = initial;
    let pretrain_loss = pretrain(&mut policy, ctx.data, cfg.pretrain_epochs, cfg.lr)?;

    let mut problem = CertificateProblem::new(sys, ctx.state_box, sys.delta, cfg.tau, &policy.layer_sizes())?;
    problem.logdet = cfg.logdet;
    let center = problem.interior_point().map_err(|e| Error::InitializationInfeasible(e.to_string()))?;
    let sector = current_sector(&policy, &cube)?;
    let y0 = DMatrix::zeros(1 + policy.n_phi(), policy.input_dim() + policy.n_phi());
    let first = problem
        .step(&ntilde(&policy, &sector)?, &y0, cfg.rho, cfg.eta2, &center.h1)
        .map_err(|e| Error::InitializationInfeasible(e.to_string()))?;
    let mut state = AdmmState::new(policy, first.vars, sector, cfg.rho, cfg.lr)?;
    multiplier_update(&mut state)?;
    record(&mut state, ctx.data, cfg, first.lmi_margin)?;

    let mut converged = false;
    while state.k < cfg.k_max {
        state.k += 1;
        match cfg.sector {
            SectorMode::Frozen => nn_step(&mut state, ctx.data, cfg.epochs, cfg.eta1, cfg.eta2)?,
            SectorMode::Tracked => nn_step_tracked(&mut state, ctx.data, &cube, cfg.epochs, cfg.eta1)?,
        }
        state.sector = current_sector(&state.policy, &cube)?;
        let nt = ntilde(&state.policy, &state.sector)?;
        let h1_prev = state.vars.h1.clone();
        let out = problem.step(&nt, &state.y, state.rho, cfg.eta2, &h1_prev)?;
        if out.lmi_margin < 1e-7 {
            return Err(Error::SolverFailure(format!("certificate step margin {:.3e} below ε", out.lmi_margin)));
        }
        state.vars = out.vars;
        multiplier_update(&mut state)?;
        let prev = state.history.last().map(|r| r.lagrangian).unwrap_or(f64::NAN);
        record(&mut state, ctx.data, cfg, out.lmi_margin)?;
        let last = state.history.last().unwrap();
        let rel = (last.lagrangian - prev).abs() / last.lagrangian.abs().max(1.0);
        if last.consistency < cfg.tol_c && rel < cfg.tol_o {
            converged = true;
            break;
        }
        let before = state.history[state.history.len() - 2].consistency;
        if last.consistency > cfg.rho_shrink * before {
            state.rho = (state.rho * cfg.rho_growth).min(cfg.rho_max);
        }
    }

    let nt = ntilde(&state.policy, &state.sector)?;
    let (vars, polished, polish_error) = match problem.polish(&nt) {
        Ok(v) => (v, true, None),
        Err(e) => (state.vars.clone(), false, Some(e.to_string())),
    };
    let mut certificate = Certificate::new(sys, ctx.state_box, &nt, vars, sys.delta, cfg.tau, cfg.gamma)?;
    let residual = certify::verify_residual_search(
        sys,
        &nt,
        &certificate.p,
        &certificate.lambda,
        sys.delta,
        cfg.gamma,
        ctx.tail_norm2,
        sys.lambda_next,
        &cfg.verify,
    )?;
    certificate.gamma = residual.gamma;
    certificate.alpha = residual.alpha_star;
    let last = state.history.last().unwrap();
    let report = TrainReport {
        converged,
        iterations: state.k,
        pretrain_loss,
        final_imitation: last.imitation,
        final_consistency: last.consistency,
        polished,
        polish_error,
        remedy: recommend(&residual),
        residual,
    };
    Ok(TrainOutcome { policy: state.policy, sector: state.sector, ntilde: nt, certificate, history: state.history, report })
}

/// Rebuilds `𝓕(N)` from the weights alone and checks the theorem form.
pub fn audit(policy: &Policy, sys: &TruncatedSystem, sb: &StateBox, cert: &Certificate) -> Result<f64> {
    let sector = current_sector(policy, &sb.hypercube()?)?;
    let nt = ntilde(policy, &sector)?;
    Ok(linalg::max_eigenvalue(&certify::assemble_theorem_lhs(sys, &nt, &cert.p, &cert.lambda, cert.delta, cert.tau)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc_expert::DatasetMeta;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn meta() -> DatasetMeta {
        DatasetMeta { grid: vec![], bounds: vec![], horizon: 0, feasible: 0, infeasible: 0, solver_failures: 0 }
    }

    fn data(states: Vec<Vec<f64>>, actions: Vec<f64>) -> Dataset {
        Dataset { states, actions, meta: meta() }
    }

    fn small() -> (Policy, Dataset, SectorBounds, CertificateVars) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Policy::random(2, &[2, 3], &mut rng).unwrap();
        let d = data(vec![vec![0.3, -1.0], vec![-0.5, 2.0], vec![1.0, 0.4]], vec![0.2, -1.0, 0.7]);
        let sector = current_sector(&p, &Hypercube::symmetric(&[2.0, 4.0]).unwrap()).unwrap();
        let nt = ntilde(&p, &sector).unwrap();
        let mut v = CertificateVars::coupled(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]), DVector::from_vec(vec![0.5, 1.5, 1.0, 2.0, 0.7]), &nt);
        v.l4[(3, 1)] += 0.2;
        v.l1[(0, 0)] -= 0.1;
        (p, d, sector, v)
    }

    #[test]
    fn imitation_examples() {
        let (p, _, _, _) = small();
        let z = vec![vec![0.1, 0.2], vec![-0.3, 0.4]];
        let u: Vec<f64> = z.iter().map(|z| p.forward(z).unwrap()).collect();
        assert_eq!(imitation_loss(&p, &data(z.clone(), u)).unwrap(), 0.0);
        let mut zero = p.clone();
        zero.output.w.fill(0.0);
        assert_eq!(imitation_loss(&zero, &data(vec![vec![1.0, 1.0]], vec![1.0])).unwrap(), 1.0);
        assert!(imitation_loss(&p, &data(vec![], vec![])).is_err());
    }

    #[test]
    fn lagrangian_expansion() {
        let (p, d, sector, v) = small();
        let nt = ntilde(&p, &sector).unwrap();
        let e = nt * v.h_matrix() - v.l_matrix();
        let y = DMatrix::from_fn(e.nrows(), e.ncols(), |i, j| (i as f64 - j as f64) * 0.1);
        let ld = v.h1.determinant().ln();
        let manual: f64 = -200.0 * ld + (0..e.len()).map(|i| y[i] * e[i]).sum::<f64>() + 0.5 * 2.0 * (0..e.len()).map(|i| e[i] * e[i]).sum::<f64>();
        let al = augmented_lagrangian(&p, &sector, &v, &y, 2.0, 0.0, 200.0, &d).unwrap();
        assert!((al - manual).abs() < 1e-10 * manual.abs().max(1.0));
        let al4 = augmented_lagrangian(&p, &sector, &v, &y, 4.0, 0.0, 200.0, &d).unwrap();
        assert!((al4 - al - 0.5 * 2.0 * e.norm_squared()).abs() < 1e-10);
        let mut bad = v.clone();
        bad.h1[(0, 0)] = -1.0;
        assert!(matches!(augmented_lagrangian(&p, &sector, &bad, &y, 1.0, 1.0, 1.0, &d), Err(Error::InvalidCertificate(_))));
    }

    #[test]
    fn lagrangian_vanishes_on_consistent_pair() {
        let (p, d, sector, _) = small();
        let nt = ntilde(&p, &sector).unwrap();
        let v = CertificateVars::coupled(DMatrix::identity(2, 2) * 3.0, DVector::from_element(5, 1.0), &nt);
        let y = DMatrix::from_element(6, 7, 5.0);
        let al = augmented_lagrangian(&p, &sector, &v, &y, 1.0, 2.0, 3.0, &d).unwrap();
        let expect = 2.0 * imitation_loss(&p, &d).unwrap() - 3.0 * 9f64.ln();
        assert!((al - expect).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (p, d, sector, v) = small();
        let y = DMatrix::from_fn(6, 7, |i, j| ((i * 7 + j) as f64).sin());
        let (rho, e1, e2) = (1.5, 2.0, 1.0);
        let (_, g) = augmented_lagrangian_grad(&p, &sector, &v, &y, rho, e1, e2, &d).unwrap();
        let f = |q: &Policy| augmented_lagrangian(q, &sector, &v, &y, rho, e1, e2, &d).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut check = |analytic: f64, plus: Policy, minus: Policy| {
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            worst = worst.max((analytic - fd).abs() / fd.abs().max(1e-3));
        };
        for l in 0..p.layers.len() {
            for i in 0..p.layers[l].w.len() {
                let (mut a, mut b) = (p.clone(), p.clone());
                a.layers[l].w[i] += h;
                b.layers[l].w[i] -= h;
                check(g.layers[l][i], a, b);
            }
        }
        for i in 0..p.output.w.len() {
            let (mut a, mut b) = (p.clone(), p.clone());
            a.output.w[i] += h;
            b.output.w[i] -= h;
            check(g.output[i], a, b);
        }
        assert!(worst < 1e-5, "max relative error {worst:e}");
    }

    #[test]
    fn multiplier_update_examples() {
        let (p, _, sector, v) = small();
        let nt = ntilde(&p, &sector).unwrap();
        let exact = CertificateVars::coupled(v.h1.clone(), v.h2.clone(), &nt);
        let mut s = AdmmState::new(p.clone(), exact, sector.clone(), 1.0, 1e-3).unwrap();
        s.y = DMatrix::from_element(6, 7, 0.5);
        let y0 = s.y.clone();
        multiplier_update(&mut s).unwrap();
        assert!((&s.y - &y0).amax() < 1e-12);
        multiplier_update(&mut s).unwrap();
        assert!((&s.y - &y0).amax() < 1e-12);
        let mut s = AdmmState::new(p, v, sector, 1.0, 1e-3).unwrap();
        let e = s.residual().unwrap();
        multiplier_update(&mut s).unwrap();
        assert!((&s.y - e).amax() < 1e-15);
    }

    #[test]
    fn plain_imitation_descends() {
        let (p, d, sector, v) = small();
        let mut s = AdmmState::new(p, v, sector, 1e-12, 1e-3).unwrap();
        s.rho = f64::MIN_POSITIVE;
        let before = imitation_loss(&s.policy, &d).unwrap();
        nn_step(&mut s, &d, 50, 1.0, 0.0).unwrap();
        let after = imitation_loss(&s.policy, &d).unwrap();
        assert!(after < before);
    }

    #[test]
    fn remedies() {
        let base = ResidualReport {
            feasible: false,
            gamma: 1.0,
            alpha_star: None,
            alpha_min: Some(0.1),
            alpha_max: Some(0.01),
            nominal_max_eig: -1.0,
            condition_i_max_eig: None,
            gamma_star_max_eig: None,
            required_scaling: Some(10.0),
            reason: None,
        };
        assert_eq!(recommend(&base), Some(Remedy::AddMode));
        assert_eq!(recommend(&ResidualReport { alpha_min: None, ..base.clone() }), Some(Remedy::IncreaseDeltaMargin));
        assert_eq!(recommend(&ResidualReport { nominal_max_eig: 1.0, ..base.clone() }), Some(Remedy::ShrinkBox));
        assert_eq!(recommend(&ResidualReport { feasible: true, ..base }), None);
        assert_eq!(serde_json::to_string(&Remedy::AddMode).unwrap(), "\"add_mode\"");
    }
}
