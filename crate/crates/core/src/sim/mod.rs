//! Many-mode closed-loop simulation of the modal plant, including the modes
//! neglected by the design model.

mod plot;

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mpc_expert::{MpcController, MpcOutcome};
use crate::nn_policy::Controller;
use crate::spectral::{lifting, Quadrature, SpectralModel};

pub use plot::{render_svg, PlotData, Series};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_sim: usize,
    pub h: f64,
    pub t_end: f64,
    /// Record every `stride`-th step.
    pub stride: usize,
    pub diverge_at: f64,
    pub roa_samples: usize,
    /// Part of `V` checked against the decay envelope in ROA validation.
    pub decay_series: DecaySeries,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { n_sim: 20, h: 1e-4, t_end: 2.0, stride: 10, diverge_at: 1e6, roa_samples: 20, decay_series: DecaySeries::Retained }
    }
}

impl SimConfig {
    pub fn validate(&self, n0: usize) -> Result<()> {
        if self.n_sim <= n0 {
            return Err(Error::InvalidConfig(format!("need more simulated modes than n0 = {n0}, got {}", self.n_sim)));
        }
        if !(self.h > 0.0) || !(self.t_end > 0.0) || self.stride == 0 || !(self.diverge_at > 0.0) {
            return Err(Error::InvalidConfig("step, horizon, stride and divergence level must be positive".into()));
        }
        Ok(())
    }
}

/// `ż_n = (−λ_n + q_c) z_n + β_n u` for `n = 1..=n_sim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalPlant {
    pub drift: DVector<f64>,
    pub beta: DVector<f64>,
    /// Lifting projections `b_n`, used to rebuild the boundary value.
    pub lift: DVector<f64>,
    pub n0: usize,
}

impl ModalPlant {
    pub fn new(model: &SpectralModel, n0: usize, n_sim: usize) -> Result<Self> {
        if n_sim > model.modes.len() {
            return Err(Error::InvalidConfig(format!("model holds {} modes, {n_sim} requested", model.modes.len())));
        }
        if n0 == 0 || n0 >= n_sim {
            return Err(Error::InvalidConfig(format!("need 0 < n0 < n_sim, got n0 = {n0}, n_sim = {n_sim}")));
        }
        let m = &model.modes[..n_sim];
        Ok(Self {
            drift: DVector::from_iterator(n_sim, m.iter().map(|m| m.drift(model.q_c))),
            beta: DVector::from_iterator(n_sim, m.iter().map(|m| m.beta)),
            lift: DVector::from_iterator(n_sim, m.iter().map(|m| m.b)),
            n0,
        })
    }

    pub fn n_sim(&self) -> usize {
        self.drift.len()
    }

    fn rhs(&self, z: &DVector<f64>, ctrl: &dyn Controller) -> (DVector<f64>, f64) {
        let u = ctrl.control(&z.as_slice()[..self.n0]);
        (self.drift.component_mul(z) + &self.beta * u, u)
    }
}

/// `V₁ = Z_{n₀}ᵀ P Z_{n₀}` and `V₂ = γ Σ_{n>n₀} z_n²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovWeights {
    pub p: DMatrix<f64>,
    pub gamma: f64,
}

impl LyapunovWeights {
    pub fn identity(n0: usize) -> Self {
        Self { p: DMatrix::identity(n0, n0), gamma: 1.0 }
    }

    fn split(&self, z: &DVector<f64>, n0: usize) -> (f64, f64) {
        let head = z.rows(0, n0);
        let v1 = (head.transpose() * &self.p * head)[0];
        let v2 = self.gamma * z.rows(n0, z.len() - n0).norm_squared();
        (v1, v2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub u: Vec<f64>,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub n0: usize,
    pub diverged: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn v(&self) -> Vec<f64> {
        self.v1.iter().zip(&self.v2).map(|(a, b)| a + b).collect()
    }

    pub fn last_state(&self) -> &[f64] {
        self.z.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// `Σ_{n>n₀} z_n²` per recorded step.
    pub fn tail_energy(&self) -> Vec<f64> {
        self.z.iter().map(|z| z[self.n0..].iter().map(|v| v * v).sum()).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let n = self.z.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Artifact(e.to_string()))?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("z_{i}")));
        header.extend(["u", "V1", "V2"].map(String::from));
        w.write_record(&header).map_err(|e| Error::Artifact(e.to_string()))?;
        for i in 0..self.len() {
            let mut row = vec![self.t[i]];
            row.extend(&self.z[i]);
            row.extend([self.u[i], self.v1[i], self.v2[i]]);
            w.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(|e| Error::Artifact(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Classical RK4 with the controller evaluated at every stage.
pub fn simulate_closed_loop(
    plant: &ModalPlant,
    ctrl: &dyn Controller,
    z0: &[f64],
    weights: &LyapunovWeights,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    let n = plant.n_sim();
    if z0.len() != n || z0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("initial state must hold {n} finite values")));
    }
    if weights.p.shape() != (plant.n0, plant.n0) {
        return Err(Error::InvalidInput("Lyapunov weight does not match n0".into()));
    }
    if !(cfg.h > 0.0) || !(cfg.t_end > 0.0) || cfg.stride == 0 {
        return Err(Error::InvalidConfig("step, horizon and stride must be positive".into()));
    }
    let steps = (cfg.t_end / cfg.h).round() as usize;
    let h = cfg.h;
    let mut z = DVector::from_column_slice(z0);
    let cap = steps / cfg.stride + 2;
    let mut tr = Trajectory {
        t: Vec::with_capacity(cap),
        z: Vec::with_capacity(cap),
        u: Vec::with_capacity(cap),
        v1: Vec::with_capacity(cap),
        v2: Vec::with_capacity(cap),
        n0: plant.n0,
        diverged: false,
    };
    let record = |tr: &mut Trajectory, t: f64, z: &DVector<f64>| {
        let u = ctrl.control(&z.as_slice()[..plant.n0]);
        let (v1, v2) = weights.split(z, plant.n0);
        tr.t.push(t);
        tr.z.push(z.as_slice().to_vec());
        tr.u.push(u);
        tr.v1.push(v1);
        tr.v2.push(v2);
    };
    record(&mut tr, 0.0, &z);
    for k in 1..=steps {
        let (k1, _) = plant.rhs(&z, ctrl);
        let (k2, _) = plant.rhs(&(&z + &k1 * (0.5 * h)), ctrl);
        let (k3, _) = plant.rhs(&(&z + &k2 * (0.5 * h)), ctrl);
        let (k4, _) = plant.rhs(&(&z + &k3 * h), ctrl);
        z += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let t = k as f64 * h;
        let bad = !(z.norm() <= cfg.diverge_at);
        if bad || k % cfg.stride == 0 || k == steps {
            if bad {
                tr.diverged = true;
                if z.iter().all(|v| v.is_finite()) {
                    record(&mut tr, t, &z);
                }
                break;
            }
            record(&mut tr, t, &z);
        }
    }
    Ok(tr)
}

/// Field samples at selected recorded steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSnapshot {
    pub t: f64,
    pub x: Vec<f64>,
    /// `Σ_n z_n Φ_n(x)`.
    pub z: Vec<f64>,
    /// `z(t, 1)` from `w = z + b u`, whose expansion vanishes at `x = 1`.
    pub boundary: f64,
    pub u: f64,
}

pub fn reconstruct_field(plant: &ModalPlant, traj: &Trajectory, x_grid: &[f64], steps: &[usize]) -> Result<Vec<FieldSnapshot>> {
    if x_grid.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::InvalidInput("field grid must lie in [0, 1]".into()));
    }
    let phi = |n: usize, x: f64| std::f64::consts::SQRT_2 * ((n as f64 - 0.5) * std::f64::consts::PI * x).cos();
    steps
        .iter()
        .map(|&i| {
            let zs = traj.z.get(i).ok_or_else(|| Error::InvalidInput(format!("step {i} not recorded")))?;
            let u = traj.u[i];
            let series = |x: f64, shift: f64| -> f64 {
                zs.iter().enumerate().map(|(k, zn)| (zn + shift * plant.lift[k]) * phi(k + 1, x)).sum()
            };
            let z = x_grid.iter().map(|&x| series(x, 0.0)).collect();
            let boundary = series(1.0, u) - lifting(1.0) * u;
            Ok(FieldSnapshot { t: traj.t[i], x: x_grid.to_vec(), z, boundary, u })
        })
        .collect()
}

/// `∫₀¹ z(x)² dx` of a modal state by quadrature.
pub fn field_energy(z: &[f64], quad: &Quadrature) -> Result<f64> {
    let phi = |n: usize, x: f64| std::f64::consts::SQRT_2 * ((n as f64 - 0.5) * std::f64::consts::PI * x).cos();
    quad.integrate(|x| {
        let v: f64 = z.iter().enumerate().map(|(k, zn)| zn * phi(k + 1, x)).sum();
        v * v
    })
}

pub fn write_field_csv(path: &Path, snaps: &[FieldSnapshot]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Artifact(e.to_string()))?;
    let mut header = vec!["x".to_string()];
    header.extend(snaps.iter().map(|s| format!("z_t{:.4}", s.t)));
    w.write_record(&header).map_err(|e| Error::Artifact(e.to_string()))?;
    if let Some(first) = snaps.first() {
        for (j, x) in first.x.iter().enumerate() {
            let mut row = vec![*x];
            row.extend(snaps.iter().map(|s| s.z[j]));
            w.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(|e| Error::Artifact(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Which part of `V` a decay check looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecaySeries {
    /// `V₁ + V₂`.
    Total,
    /// `V₁` alone.
    Retained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayMetrics {
    /// Least-squares slope of `−log V(t)`; `None` when `V(0) = 0`.
    pub fitted_rate: Option<f64>,
    /// `max_t V(t) / (V(0) e^{−2·0.9δt})`.
    pub worst_ratio: f64,
    pub satisfied: bool,
}

pub fn decay_metrics(traj: &Trajectory, delta: f64, series: DecaySeries) -> Result<DecayMetrics> {
    if traj.diverged {
        return Err(Error::InvalidInput("decay metrics need a non-diverged trajectory".into()));
    }
    let v = match series {
        DecaySeries::Total => traj.v(),
        DecaySeries::Retained => traj.v1.clone(),
    };
    let v0 = v.first().copied().unwrap_or(0.0);
    if v0 == 0.0 {
        let satisfied = v.iter().all(|&x| x == 0.0);
        return Ok(DecayMetrics { fitted_rate: None, worst_ratio: if satisfied { 0.0 } else { f64::INFINITY }, satisfied });
    }
    let rate = 2.0 * 0.9 * delta;
    let worst_ratio = v.iter().zip(&traj.t).map(|(x, t)| x / (v0 * (-rate * t).exp())).fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = v.iter().zip(&traj.t).filter(|(x, _)| **x > 0.0).map(|(x, t)| (*t, x.ln())).collect();
    let fitted_rate = (pts.len() >= 2).then(|| {
        let n = pts.len() as f64;
        let (mt, ml) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
        let cov: f64 = pts.iter().map(|(t, l)| (t - mt) * (l - ml)).sum();
        let var: f64 = pts.iter().map(|(t, _)| (t - mt).powi(2)).sum();
        -cov / var
    });
    Ok(DecayMetrics { fitted_rate, worst_ratio, satisfied: worst_ratio <= 1.0 + 1e-9 })
}

/// `n` points on `ZᵀPZ = 1`: `P^{-1/2}` applied to normalized Gaussian
/// directions.
pub fn ellipsoid_boundary_samples<R: Rng + ?Sized>(p: &DMatrix<f64>, n: usize, rng: &mut R) -> Result<Vec<DVector<f64>>> {
    let d = p.nrows();
    let sym = linalg::symmetrize(p);
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidInput("P must be positive definite".into()));
    }
    let inv_sqrt = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt())) * eig.eigenvectors.transpose();
    Ok((0..n)
        .map(|_| {
            let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let z = &inv_sqrt * g.normalize();
            let s = (z.transpose() * &sym * &z)[0].sqrt();
            z / s
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoaSample {
    pub z0: Vec<f64>,
    pub converged: bool,
    /// `‖Z_{n₀}(T)‖ / ‖Z_{n₀}(0)‖`.
    pub final_ratio: f64,
    pub decay: Option<DecayMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoaValidation {
    pub fraction_converged: f64,
    pub all_decay_satisfied: bool,
    pub samples: Vec<RoaSample>,
    #[serde(skip)]
    pub trajectories: Vec<Trajectory>,
}

/// Simulates from boundary points of `E(P)` with the neglected modes at rest.
pub fn roa_validation<R: Rng + ?Sized>(
    plant: &ModalPlant,
    ctrl: &dyn Controller,
    p: &DMatrix<f64>,
    gamma: f64,
    delta: f64,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<RoaValidation> {
    let n0 = plant.n0;
    let weights = LyapunovWeights { p: p.clone(), gamma };
    let mut trajectories = Vec::with_capacity(cfg.roa_samples);
    let samples = ellipsoid_boundary_samples(p, cfg.roa_samples, rng)?
        .into_iter()
        .map(|head| {
            let mut z0 = vec![0.0; plant.n_sim()];
            z0[..n0].copy_from_slice(head.as_slice());
            let tr = simulate_closed_loop(plant, ctrl, &z0, &weights, cfg)?;
            let end = DVector::from_column_slice(&tr.last_state()[..n0]).norm();
            let final_ratio = if tr.diverged { f64::INFINITY } else { end / head.norm() };
            let decay = if tr.diverged { None } else { Some(decay_metrics(&tr, delta, cfg.decay_series)?) };
            trajectories.push(tr);
            Ok(RoaSample { z0, converged: final_ratio < 1e-3, final_ratio, decay })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = samples.len().max(1) as f64;
    Ok(RoaValidation {
        fraction_converged: samples.iter().filter(|s| s.converged).count() as f64 / n,
        all_decay_satisfied: samples.iter().all(|s| s.decay.as_ref().is_some_and(|d| d.satisfied)),
        samples,
        trajectories,
    })
}

/// Receding-horizon use of the expert: first move of each solve, zero when
/// the QP is infeasible.
impl Controller for MpcController {
    fn control(&self, z: &[f64]) -> f64 {
        match self.solve(z) {
            Ok(MpcOutcome::Optimal(s)) => s.u[0],
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub nn_avg_s: f64,
    pub mpc_avg_s: f64,
    pub speedup: f64,
    pub nn_evals: usize,
    pub mpc_solves: usize,
}

/// Average wall-clock cost per control evaluation on the same states;
/// `nn_reps`, `mpc_reps` passes over `states`.
pub fn timing_benchmark(nn: &dyn Controller, mpc: &MpcController, states: &[Vec<f64>], nn_reps: usize, mpc_reps: usize) -> Result<TimingReport> {
    if states.is_empty() || nn_reps == 0 || mpc_reps == 0 {
        return Err(Error::InvalidInput("timing needs states and repetitions".into()));
    }
    let mut sink = 0.0;
    let t = Instant::now();
    for _ in 0..nn_reps {
        for z in states {
            sink += nn.control(std::hint::black_box(z));
        }
    }
    let nn_total = t.elapsed().as_secs_f64();
    let t = Instant::now();
    for _ in 0..mpc_reps {
        for z in states {
            sink += mpc.control(std::hint::black_box(z));
        }
    }
    let mpc_total = t.elapsed().as_secs_f64();
    std::hint::black_box(sink);
    let nn_evals = nn_reps * states.len();
    let mpc_solves = mpc_reps * states.len();
    let nn_avg_s = nn_total / nn_evals as f64;
    let mpc_avg_s = mpc_total / mpc_solves as f64;
    Ok(TimingReport { nn_avg_s, mpc_avg_s, speedup: mpc_avg_s / nn_avg_s, nn_evals, mpc_solves })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn_policy::OpenLoop;
    use crate::spectral::SpectralModel;

    fn plant() -> ModalPlant {
        ModalPlant::new(&SpectralModel::new(24.0, 2, 20, 10).unwrap(), 2, 20).unwrap()
    }

    #[test]
    fn single_stable_mode_decays_exponentially() {
        let pl = plant();
        let mut z0 = vec![0.0; 20];
        z0[2] = 1.0;
        let cfg = SimConfig { t_end: 0.1, ..SimConfig::default() };
        let tr = simulate_closed_loop(&pl, &OpenLoop, &z0, &LyapunovWeights::identity(2), &cfg).unwrap();
        let exact = (pl.drift[2] * 0.1).exp();
        assert!((tr.last_state()[2] - exact).abs() < 1e-8);
        assert!((tr.t.last().unwrap() - 0.1).abs() < 1e-12);
        let m = decay_metrics(&tr, 1.0, DecaySeries::Total).unwrap();
        let expected = -2.0 * pl.drift[2];
        assert!((m.fitted_rate.unwrap() - expected).abs() < 0.01 * expected);
    }

    #[test]
    fn zero_state_stays_zero() {
        let pl = plant();
        let tr = simulate_closed_loop(&pl, &OpenLoop, &[0.0; 20], &LyapunovWeights::identity(2), &SimConfig::default()).unwrap();
        assert!(tr.z.iter().flatten().all(|v| *v == 0.0));
        let m = decay_metrics(&tr, 5.0, DecaySeries::Total).unwrap();
        assert!(m.satisfied && m.fitted_rate.is_none());
        assert!(tr.t.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn fourth_order_convergence() {
        // Smooth reference: the three slowest modes, u ≡ 0, compared with
        // the exact exponential at several step sizes.
        let pl = plant();
        let mut z0 = vec![0.0; 20];
        z0[..3].copy_from_slice(&[1.0, -0.5, 0.25]);
        let t_end = 0.5;
        let err = |h: f64| {
            let cfg = SimConfig { h, t_end, stride: 1_000_000, ..SimConfig::default() };
            let tr = simulate_closed_loop(&pl, &OpenLoop, &z0, &LyapunovWeights::identity(2), &cfg).unwrap();
            (0..3).map(|i| (tr.last_state()[i] - z0[i] * (pl.drift[i] * t_end).exp()).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.02), err(0.01));
        let ratio = e1 / e2;
        assert!((ratio - 16.0).abs() < 0.2 * 16.0, "ratio {ratio}");
        let order = ratio.log2();
        assert!((3.5..=4.5).contains(&order));
    }

    #[test]
    fn open_loop_unstable_plant_trips_the_guard() {
        let pl = plant();
        let mut z0 = vec![0.0; 20];
        z0[0] = 1.0;
        let cfg = SimConfig { t_end: 2.0, diverge_at: 10.0, ..SimConfig::default() };
        let tr = simulate_closed_loop(&pl, &OpenLoop, &z0, &LyapunovWeights::identity(2), &cfg).unwrap();
        assert!(tr.diverged && tr.t.last().unwrap() < &2.0);
        assert!(tr.z.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn field_examples() {
        let pl = plant();
        let mut z0 = vec![0.0; 20];
        z0[0] = 1.0;
        let cfg = SimConfig { t_end: 1e-3, ..SimConfig::default() };
        let tr = simulate_closed_loop(&pl, &OpenLoop, &z0, &LyapunovWeights::identity(2), &cfg).unwrap();
        let f = reconstruct_field(&pl, &tr, &[0.0, 0.5, 1.0], &[0]).unwrap();
        assert!((f[0].z[0] - std::f64::consts::SQRT_2).abs() < 1e-14);
        assert!(f[0].z[2].abs() < 1e-14);
        let zero = Trajectory { t: vec![0.0], z: vec![vec![0.0; 20]], u: vec![0.0], v1: vec![0.0], v2: vec![0.0], n0: 2, diverged: false };
        assert!(reconstruct_field(&pl, &zero, &[0.0, 0.3], &[0]).unwrap()[0].z.iter().all(|v| *v == 0.0));
        assert!(reconstruct_field(&pl, &tr, &[1.5], &[0]).is_err());
    }

    #[test]
    fn parseval() {
        let z: Vec<f64> = (0..20).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let e = field_energy(&z, &Quadrature::default()).unwrap();
        let s: f64 = z.iter().map(|v| v * v).sum();
        assert!((e - s).abs() < 1e-8);
    }

    #[test]
    fn boundary_value_follows_the_input() {
        struct Const(f64);
        impl Controller for Const {
            fn control(&self, _z: &[f64]) -> f64 {
                self.0
            }
        }
        let pl = plant();
        let cfg = SimConfig { t_end: 1e-2, ..SimConfig::default() };
        let tr = simulate_closed_loop(&pl, &Const(0.7), &[0.1; 20], &LyapunovWeights::identity(2), &cfg).unwrap();
        let f = reconstruct_field(&pl, &tr, &[0.0, 1.0], &[0, tr.len() - 1]).unwrap();
        assert!(f.iter().all(|s| (s.boundary - s.u).abs() < 1e-6));
    }

    #[test]
    fn boundary_samples_lie_on_the_ellipsoid() {
        use rand::SeedableRng;
        let p = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for z in ellipsoid_boundary_samples(&p, 50, &mut rng).unwrap() {
            assert!(((z.transpose() * &p * &z)[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_ellipsoid_around_a_stable_origin_converges() {
        use rand::SeedableRng;
        // Shift q_c below λ₁ so that the plant is open-loop stable.
        let pl = ModalPlant::new(&SpectralModel::new(1.0, 2, 20, 10).unwrap(), 2, 20).unwrap();
        let p = DMatrix::identity(2, 2) * 1e6;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let cfg = SimConfig { t_end: 6.0, roa_samples: 5, stride: 100, ..SimConfig::default() };
        let r = roa_validation(&pl, &OpenLoop, &p, 1.0, 0.5, &cfg, &mut rng).unwrap();
        assert_eq!(r.fraction_converged, 1.0);
    }
}
