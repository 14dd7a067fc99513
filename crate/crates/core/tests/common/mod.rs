#![allow(dead_code)]

use std::path::{Path, PathBuf};

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use nalgebra::DMatrix;
use safe_il_pde::cli::{ExperimentConfig, Run};
use safe_il_pde::mpc_expert::qp::QpProblem;
use safe_il_pde::mpc_expert::{discretize, MpcConfig, MpcController, StateBox};
use safe_il_pde::nn_policy::Policy;
use safe_il_pde::spectral::{build_truncated, SpectralModel, TruncatedSystem};

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn scenario(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&repo_root().join("configs").join(format!("scenario_{name}.json"))).unwrap()
}

pub fn run_in(cfg: ExperimentConfig, dir: &Path) -> Run {
    Run::new(cfg, Some(dir.to_path_buf()), None).unwrap()
}

pub fn sys(q_c: f64, n0: usize, delta: f64) -> TruncatedSystem {
    build_truncated(&SpectralModel::new(q_c, n0, 20, 200).unwrap(), n0, delta).unwrap()
}

pub fn mpc(n0: usize, horizon: usize, bounds: &[f64]) -> MpcController {
    let s = sys(24.0, n0, 5.0);
    let cfg = MpcConfig {
        horizon,
        q_bar: DMatrix::identity(n0, n0) * 2.0,
        r_bar: 1.0,
        dt: 0.01,
        u_max: 20.0,
        state_box: StateBox::symmetric(bounds),
    };
    MpcController::new(cfg, discretize(&s, 0.01).unwrap()).unwrap()
}

/// `tanh` network close to the pole-placement law `u = −Kz`.
pub fn near_linear(sys: &TruncatedSystem, poles: &[f64], eps: f64) -> Policy {
    let k = sys.place_poles(poles).unwrap();
    let gain: Vec<f64> = k.iter().map(|v| -v).collect();
    Policy::near_linear(&gain, eps).unwrap()
}

/// Interior-point reference for the condensed MPC QP.
pub fn reference_qp(p: &QpProblem) -> f64 {
    let n = p.h.nrows();
    let (mut pi, mut pj, mut pv) = (vec![], vec![], vec![]);
    for j in 0..n {
        for i in 0..=j {
            pi.push(i);
            pj.push(j);
            pv.push(0.5 * (p.h[(i, j)] + p.h[(j, i)]));
        }
    }
    let (mut ai, mut aj, mut av, mut b) = (vec![], vec![], vec![], vec![]);
    let mut push_row = |row: Vec<f64>, rhs: f64, b: &mut Vec<f64>| {
        let r = b.len();
        for (j, v) in row.into_iter().enumerate() {
            if v != 0.0 {
                ai.push(r);
                aj.push(j);
                av.push(v);
            }
        }
        b.push(rhs);
    };
    let mut m_lin = 0;
    for i in 0..p.a.nrows() {
        let row: Vec<f64> = p.a.row(i).iter().copied().collect();
        if p.hi[i].is_finite() {
            push_row(row.clone(), p.hi[i], &mut b);
            m_lin += 1;
        }
        if p.lo[i].is_finite() {
            push_row(row.iter().map(|v| -v).collect(), -p.lo[i], &mut b);
            m_lin += 1;
        }
    }
    let mut cones = vec![SupportedConeT::NonnegativeConeT(m_lin)];
    if let Some(ball) = &p.ball {
        push_row(vec![0.0; n], ball.radius, &mut b);
        for r in 0..ball.g.nrows() {
            push_row(ball.g.row(r).iter().map(|v| -v).collect(), -ball.center[r], &mut b);
        }
        cones.push(SupportedConeT::SecondOrderConeT(1 + ball.g.nrows()));
    }
    let pm = CscMatrix::new_from_triplets(n, n, pi, pj, pv);
    let am = CscMatrix::new_from_triplets(b.len(), n, ai, aj, av);
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_gap_abs(1e-11)
        .tol_gap_rel(1e-11)
        .tol_feas(1e-11)
        .build()
        .unwrap();
    let q: Vec<f64> = p.q.iter().copied().collect();
    let mut s = DefaultSolver::new(&pm, &q, &am, &b, &cones, settings).unwrap();
    s.solve();
    assert!(matches!(s.solution.status, SolverStatus::Solved | SolverStatus::AlmostSolved), "{:?}", s.solution.status);
    s.solution.obj_val
}
