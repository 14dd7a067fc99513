//! Certifies a nearly linear `tanh` network built from a pole-placement gain,
//! for a few hidden-layer scalings.

use safe_il_pde::certify::{assemble_theorem_lhs, CertificateProblem};
use safe_il_pde::linalg;
use safe_il_pde::mpc_expert::StateBox;
use safe_il_pde::nn_policy::Policy;
use safe_il_pde::spectral::{build_truncated, SpectralModel};
use safe_il_pde::train::{current_sector, ntilde};

fn main() -> safe_il_pde::Result<()> {
    let sys = build_truncated(&SpectralModel::new(24.0, 2, 20, 10)?, 2, 5.0)?;
    let state_box = StateBox::symmetric(&[2.0, 40.0]);
    let k = sys.place_poles(&[-15.0, -25.0])?;
    println!("K = {:?}", k.as_slice());
    let gain: Vec<f64> = k.iter().map(|v| -v).collect();
    for eps in [0.1, 0.03, 0.01, 0.001] {
        let policy = Policy::near_linear(&gain, eps)?;
        let sector = current_sector(&policy, &state_box.hypercube()?)?;
        let nt = ntilde(&policy, &sector)?;
        let problem = CertificateProblem::new(&sys, &state_box, sys.delta, 0.1, &policy.layer_sizes())?;
        match problem.polish(&nt) {
            Ok(v) => {
                let (p, lam) = v.lyapunov()?;
                let lhs = assemble_theorem_lhs(&sys, &nt, &p, &lam, sys.delta, 0.1)?;
                println!(
                    "ε = {eps:<6} certified: log det H1 = {:.3}, λ_max(LHS) = {:.3e}",
                    linalg::logdet_spd(&v.h1)?,
                    linalg::max_eigenvalue(&lhs)
                );
            }
            Err(e) => println!("ε = {eps:<6} not certified: {e}"),
        }
    }
    Ok(())
}
