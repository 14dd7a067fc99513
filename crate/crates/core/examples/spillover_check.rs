//! Residual-mode verification for a certified policy at a fast and a slow
//! decay rate, with the recommended remedy.

use safe_il_pde::certify::{verify_residual, verify_residual_search, CertificateProblem, VerifyOptions};
use safe_il_pde::mpc_expert::StateBox;
use safe_il_pde::nn_policy::Policy;
use safe_il_pde::spectral::{build_truncated, SpectralModel};
use safe_il_pde::train::{current_sector, ntilde, recommend};

fn main() -> safe_il_pde::Result<()> {
    let model = SpectralModel::new(24.0, 2, 20, 200)?;
    let tail = model.tail_energy()?.partial_norm2;
    let sb = StateBox::symmetric(&[2.0, 40.0]);
    let opts = VerifyOptions::default();
    for delta in [5.0, 0.01] {
        let sys = build_truncated(&model, 2, delta)?;
        let gain: Vec<f64> = sys.place_poles(&[-15.0, -25.0])?.iter().map(|v| -v).collect();
        let policy = Policy::near_linear(&gain, 0.01)?;
        let nt = ntilde(&policy, &current_sector(&policy, &sb.hypercube()?)?)?;
        let (p, lam) = CertificateProblem::new(&sys, &sb, delta, 0.1, &policy.layer_sizes())?.polish(&nt)?.lyapunov()?;
        let r = verify_residual(&sys, &nt, &p, &lam, delta, 1.0, tail, sys.lambda_next, &opts)?;
        println!("δ = {delta}: feasible {}, α ∈ [{:?}, {:?}], nominal λ_max {:.3e}", r.feasible, r.alpha_min, r.alpha_max, r.nominal_max_eig);
        println!("  remedy {:?}, reason {}", recommend(&r), r.reason.as_deref().unwrap_or("-"));
        // The γ search only matters when the fixed choice fails.
        let s = verify_residual_search(&sys, &nt, &p, &lam, delta, 1.0, tail, sys.lambda_next, &opts)?;
        println!("  γ search: feasible {} at γ = {:.3e}", s.feasible, s.gamma);
    }
    Ok(())
}
