//! Average network evaluation against average MPC solve on the same states.

use safe_il_pde::mpc_expert::{discretize, MpcConfig, MpcController, StateBox};
use safe_il_pde::nn_policy::Policy;
use safe_il_pde::sim::timing_benchmark;
use safe_il_pde::spectral::{build_truncated, SpectralModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> safe_il_pde::Result<()> {
    let sys = build_truncated(&SpectralModel::new(24.0, 2, 20, 10)?, 2, 5.0)?;
    let cfg = MpcConfig {
        horizon: 20,
        q_bar: nalgebra::DMatrix::identity(2, 2) * 2.0,
        r_bar: 1.0,
        dt: 0.01,
        u_max: 20.0,
        state_box: StateBox::symmetric(&[2.0, 40.0]),
    };
    let mpc = MpcController::new(cfg, discretize(&sys, 0.01)?)?;
    let policy = Policy::random(2, &[10, 10], &mut ChaCha8Rng::seed_from_u64(0))?;
    let states: Vec<Vec<f64>> = (0..50).map(|i| vec![0.03 * i as f64 - 0.75, 0.5 * i as f64 - 12.0]).collect();
    let t = timing_benchmark(&policy, &mpc, &states, 200, 2)?;
    println!("NN  {:.3e} s over {} evaluations", t.nn_avg_s, t.nn_evals);
    println!("MPC {:.3e} s over {} solves", t.mpc_avg_s, t.mpc_solves);
    println!("speedup {:.0}x", t.speedup);
    Ok(())
}
