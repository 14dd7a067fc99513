//! Generate the MPC imitation dataset for scenario A on a 21×21 grid.

use std::time::Instant;

use nalgebra::DMatrix;
use safe_il_pde::mpc_expert::{discretize, generate_dataset, MpcConfig, MpcController, StateBox};
use safe_il_pde::spectral::{build_truncated, SpectralModel};

fn main() -> safe_il_pde::Result<()> {
    let model = SpectralModel::new(24.0, 2, 20, 200)?;
    let sys = build_truncated(&model, 2, 5.0)?;
    let cfg = MpcConfig {
        horizon: 20,
        q_bar: DMatrix::identity(2, 2) * 2.0,
        r_bar: 1.0,
        dt: 0.01,
        u_max: 20.0,
        state_box: StateBox::symmetric(&[2.0, 40.0]),
    };
    let ctrl = MpcController::new(cfg, discretize(&sys, 0.01)?)?;
    println!("terminal level c_f = {:.4}", ctrl.terminal.c_f);
    let t = Instant::now();
    let ds = generate_dataset(&ctrl, &[21, 21])?;
    println!(
        "{} feasible, {} infeasible, {} solver failures in {:.2?}",
        ds.meta.feasible, ds.meta.infeasible, ds.meta.solver_failures, t.elapsed()
    );
    Ok(())
}
