//! Safe imitation training on scenario A and the resulting certificate.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safe_il_pde::mpc_expert::{discretize, generate_dataset, MpcConfig, MpcController, StateBox};
use safe_il_pde::nn_policy::Policy;
use safe_il_pde::spectral::{build_truncated, tail_energy, SpectralModel};
use safe_il_pde::train::{train, TrainConfig, TrainContext};

fn main() -> safe_il_pde::Result<()> {
    let model = SpectralModel::new(24.0, 2, 220, 200)?;
    let sys = build_truncated(&model, 2, 5.0)?;
    let state_box = StateBox::symmetric(&[2.0, 40.0]);
    let cfg = MpcConfig {
        horizon: 20,
        q_bar: DMatrix::identity(2, 2) * 2.0,
        r_bar: 1.0,
        dt: 0.01,
        u_max: 20.0,
        state_box: state_box.clone(),
    };
    let ctrl = MpcController::new(cfg, discretize(&sys, 0.01)?)?;
    let data = generate_dataset(&ctrl, &[21, 21])?;
    let tail = tail_energy(&model, 2, 200)?;

    let t = Instant::now();
    let tc = TrainConfig::default();
    let init = Policy::random(2, &tc.hidden, &mut ChaCha8Rng::seed_from_u64(7))?;
    let out = train(&tc, TrainContext { sys: &sys, state_box: &state_box, data: &data, tail_norm2: tail.partial_norm2 }, init)?;
    for r in &out.history {
        println!(
            "k={:>2} mse={:.4e} logdet={:.4} ‖ÑH−L‖={:.3e} margin={:.2e} 𝓛a={:.6e}",
            r.k, r.imitation, r.logdet, r.consistency, r.psd_margin, r.lagrangian
        );
    }
    println!("{}", serde_json::to_string_pretty(&out.report)?);
    println!("margins {:?}", out.certificate.psd_margins);
    println!("elapsed {:.2?}", t.elapsed());
    Ok(())
}
