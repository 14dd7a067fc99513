//! Modal data of the reaction-diffusion plant and the truncation for two
//! decay rates.

use safe_il_pde::spectral::{build_truncated, mode_split, SpectralModel};

fn main() -> safe_il_pde::Result<()> {
    let q_c = 24.0;
    let model = SpectralModel::new(q_c, 2, 20, 200)?;
    println!("{:>3} {:>10} {:>12} {:>10}", "n", "lambda", "rate", "beta");
    for m in model.modes.iter().take(6) {
        println!("{:>3} {:>10.4} {:>12.4} {:>10.4}", m.n, m.lambda, m.drift(q_c), m.beta);
    }
    let tail = model.tail_energy()?;
    println!("tail ‖β‖² over {} modes = {:.4e} (last-term ratio {:.3})", tail.n_tail, tail.partial_norm2, tail.last_ratio);
    for delta in [5.0, 0.01, 0.1] {
        let n0 = mode_split(q_c, delta)?;
        let sys = build_truncated(&model, n0, delta)?;
        println!("δ = {delta:<5} n0 = {n0}, A = {:?}, B = {:?}, next rate {:.3}", sys.a.as_slice(), sys.b.as_slice(), sys.lambda_next);
    }
    Ok(())
}
