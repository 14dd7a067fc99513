//! Certified near-linear policy on the 20-mode plant: one trajectory from the
//! ellipsoid boundary, written as CSV, plus the field profile.

use std::path::Path;

use nalgebra::DVector;
use safe_il_pde::certify::{CertificateProblem, roa};
use safe_il_pde::mpc_expert::StateBox;
use safe_il_pde::nn_policy::Policy;
use safe_il_pde::sim::{decay_metrics, reconstruct_field, simulate_closed_loop, write_field_csv, DecaySeries, LyapunovWeights, ModalPlant, SimConfig};
use safe_il_pde::spectral::{build_truncated, SpectralModel};
use safe_il_pde::train::{current_sector, ntilde};

fn main() -> safe_il_pde::Result<()> {
    let model = SpectralModel::new(24.0, 2, 20, 10)?;
    let sys = build_truncated(&model, 2, 5.0)?;
    let sb = StateBox::symmetric(&[2.0, 40.0]);
    let gain: Vec<f64> = sys.place_poles(&[-15.0, -25.0])?.iter().map(|v| -v).collect();
    let policy = Policy::near_linear(&gain, 0.01)?;
    let nt = ntilde(&policy, &current_sector(&policy, &sb.hypercube()?)?)?;
    let (p, _) = CertificateProblem::new(&sys, &sb, 5.0, 0.1, &policy.layer_sizes())?.polish(&nt)?.lyapunov()?;
    let e = roa(&p)?;
    println!("ROA semi-axes {:?}", e.semi_axes);

    let plant = ModalPlant::new(&model, 2, 20)?;
    let mut z0 = vec![0.0; 20];
    z0[..2].copy_from_slice(e.boundary_point(&DVector::from_vec(vec![0.6, 0.8])).as_slice());
    let cfg = SimConfig::default();
    let traj = simulate_closed_loop(&plant, &policy, &z0, &LyapunovWeights { p, gamma: 1.0 }, &cfg)?;
    let d = decay_metrics(&traj, 5.0, DecaySeries::Retained)?;
    println!("{} samples, diverged {}, V(T)/V(0) = {:.3e}", traj.len(), traj.diverged, traj.v().last().unwrap() / traj.v()[0]);
    println!("fitted rate {:.2?}, worst envelope ratio {:.3}, decay satisfied {}", d.fitted_rate, d.worst_ratio, d.satisfied);

    let dir = std::env::temp_dir();
    traj.write_csv(&dir.join("trajectory.csv"))?;
    let x: Vec<f64> = (0..=50).map(|i| i as f64 / 50.0).collect();
    let snaps = reconstruct_field(&plant, &traj, &x, &[0, traj.len() / 10, traj.len() - 1])?;
    write_field_csv(&dir.join("field.csv"), &snaps)?;
    for s in &snaps {
        println!("t = {:.3}: w(1) = {:+.4}, u = {:+.4}", s.t, s.boundary, s.u);
    }
    println!("CSV files in {}", Path::new(&dir).display());
    Ok(())
}
