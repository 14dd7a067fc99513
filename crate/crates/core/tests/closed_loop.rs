//! Many-mode simulation and verification with a certified near-linear policy.

mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use safe_il_pde::certify::{verify_residual, Certificate, CertificateProblem, VerifyOptions};
use safe_il_pde::mpc_expert::StateBox;
use safe_il_pde::nn_policy::Policy;
use safe_il_pde::sim::{decay_metrics, reconstruct_field, roa_validation, simulate_closed_loop, DecaySeries, LyapunovWeights, ModalPlant, SimConfig};
use safe_il_pde::spectral::{SpectralModel, TruncatedSystem};
use safe_il_pde::train::{current_sector, ntilde, recommend, Remedy};

fn certified(delta: f64) -> (TruncatedSystem, Policy, Certificate) {
    let sys = common::sys(24.0, 2, delta);
    let sb = StateBox::symmetric(&[2.0, 40.0]);
    let pol = common::near_linear(&sys, &[-15.0, -25.0], 0.01);
    let nt = ntilde(&pol, &current_sector(&pol, &sb.hypercube().unwrap()).unwrap()).unwrap();
    let prob = CertificateProblem::new(&sys, &sb, delta, 0.1, &pol.layer_sizes()).unwrap();
    let vars = prob.polish(&nt).unwrap();
    let cert = Certificate::new(&sys, &sb, &nt, vars, delta, 0.1, 1.0).unwrap();
    assert!(cert.psd_margins.theorem < 0.0 && cert.psd_margins.lmi > 1e-7);
    (sys, pol, cert)
}

fn plant(n_sim: usize) -> ModalPlant {
    ModalPlant::new(&SpectralModel::new(24.0, 2, n_sim, 10).unwrap(), 2, n_sim).unwrap()
}

fn boundary_start(cert: &Certificate, n_sim: usize) -> Vec<f64> {
    let e = cert.roa().unwrap();
    let z = e.boundary_point(&nalgebra::DVector::from_vec(vec![0.6, 0.8]));
    let mut z0 = vec![0.0; n_sim];
    z0[..2].copy_from_slice(z.as_slice());
    z0
}

#[test]
fn certified_policy_converges_from_the_roa_boundary() {
    let (_, pol, cert) = certified(5.0);
    let cfg = SimConfig { roa_samples: 20, ..SimConfig::default() };
    let r = roa_validation(&plant(20), &pol, &cert.p, 1.0, 5.0, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(r.fraction_converged, 1.0);
    assert!(r.all_decay_satisfied, "{:?}", r.samples.iter().map(|s| s.decay.as_ref().map(|d| d.worst_ratio)).collect::<Vec<_>>());
}

#[test]
fn spillover_stays_bounded_and_decays() {
    let (_, pol, cert) = certified(5.0);
    let tr = simulate_closed_loop(&plant(20), &pol, &boundary_start(&cert, 20), &LyapunovWeights { p: cert.p.clone(), gamma: 1.0 }, &SimConfig::default()).unwrap();
    assert!(!tr.diverged);
    let tail = tr.tail_energy();
    let peak = tail.iter().cloned().fold(0.0, f64::max);
    assert!(peak.is_finite() && peak > 0.0);
    let late = tail[tail.len() / 2..].iter().cloned().fold(0.0, f64::max);
    assert!(late < 1e-2 * peak, "{late} vs {peak}");
    assert!(*tail.last().unwrap() < 1e-3 * peak, "{} vs {peak}", tail.last().unwrap());
}

#[test]
fn negated_policy_diverges() {
    let (_, pol, cert) = certified(5.0);
    let z0 = boundary_start(&cert, 20);
    let w = LyapunovWeights { p: cert.p.clone(), gamma: 1.0 };
    let good = simulate_closed_loop(&plant(20), &pol, &z0, &w, &SimConfig::default()).unwrap();
    let bad = simulate_closed_loop(&plant(20), &pol.negated(), &z0, &w, &SimConfig::default()).unwrap();
    let v_end = |t: &safe_il_pde::sim::Trajectory| *t.v().last().unwrap();
    assert!(bad.diverged || v_end(&bad) > 1e3 * v_end(&good));
    assert!(decay_metrics(&good, 5.0, DecaySeries::Retained).unwrap().satisfied);
}

#[test]
fn field_meets_the_boundary_input() {
    let (_, pol, cert) = certified(5.0);
    for n_sim in [20, 50] {
        let pl = plant(n_sim);
        let cfg = SimConfig { n_sim, h: 2e-5, t_end: 0.2, stride: 100, ..SimConfig::default() };
        let tr = simulate_closed_loop(&pl, &pol, &boundary_start(&cert, n_sim), &LyapunovWeights { p: cert.p.clone(), gamma: 1.0 }, &cfg).unwrap();
        let steps: Vec<usize> = (0..tr.len()).step_by(10).collect();
        for s in reconstruct_field(&pl, &tr, &[0.0, 0.5, 1.0], &steps).unwrap() {
            assert!((s.boundary - s.u).abs() < 1e-6, "t = {}: {} vs {}", s.t, s.boundary, s.u);
        }
    }
}

#[test]
fn small_decay_leaves_spillover_unverified_and_asks_for_a_mode() {
    let (sys, pol, cert) = certified(0.01);
    let sb = StateBox::symmetric(&[2.0, 40.0]);
    let nt = ntilde(&pol, &current_sector(&pol, &sb.hypercube().unwrap()).unwrap()).unwrap();
    let tail = SpectralModel::new(24.0, 2, 20, 200).unwrap().tail_energy().unwrap().partial_norm2;
    let r = verify_residual(&sys, &nt, &cert.p, &cert.lambda, 0.01, 1.0, tail, sys.lambda_next, &VerifyOptions::default()).unwrap();
    assert!(!r.feasible);
    assert!(r.nominal_max_eig < 0.0);
    assert_eq!(recommend(&r), Some(Remedy::AddMode));
}
