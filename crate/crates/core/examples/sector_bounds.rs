//! Interval propagation, local sectors and the loop transform for a random
//! 2×10×10 network on the scenario A box.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safe_il_pde::nn_policy::{isolate, loop_transform, propagate_bounds, sector_bounds, Hypercube, Policy};

fn main() -> safe_il_pde::Result<()> {
    let policy = Policy::random(2, &[10, 10], &mut ChaCha8Rng::seed_from_u64(1))?;
    let iso = isolate(&policy);
    let cube = Hypercube::symmetric(&[2.0, 40.0])?;
    let bounds = propagate_bounds(&iso, &cube)?;
    let sector = sector_bounds(&bounds)?;
    for i in 0..sector.len() {
        println!("neuron {i:>2}: ν ∈ [{:>8.3}, {:>8.3}]  sector [{:.4}, {:.1}]", sector.nu_lo[i], sector.nu_hi[i], sector.m[i], sector.r[i]);
    }
    let tp = loop_transform(&iso, &sector)?;
    let z = [1.2, -25.0];
    let out = tp.forward(&z)?;
    println!("u(z) = {:.6}, transformed = {:.6}, inside sectors: {}", policy.forward(&z)?, out.u, out.in_bounds);
    println!("Ñ is {}×{}", tp.ntilde().nrows(), tp.ntilde().ncols());
    Ok(())
}
