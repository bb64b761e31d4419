//! Adaptive shrinkage of noisy estimates toward zero with a spike-and-slab
//! prior learned from the data.

use msdiff::ebshrink::{build_sigma_grid, fit_mixture_em, posterior_moments, EmOptions, GridPolicy, NormalObservation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> msdiff::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let slab = Normal::new(0.0, 2.0).unwrap();
    let noise = Normal::new(0.0, 1.0).unwrap();
    let obs: Vec<NormalObservation> = (0..2000)
        .map(|i| {
            let beta = if i % 4 == 0 { slab.sample(&mut rng) } else { 0.0 };
            NormalObservation::new(beta + noise.sample(&mut rng), 1.0)
        })
        .collect();

    let grid = build_sigma_grid(&obs, &GridPolicy::default())?;
    let fit = fit_mixture_em(&obs, &grid, &EmOptions::default());
    println!(
        "{} grid points from {:.3} to {:.3}",
        grid.len(),
        grid[0],
        grid[grid.len() - 1]
    );
    println!(
        "pi0 {:.3} after {} iterations, log-likelihood {:.3}",
        fit.prior.pi0(),
        fit.iterations,
        fit.loglik
    );

    for est in [0.5, 2.0, 4.0] {
        let p = posterior_moments(&NormalObservation::new(est, 1.0), &fit.prior);
        println!(
            "estimate {est}: posterior mean {:.3}, sd {:.3}, P(zero) {:.3}",
            p.mean,
            p.variance.sqrt(),
            p.prob_zero
        );
    }
    Ok(())
}
