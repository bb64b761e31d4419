//! One node of a multiscale fit: successes are counts in the left half,
//! trials the counts of the whole window, one entry per sample.

use msdiff::glm::{fit_binomial_node, GlmmOptions};
use msdiff::types::Covariate;

fn main() -> msdiff::Result<()> {
    let successes = [12u64, 9, 15, 4, 6, 3];
    let trials = [20u64, 18, 24, 19, 22, 15];
    let x = Covariate::groups(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0])?;

    for (name, opts) in [
        ("logistic", GlmmOptions::fixed_effects()),
        ("laplace", GlmmOptions::default()),
        (
            "quadrature",
            GlmmOptions {
                laplace_quadrature_points: 9,
                ..Default::default()
            },
        ),
    ] {
        let e = fit_binomial_node(&successes, &trials, &x, &opts)?;
        println!(
            "{name:>10}: beta {:.4} (se {:.4}), mu* {:.4} (se {:.4}), tau2 {:.4}, c {:.2}",
            e.beta_hat, e.se_beta, e.mu_star_hat, e.se_mu_star, e.tau2_hat, e.centering_constant
        );
    }
    Ok(())
}
