//! Counts and intensities in multiscale form: half-sums per node, the
//! split proportions that generate an intensity vector, and the Poisson
//! likelihood written as a product of binomials.

use msdiff::mstransform::{
    factorized_loglik, forward_counts, intensity_from_multiscale, multiscale_from_intensity, nodes,
};

fn main() -> msdiff::Result<()> {
    let y = [3u64, 0, 5, 2, 8, 1, 0, 4];
    let table = forward_counts(&y)?;
    println!("total {}", table.total);
    for node in nodes(y.len()) {
        let (minus, plus) = table.half_sums(node);
        println!("scale {} location {}: {minus} | {plus}", node.scale, node.location);
    }

    let lambda = [2.0, 0.5, 4.0, 2.5, 6.0, 1.5, 0.5, 3.0];
    let params = multiscale_from_intensity(&lambda)?;
    println!("alpha {:.3?}", params.alpha);
    println!("back  {:.3?}", intensity_from_multiscale(&params)?);
    println!("log-likelihood {:.6}", factorized_loglik(&table, &params)?);
    Ok(())
}
