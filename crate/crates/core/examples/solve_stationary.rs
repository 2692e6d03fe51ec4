//! Build a rate matrix, validate it and read off PCMC choice probabilities on
//! the whole universe and on a subset.

use pcmc::choice::{pcmc_distribution, solve_stationary, stationary_residual, RateMatrix};
use pcmc::Result;

fn main() -> Result<()> {
    // Rate of leaving i for j; larger q_ij means j is preferred to i.
    let q = RateMatrix::from_off_diagonal(
        4,
        [
            [0.0, 1.0, 0.5, 2.0],
            [0.4, 0.0, 1.5, 0.3],
            [1.2, 0.2, 0.0, 0.8],
            [0.6, 0.9, 0.7, 0.0],
        ]
        .concat(),
    )?;
    println!("valid: {}", q.validate().is_valid());

    let pi = solve_stationary(&q)?;
    println!("P_U       = {:.4?}", pi.probs());
    println!("residual  = {:.2e}", stationary_residual(&q, pi.probs()));

    for subset in [vec![0, 1], vec![1, 2, 3], vec![0, 3]] {
        println!("P_{subset:?} = {:.4?}", pcmc_distribution(&q, &subset)?.probs());
    }

    // Scaling every rate leaves the chain's stationary distribution unchanged.
    let fast = solve_stationary(&q.scaled(1000.0))?;
    let drift = fast.probs().iter().zip(pi.probs()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max |π(1000Q) − π(Q)| = {drift:.1e}");
    Ok(())
}
