//! Quadrature sweeps validating the damped-kernel integral bounds:
//! sphere integrals against their (delta, rho, |x|) shapes, and the
//! exterior-lens integral's exponential gain in delta |x|.

use scatlab::quad::QuadratureSpec;
use scatlab::verify::{default_lemma_grids, lemma1_sweep, lemma2_sweep};

fn main() -> scatlab::Result<()> {
    let (deltas, rhos, x_norms) = default_lemma_grids();
    let spec = QuadratureSpec::default().fast();
    let sweep1 = lemma1_sweep(&deltas, &rhos, &x_norms, &spec)?;
    println!("sphere bounds over {} grid points", sweep1.triples.len());
    for (i, (c, s)) in sweep1
        .constants
        .iter()
        .zip(&sweep1.ratio_spread)
        .enumerate()
    {
        println!("  bound {i}: constant {c:.3}, per-|x| spread {s:.3}");
    }
    println!("  stable within factor 2: {}", sweep1.pass);

    let sweep2 = lemma2_sweep(&[0.35, 0.5, 0.7], &[4.0, 8.0, 16.0])?;
    println!(
        "exterior lens: fitted gamma = {:.4} (r^2 = {:.4}), expected about 4/3",
        sweep2.gamma.unwrap(),
        sweep2.r_squared.unwrap()
    );
    println!("  gain exceeds e^(-delta |x|): {}", sweep2.pass);
    Ok(())
}
