//! Helmholtz reconstruction: build a vector field Q with div Q = V for a
//! Gaussian V and verify the divergence by central differences.

use scatlab::fields::{helmholtz_divergence_fd, helmholtz_reconstruct, ScalarField};
use scatlab::geom::Point3;
use scatlab::quad::QuadratureSpec;

fn main() -> scatlab::Result<()> {
    let v = ScalarField::gaussian(1.0, 1.0);
    let spec = QuadratureSpec {
        tol: 1e-7,
        refine_steps: 0,
        ..QuadratureSpec::default()
    };

    println!("x        |Q(x)|       div Q (FD)   V(x)         rel err");
    let mut worst = 0.0f64;
    for &r in &[0.6, 1.0, 1.6] {
        let x = Point3::new(r, 0.0, 0.0);
        let q = helmholtz_reconstruct(&v, &x, 1.0, &spec)?;
        let qn = (q.q[0].powi(2) + q.q[1].powi(2) + q.q[2].powi(2)).sqrt();
        let div = helmholtz_divergence_fd(&v, &x, 1.0, 0.05, &spec)?;
        let want = v.at(&x);
        let rel = (div - want).abs() / want.abs();
        worst = worst.max(rel);
        println!("{r:<8.2} {qn:<12.4e} {div:<12.4e} {want:<12.4e} {rel:.3e}");
    }
    println!("max relative error: {worst:.3e}");
    Ok(())
}
