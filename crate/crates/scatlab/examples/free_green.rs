//! Free-space Green function: the Born series at Q = 0 terminates at
//! order zero and reproduces exp(ik|x-y|) / (4 pi |x-y|) exactly.

use num_complex::Complex64;
use rand::Rng;
use scatlab::born::{born_series_green, BornSettings};
use scatlab::fields::VectorField;
use scatlab::geom::{ComplexWavenumber, Point3};
use scatlab::rng::stream;

fn main() -> scatlab::Result<()> {
    let k = ComplexWavenumber::new(1.0, 0.5);
    let settings = BornSettings::default();
    let q = VectorField::zero();
    let mut rng = stream(7, 0);
    let mut sample = || {
        Point3::new(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
        )
    };

    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = sample();
        let mut y = sample();
        while x.sub(&y).norm() < 0.3 {
            y = sample();
        }
        let g = born_series_green(k, &q, &x, &y, &settings)?;
        let d = x.sub(&y).norm();
        let exact = (Complex64::i() * k.k() * d).exp() / (4.0 * std::f64::consts::PI * d);
        let rel = (g.value() - exact).norm() / exact.norm();
        worst = worst.max(rel);
        assert!(g.converged && g.orders.len() == 1);
    }
    println!("100 random (x, y) pairs at k = 1 + 0.5i");
    println!("worst relative error vs closed form: {worst:.3e}");
    Ok(())
}
