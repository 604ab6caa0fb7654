//! Born series for a bump-divergence field: in the contraction regime
//! the first-order correction |G - G0| scales linearly in the field
//! strength eta.

use scatlab::born::{born_series_green, free_green, smallness_ratio, BornSettings};
use scatlab::fields::VectorField;
use scatlab::geom::{ComplexWavenumber, Point3};

// Base amplitude chosen so eta = 1/4 sits at smallness ratio about 0.1.
const BASE: f64 = 0.09;

fn main() -> scatlab::Result<()> {
    let k = ComplexWavenumber::new(1.0, 0.5);
    let settings = BornSettings::default();
    let x = Point3::new(3.0, 0.5, -0.5);
    let y = Point3::new(-2.0, 1.0, 0.5);
    let g0 = free_green(&x, &y, k.k())?;

    println!("eta    smallness   |G - G0|     ratio to eta = 1");
    let mut base = 0.0;
    for &eta in &[1.0, 0.5, 0.25] {
        let q = VectorField::bump_gradient(BASE * eta);
        let small = smallness_ratio(&q, k.delta, settings.c_cal)?;
        let g = born_series_green(k, &q, &x, &y, &settings)?;
        assert!(g.converged);
        let diff = (g.value() - g0).norm();
        if eta == 1.0 {
            base = diff;
        }
        println!("{eta:<6} {small:<11.4e} {diff:<12.4e} {:.4}", diff / base);
    }
    println!("linear first-order response: ratios track eta");
    Ok(())
}
