//! Closed scattering loop on the free indicator source: resolvent ->
//! extracted far-field amplitude -> spectral density, checked against the
//! closed form A(k) = (sin k - k cos k) / k^3.

use scatlab::born::{solve_resolvent, BornSettings, RadialGrid};
use scatlab::fields::{ScalarField, VectorField};
use scatlab::geom::{directions_fibonacci, log_radii, ComplexWavenumber, Point3};
use scatlab::scattering::{amplitude_from_resolvent, spectral_density};

fn main() -> scatlab::Result<()> {
    let f = ScalarField::new(|x: &Point3| if x.norm_sq() < 1.0 { 1.0 } else { 0.0 }, None);
    let grid = RadialGrid::new(directions_fibonacci(16), log_radii(2.0, 24.0, 8))?;

    println!("k     |A| extracted  |A| closed form  density");
    for &tau in &[0.7, 1.0, 1.3] {
        let k = ComplexWavenumber::new(tau, 1e-2);
        let table = solve_resolvent(k, &VectorField::zero(), &f, &grid, &BornSettings::default())?;
        let amp = amplitude_from_resolvent(&table, 2.0)?;
        let got = amp.value(0).norm();
        let want = ((tau.sin() - tau * tau.cos()) / tau.powi(3)).abs();
        let s = spectral_density(&amp, tau)?;
        println!("{tau:<5} {got:<14.6e} {want:<16.6e} {:.6e}", s.density);
        assert!((got - want).abs() < 1e-3);
    }
    Ok(())
}
