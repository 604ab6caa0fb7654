//! Walk-on-spheres harmonic measure on a triangle in the upper half
//! plane, plus the subharmonic entropy certificate for the free
//! indicator source.

use num_complex::Complex64;
use scatlab::fields::ScalarField;
use scatlab::geom::Point3;
use scatlab::quad::QuadratureSpec;
use scatlab::scattering::{
    entropy_certificate, free_amplitude, harmonic_measure, pick_k0, sphere_grid, TriangleDomain,
    WosOptions,
};

fn main() -> scatlab::Result<()> {
    let t = TriangleDomain::new(0.5, 1.5, 4.0)?;
    let spec = QuadratureSpec {
        n_theta: 6,
        n_phi: 8,
        n_radial: 6,
        refine_steps: 0,
        ..QuadratureSpec::default()
    };
    let f = ScalarField::new(|x: &Point3| if x.norm_sq() < 1.0 { 1.0 } else { 0.0 }, None);
    let (dirs, weights) = sphere_grid(4, 8);
    let norm_sq = |k: Complex64| -> scatlab::Result<f64> {
        let mut acc = 0.0;
        for (d, w) in dirs.iter().zip(&weights) {
            acc += w * free_amplitude(&f, k, d, &spec)?.norm_sqr();
        }
        Ok(acc)
    };

    let k0 = pick_k0(&f, &t, &spec)?;
    let omega = harmonic_measure(&t, k0, 50_000, 5, &WosOptions::default())?;
    println!("k0 = {:.4} + {:.4}i", k0.re, k0.im);
    println!("total harmonic-measure mass: {:.6}", omega.total_mass());
    for e in 0..3 {
        println!("  edge {e}: mass {:.4}", omega.edge_mass(e));
    }

    let nu_at_k0 = norm_sq(k0)?.sqrt().ln();
    let cert = entropy_certificate(
        &t,
        &omega,
        |z| Ok(norm_sq(z)?.sqrt().ln()),
        |k| Ok(k / std::f64::consts::PI * norm_sq(Complex64::new(k, 0.0))?),
        nu_at_k0,
        0.0,
        f64::INFINITY,
    )?;
    println!(
        "mean value gap (>= 0 up to MC error): {:.4e}",
        cert.mean_value_gap
    );
    println!("entropy lower bound: {:.6}", cert.entropy_integral);
    Ok(())
}
