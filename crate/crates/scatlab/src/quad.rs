//! Product quadrature on spheres and balls, singularity-adapted rules, and
//! damped exterior integration with certifiable truncation.
//!
//! One set of rules serves double duty: the production engine, and (at
//! multiplied node counts) the independent brute-force oracle for every
//! integral checked elsewhere in the crate. Summation order is fixed
//! (node-index order), so results are bit-identical run to run.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point3;

/// Node counts and tolerances for the product rules.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Gauss-Legendre nodes in the polar angle (cos-theta variable).
    pub n_theta: usize,
    /// Trapezoid nodes in the azimuth (spectrally accurate for periodic integrands).
    pub n_phi: usize,
    /// Gauss-Legendre nodes per radial panel.
    pub n_radial: usize,
    /// Radial panel length in field units.
    pub panel_len: f64,
    /// Refinement steps for the attached error estimate (0 = no estimate).
    pub refine_steps: usize,
    /// Absolute tolerance target for refinement.
    pub tol: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            n_theta: 12,
            n_phi: 24,
            n_radial: 8,
            panel_len: 1.0,
            refine_steps: 1,
            tol: 1e-8,
        }
    }
}

impl QuadratureSpec {
    /// Same rule with all node counts multiplied; the oracle configuration.
    pub fn refined(&self, factor: usize) -> QuadratureSpec {
        QuadratureSpec {
            n_theta: self.n_theta * factor,
            n_phi: self.n_phi * factor,
            n_radial: self.n_radial * factor,
            panel_len: self.panel_len,
            refine_steps: self.refine_steps,
            tol: self.tol,
        }
    }

    /// Single-pass configuration (no refinement estimate); used on hot paths
    /// where the caller tracks accuracy globally.
    pub fn fast(&self) -> QuadratureSpec {
        QuadratureSpec {
            refine_steps: 0,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_theta < 4 || self.n_phi < 4 {
            return Err(Error::Parameter(
                "sphere rule needs n_theta, n_phi >= 4".into(),
            ));
        }
        if self.tol <= 0.0 {
            return Err(Error::Parameter("tol must be positive".into()));
        }
        Ok(())
    }
}

/// Quadrature value plus diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadResult {
    pub value_re: f64,
    pub value_im: f64,
    /// |last refinement difference|; 0 when refine_steps = 0.
    pub error_estimate: f64,
    pub nodes: usize,
    /// Exterior truncation radius, when one was chosen.
    pub truncation_radius: Option<f64>,
}

impl QuadResult {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.value_re, self.value_im)
    }

    fn new(value: Complex64, err: f64, nodes: usize) -> Self {
        QuadResult {
            value_re: value.re,
            value_im: value.im,
            error_estimate: err,
            nodes,
            truncation_radius: None,
        }
    }
}

/// The three-region decomposition used throughout the decay analysis:
/// for a base point x, the ball |y| < 2|x|/3 around the origin, its shift
/// |y - x| < 2|x|/3 around x, and the exterior region Upsilon where both
/// |y| and |y - x| exceed 2|x|/3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionTag {
    Near,
    Shifted,
    Upsilon,
}

impl RegionTag {
    /// Classify y relative to x (priority order: Near, Shifted, Upsilon).
    pub fn classify(x: &Point3, y: &Point3) -> RegionTag {
        let r = 2.0 * x.norm() / 3.0;
        if y.norm() < r {
            RegionTag::Near
        } else if y.sub(x).norm() < r {
            RegionTag::Shifted
        } else {
            RegionTag::Upsilon
        }
    }

    /// Membership test (regions overlap; classify() breaks the tie).
    pub fn contains(&self, x: &Point3, y: &Point3) -> bool {
        let r = 2.0 * x.norm() / 3.0;
        match self {
            RegionTag::Near => y.norm() < r,
            RegionTag::Shifted => y.sub(x).norm() < r,
            RegionTag::Upsilon => y.norm() > r && y.sub(x).norm() > r,
        }
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_n and P_n'.
            let mut p0 = 1.0;
            let mut p1 = x;
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// One pass of the sphere product rule: Gauss-Legendre in cos(theta) times
/// trapezoid in phi, on the sphere |y| = rho.
fn sphere_once<F>(f: &F, rho: f64, n_theta: usize, n_phi: usize) -> (Complex64, usize)
where
    F: Fn(&Point3) -> Complex64 + ?Sized,
{
    let (mu, wmu) = gauss_legendre(n_theta);
    let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
    let mut sum = Complex64::new(0.0, 0.0);
    for (i, &m) in mu.iter().enumerate() {
        let s = (1.0 - m * m).max(0.0).sqrt();
        for j in 0..n_phi {
            let phi = dphi * j as f64;
            let y = Point3::new(rho * s * phi.cos(), rho * s * phi.sin(), rho * m);
            sum += f(&y) * wmu[i];
        }
    }
    (sum * rho * rho * dphi, n_theta * n_phi)
}

/// Surface integral over the sphere |y| = rho.
pub fn integrate_sphere<F>(f: &F, rho: f64, spec: &QuadratureSpec) -> Result<QuadResult>
where
    F: Fn(&Point3) -> Complex64 + ?Sized,
{
    spec.validate()?;
    if rho <= 0.0 {
        return Err(Error::Parameter(format!("sphere radius {rho} <= 0")));
    }
    let (mut value, mut nodes) = sphere_once(f, rho, spec.n_theta, spec.n_phi);
    let mut err = 0.0;
    for step in 0..spec.refine_steps {
        let factor = 2usize << step;
        let (v2, n2) = sphere_once(f, rho, spec.n_theta * factor, spec.n_phi * factor);
        err = (v2 - value).norm();
        value = v2;
        nodes += n2;
        if err < spec.tol {
            let mut r = QuadResult::new(value, err, nodes);
            r.error_estimate = err;
            return Ok(r);
        }
    }
    if spec.refine_steps > 0 && err >= spec.tol {
        return Err(Error::Accuracy {
            context: format!("sphere integral at rho = {rho}"),
            achieved: err,
            wanted: spec.tol,
        });
    }
    Ok(QuadResult::new(value, err, nodes))
}

/// One pass of a radial-panel by sphere rule over a ball around `center`.
/// `radial_power` is the power of r multiplying the Jacobian-combined
/// integrand: 2 for a plain volume integral, 1 when a 1/|y - center|
/// singularity has been cancelled.
#[allow(clippy::too_many_arguments)]
fn ball_once<F>(
    f: &F,
    center: &Point3,
    radius: f64,
    radial_power: i32,
    n_radial: usize,
    panel_len: f64,
    n_theta: usize,
    n_phi: usize,
) -> (Complex64, usize)
where
    F: Fn(&Point3) -> Complex64 + ?Sized,
{
    let (gr, gw) = gauss_legendre(n_radial);
    let n_panels = (radius / panel_len).ceil().max(1.0) as usize;
    let h = radius / n_panels as f64;
    let mut sum = Complex64::new(0.0, 0.0);
    let mut nodes = 0;
    for p in 0..n_panels {
        let a = p as f64 * h;
        for (ri, &t) in gr.iter().enumerate() {
            let r = a + 0.5 * h * (t + 1.0);
            let jac = r.powi(radial_power) * 0.5 * h * gw[ri];
            let (shell_r, n_r) = sphere_once(
                &|y_unit: &Point3| f(&center.add(&y_unit.scale(r))),
                1.0,
                n_theta,
                n_phi,
            );
            sum += shell_r * jac;
            nodes += n_r;
        }
    }
    (sum, nodes)
}

/// Integral over the ball B(center, radius) of f_smooth(y) / |y - center|.
/// Spherical coordinates about the center cancel the singularity; no node
/// ever lands on it.
pub fn integrate_ball_singular<F>(
    f_smooth: &F,
    center: &Point3,
    radius: f64,
    spec: &QuadratureSpec,
) -> Result<QuadResult>
where
    F: Fn(&Point3) -> Complex64 + ?Sized,
{
    integrate_ball_power(f_smooth, center, radius, 1, spec)
}

/// Integral over B(center, radius) of f_smooth(y) / |y - center|^2; the full
/// Jacobian is spent cancelling the kernel magnitude (Newtonian-gradient case).
pub fn integrate_ball_singular_r2<F>(
    f_smooth: &F,
    center: &Point3,
    radius: f64,
    spec: &QuadratureSpec,
) -> Result<QuadResult>
where
    F: Fn(&Point3) -> Complex64 + ?Sized,
{
    integrate_ball_power(f_smooth, center, radius, 0, spec)
}

/// Plain volume integral over the ball B(center, radius) of a smooth f.
pub fn integrate_ball_smooth<F>(
    f: &F,
    center: &Point3,
    radius: f64,
    spec: &QuadratureSpec,
) -> Result<QuadResult>
where
    F: Fn(&Point3) -> Complex64 + ?Sized,
{
    integrate_ball_power(f, center, radius, 2, spec)
}

fn integrate_ball_power<F>(
    f: &F,
    center: &Point3,
    radius: f64,
    radial_power: i32,
    spec: &QuadratureSpec,
) -> Result<QuadResult>
where
    F: Fn(&Point3) -> Complex64 + ?Sized,
{
    spec.validate()?;
    if radius <= 0.0 {
        return Err(Error::Parameter(format!("ball radius {radius} <= 0")));
    }
    let (mut value, mut nodes) = ball_once(
        f,
        center,
        radius,
        radial_power,
        spec.n_radial,
        spec.panel_len,
        spec.n_theta,
        spec.n_phi,
    );
    let mut err = 0.0;
    for step in 0..spec.refine_steps {
        let factor = 2usize << step;
        let (v2, n2) = ball_once(
            f,
            center,
            radius,
            radial_power,
            spec.n_radial * factor,
            spec.panel_len,
            spec.n_theta * factor,
            spec.n_phi * factor,
        );
        err = (v2 - value).norm();
        value = v2;
        nodes += n2;
        if err < spec.tol {
            return Ok(QuadResult::new(value, err, nodes));
        }
    }
    if spec.refine_steps > 0 && err >= spec.tol {
        return Err(Error::Accuracy {
            context: "ball integral".into(),
            achieved: err,
            wanted: spec.tol,
        });
    }
    Ok(QuadResult::new(value, err, nodes))
}

/// Truncation radius R* such that bound * 4pi * int_{R*}^inf r^2 e^{-delta r} dr < tol.
pub fn exterior_truncation_radius(bound: f64, damping_delta: f64, tol: f64) -> Result<f64> {
    if damping_delta <= 0.0 {
        return Err(Error::Divergence(format!(
            "exterior integral needs positive damping, got delta = {damping_delta}"
        )));
    }
    if bound <= 0.0 {
        return Ok(1.0);
    }
    let tail = |r: f64| {
        let d = damping_delta;
        bound
            * 4.0
            * std::f64::consts::PI
            * (-d * r).exp()
            * (r * r / d + 2.0 * r / (d * d) + 2.0 / (d * d * d))
    };
    let mut r = 1.0;
    while tail(r) >= tol {
        r *= 1.5;
        if r > 1e6 {
            return Err(Error::Divergence(
                "exterior truncation radius exceeds 1e6; damping too weak for the bound".into(),
            ));
        }
    }
    Ok(r)
}

/// Integral of f over R^3, truncated at the radius where the analytic
/// exponential tail bound |f(y)| <= bound * e^{-damping_delta |y|}
/// guarantees the discarded tail is below tol.
pub fn integrate_exterior<F>(
    f: &F,
    damping_delta: f64,
    bound: f64,
    spec: &QuadratureSpec,
) -> Result<QuadResult>
where
    F: Fn(&Point3) -> Complex64 + ?Sized,
{
    spec.validate()?;
    let r_star = exterior_truncation_radius(bound, damping_delta, spec.tol)?;
    // Panels no longer than one damping length, so the exponential is resolved.
    let mut local = spec.clone();
    local.panel_len = spec.panel_len.min(1.0 / damping_delta);
    let mut out = integrate_ball_power(f, &Point3::ZERO, r_star, 2, &local)?;
    out.truncation_radius = Some(r_star);
    Ok(out)
}

/// Adaptive Simpson on [a, b]; the 1D oracle used against the 3D rules.
pub fn adaptive_simpson_1d<F>(f: &F, a: f64, b: f64, tol: f64) -> f64
where
    F: Fn(f64) -> f64 + ?Sized,
{
    fn simpson<F: Fn(f64) -> f64 + ?Sized>(f: &F, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
    }
    fn recurse<F: Fn(f64) -> f64 + ?Sized>(
        f: &F,
        a: f64,
        b: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let left = simpson(f, a, m);
        let right = simpson(f, m, b);
        if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, m, left, tol / 2.0, depth - 1)
                + recurse(f, m, b, right, tol / 2.0, depth - 1)
        }
    }
    let whole = simpson(f, a, b);
    recurse(f, a, b, whole, tol, 40)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn sphere_area() {
        let spec = QuadratureSpec::default();
        let v = integrate_sphere(&|_: &Point3| c(1.0), 2.0, &spec).unwrap();
        assert_abs_diff_eq!(v.value().re, 16.0 * PI, epsilon = 1e-10);
    }

    #[test]
    fn sphere_odd_integrand_vanishes() {
        let spec = QuadratureSpec::default();
        let v = integrate_sphere(&|y: &Point3| c(y.x1), 3.0, &spec).unwrap();
        assert_abs_diff_eq!(v.value().re, 0.0, epsilon = 1e-10);
    }

    // The damped sphere integrand of the decay lemmas reduces to an
    // elementary 1D antiderivative; that closed form is the oracle.
    #[test]
    fn sphere_damped_matches_closed_form() {
        let rho = 2.0;
        let xn = 10.0;
        let delta = 0.5;
        let x = Point3::new(0.0, 0.0, xn);
        let spec = QuadratureSpec {
            n_theta: 48,
            n_phi: 8,
            ..Default::default()
        };
        let v = integrate_sphere(
            &|y: &Point3| c((-delta * (x.sub(y).norm() + y.norm())).exp()),
            rho,
            &spec,
        )
        .unwrap();
        // Substituting s = |x - y| turns the polar integral into
        // (2 pi rho / |x|) e^{-delta rho} int_{|x|-rho}^{|x|+rho} s e^{-delta s} ds.
        let anti = |s: f64| -(-delta * s).exp() * (s / delta + 1.0 / (delta * delta));
        let exact = 2.0 * PI * rho / xn * (-delta * rho).exp() * (anti(xn + rho) - anti(xn - rho));
        assert_abs_diff_eq!(v.value().re, exact, epsilon = 1e-8);
    }

    #[test]
    fn singular_ball_exact_radial() {
        let spec = QuadratureSpec::default();
        let r = 1.7;
        let v = integrate_ball_singular(&|_: &Point3| c(1.0), &Point3::ZERO, r, &spec).unwrap();
        assert_abs_diff_eq!(v.value().re, 2.0 * PI * r * r, epsilon = 1e-9);
    }

    #[test]
    fn singular_ball_cancelled_singularity_gives_volume() {
        let spec = QuadratureSpec::default();
        let r = 1.3;
        let center = Point3::new(0.5, -0.25, 1.0);
        let v = integrate_ball_singular(&|y: &Point3| c(y.sub(&center).norm()), &center, r, &spec)
            .unwrap();
        assert_abs_diff_eq!(v.value().re, 4.0 * PI * r * r * r / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn singular_ball_gaussian_matches_1d_oracle() {
        let spec = QuadratureSpec::default();
        let v = integrate_ball_singular(
            &|y: &Point3| c((-y.norm_sq()).exp()),
            &Point3::ZERO,
            3.0,
            &spec,
        )
        .unwrap();
        let oracle = 4.0 * PI * adaptive_simpson_1d(&|r: f64| r * (-r * r).exp(), 0.0, 3.0, 1e-12);
        assert_abs_diff_eq!(v.value().re, oracle, epsilon = 1e-8);
    }

    #[test]
    fn exterior_zero_and_exponential() {
        let spec = QuadratureSpec::default();
        let v0 = integrate_exterior(&|_: &Point3| c(0.0), 1.0, 0.0, &spec).unwrap();
        assert_eq!(v0.value().re, 0.0);

        // 4 pi int r^2 e^{-r} dr = 8 pi.
        let v = integrate_exterior(&|y: &Point3| c((-y.norm()).exp()), 1.0, 1.0, &spec).unwrap();
        assert_abs_diff_eq!(v.value().re, 8.0 * PI, epsilon = 1e-6);
        assert!(v.truncation_radius.unwrap() > 10.0);
    }

    #[test]
    fn exterior_nonpositive_damping_is_divergence_error() {
        let spec = QuadratureSpec::default();
        assert!(matches!(
            integrate_exterior(&|_: &Point3| c(1.0), 0.0, 1.0, &spec),
            Err(Error::Divergence(_))
        ));
    }

    #[test]
    fn linearity() {
        let spec = QuadratureSpec::default();
        let f = |y: &Point3| c((-y.norm_sq()).exp());
        let g = |y: &Point3| c(y.x1 * y.x1);
        let (alpha, beta) = (2.5, -0.75);
        let comb = |y: &Point3| f(y) * alpha + g(y) * beta;
        let vc = integrate_sphere(&comb, 1.5, &spec).unwrap().value();
        let vf = integrate_sphere(&f, 1.5, &spec).unwrap().value();
        let vg = integrate_sphere(&g, 1.5, &spec).unwrap().value();
        assert!((vc - (vf * alpha + vg * beta)).norm() < 1e-10);
    }

    // The three regions cover R^3 (up to the measure-zero seams).
    #[test]
    fn region_cover() {
        let mut state = 123u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for &xn in &[2.0, 5.0, 20.0] {
            let x = Point3::new(0.0, 0.0, xn);
            for _ in 0..10_000 {
                let y = Point3::new(
                    (next() - 0.5) * 6.0 * xn,
                    (next() - 0.5) * 6.0 * xn,
                    (next() - 0.5) * 6.0 * xn,
                );
                let covered = RegionTag::Near.contains(&x, &y)
                    || RegionTag::Shifted.contains(&x, &y)
                    || RegionTag::Upsilon.contains(&x, &y);
                assert!(covered, "uncovered point {y:?} for |x| = {xn}");
            }
        }
    }

    #[test]
    fn refinement_convergence_smooth() {
        let base = QuadratureSpec {
            refine_steps: 0,
            ..Default::default()
        };
        let f = |y: &Point3| c((y.x1 + 0.3 * y.x2).sin() * (-y.norm_sq()).exp());
        let v1 = integrate_ball_smooth(&f, &Point3::ZERO, 2.0, &base)
            .unwrap()
            .value();
        let v2 = integrate_ball_smooth(&f, &Point3::ZERO, 2.0, &base.refined(2))
            .unwrap()
            .value();
        assert!((v1 - v2).norm() < 1e-8);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        // degree-9 polynomial exactly
        let val: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.powi(8)).sum();
        assert_abs_diff_eq!(val, 2.0 / 9.0, epsilon = 1e-14);
    }
}
