//! Eikonal-with-viscosity phase machinery: the damped integral operator G,
//! the Picard iteration mu = -GV + G[|grad mu|^2], and the PDE residual of
//! the modified eikonal equation
//!
//!   Lap(mu) + |grad mu|^2 - 2k dmu/dr = V + (2/r) dmu/dr.
//!
//! The kernel of G is |x| e^{k|x|} e^{-k(|x-y|+|y|)} / (4 pi |x-y| |y|).
//! By the triangle inequality the exponent k(|x| - |x-y| - |y|) is never
//! positive, so the kernel is evaluated in log space and stays bounded by
//! |x| / (4 pi |x-y| |y|) even for large k.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::born::{patch_weight, shell_nodes};
use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::geom::{directions_26, log_radii, Point3};
use crate::quad::{exterior_truncation_radius, QuadratureSpec};

/// Shell nodes around `center` with the polar axis rotated onto `axis`.
/// The G kernel concentrates in a narrow cone along the axis through x and
/// the origin; with the rule's polar axis aligned to it, the peak falls on
/// the endpoint-clustered Gauss-Legendre nodes and the azimuth direction
/// stays smooth.
fn shell_nodes_oriented<F: FnMut(&Point3, f64)>(
    center: &Point3,
    axis: &Point3,
    r0: f64,
    r1: f64,
    spec: &QuadratureSpec,
    visit: &mut F,
) {
    let a = match axis.unit() {
        Ok(u) => u,
        Err(_) => Point3::new(0.0, 0.0, 1.0),
    };
    // Householder-style frame: e3 -> a.
    let helper = if a.x3.abs() < 0.9 {
        Point3::new(0.0, 0.0, 1.0)
    } else {
        Point3::new(1.0, 0.0, 0.0)
    };
    let e1 = {
        let p = helper.sub(&a.scale(helper.dot(&a)));
        p.scale(1.0 / p.norm())
    };
    let e2 = Point3::new(
        a.x2 * e1.x3 - a.x3 * e1.x2,
        a.x3 * e1.x1 - a.x1 * e1.x3,
        a.x1 * e1.x2 - a.x2 * e1.x1,
    );
    shell_nodes(&Point3::ZERO, r0, r1, spec, &mut |w, wt| {
        let y = center
            .add(&e1.scale(w.x1))
            .add(&e2.scale(w.x2))
            .add(&a.scale(w.x3));
        visit(&y, wt);
    });
}

/// Quadrature tuned for the strongly damped G kernel: short panels against
/// the e^{-2k rho} radial scale, no refinement loop.
pub fn eikonal_spec() -> QuadratureSpec {
    QuadratureSpec {
        n_theta: 24,
        n_phi: 16,
        n_radial: 10,
        panel_len: 0.3,
        refine_steps: 0,
        tol: 1e-8,
    }
}

/// Default mu grid: 26 directions, dyadic-log shells on [1.25, 32].
pub fn default_mu_grid() -> (Vec<Point3>, Vec<f64>) {
    (directions_26(), log_radii(1.25, 32.0, 14))
}

/// Apply G to a bounded f at x (|x| > 1, k > 0). `f_bound` is a sup bound
/// on |f| used to choose the exterior truncation radius.
pub fn apply_g<F>(k: f64, f: &F, f_bound: f64, x: &Point3, spec: &QuadratureSpec) -> Result<f64>
where
    F: Fn(&Point3) -> f64 + ?Sized,
{
    apply_g_pinned(k, f, f_bound, x, x, spec)
}

/// Like `apply_g`, but the domain decomposition (patch radius, panel layout,
/// truncation radius) is derived from `pin` instead of `x`. For finite
/// difference stencils this keeps the quadrature nodes fixed while only the
/// integrand moves, so the quadrature bias varies smoothly in x and cancels
/// in the differences instead of being amplified by 1/h^2.
pub fn apply_g_pinned<F>(
    k: f64,
    f: &F,
    f_bound: f64,
    x: &Point3,
    pin: &Point3,
    spec: &QuadratureSpec,
) -> Result<f64>
where
    F: Fn(&Point3) -> f64 + ?Sized,
{
    if k <= 0.0 {
        return Err(Error::Parameter(format!("G needs k > 0, got {k}")));
    }
    if !(f_bound.is_finite() && f_bound >= 0.0) {
        return Err(Error::Parameter(format!("bad sup bound {f_bound}")));
    }
    let r = x.norm();
    if r <= 1.0 {
        return Err(Error::Domain(format!(
            "G is used in the exterior region |x| > 1, got |x| = {r}"
        )));
    }
    let r_pin = pin.norm();
    // Past rho = |y| > r + 1 the exponent is below 2k(r - rho).
    let r_star = if f_bound == 0.0 {
        r_pin + 1.0
    } else {
        exterior_truncation_radius(
            r_pin * f_bound * (2.0 * k * r_pin).exp() / (4.0 * PI),
            2.0 * k,
            spec.tol,
        )?
        .max(r + 1.0)
    };
    let panel = spec.panel_len.min(3.0 / k);
    let spec_fine = QuadratureSpec {
        panel_len: panel,
        ..spec.clone()
    };
    let kernel_log = |y: &Point3| {
        let e = k * (r - y.sub(x).norm() - y.norm());
        debug_assert!(e <= 1e-9, "triangle-inequality damping violated: {e}");
        e
    };
    let mut total = 0.0;
    let r_patch = (0.45 * r_pin).min(1.0);
    // Desingularized patch around x (1/|x-y| cancelled by the volume
    // element of shells centered there).
    shell_nodes_oriented(x, pin, 0.0, r_patch, &spec_fine, &mut |y, wt| {
        let w = patch_weight(y.sub(x).norm(), r_patch);
        if w > 0.0 {
            let fv = f(y);
            if fv != 0.0 {
                total +=
                    wt * w * fv * r * kernel_log(y).exp() / (4.0 * PI * y.sub(x).norm() * y.norm());
            }
        }
    });
    // Remainder on shells around the origin (1/|y| cancelled); breakpoint
    // at rho = 1 so unit-ball sources keep their edge on a panel boundary.
    let mut rest = |y: &Point3, wt: f64| {
        let w = 1.0 - patch_weight(y.sub(x).norm(), r_patch);
        if w > 0.0 {
            let fv = f(y);
            if fv != 0.0 {
                total +=
                    wt * w * fv * r * kernel_log(y).exp() / (4.0 * PI * y.sub(x).norm() * y.norm());
            }
        }
    };
    shell_nodes_oriented(&Point3::ZERO, pin, 0.0, 1.0, &spec_fine, &mut rest);
    shell_nodes_oriented(&Point3::ZERO, pin, 1.0, r_star, &spec_fine, &mut rest);
    Ok(total)
}

/// Scalar samples on a direction-by-radius grid, radial-linear interpolation
/// along the nearest direction, clamped outside the radial range.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarTable {
    pub directions: Vec<[f64; 3]>,
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
}

impl ScalarTable {
    fn nearest_direction(&self, x: &Point3) -> usize {
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (i, d) in self.directions.iter().enumerate() {
            let dot = d[0] * x.x1 + d[1] * x.x2 + d[2] * x.x3;
            if dot > best_dot {
                best_dot = dot;
                best = i;
            }
        }
        best
    }

    pub fn eval(&self, x: &Point3) -> f64 {
        let nr = self.radii.len();
        let r = x.norm();
        let di = if r == 0.0 {
            0
        } else {
            self.nearest_direction(x)
        };
        let row = &self.values[di * nr..(di + 1) * nr];
        if r <= self.radii[0] {
            return row[0];
        }
        if r >= self.radii[nr - 1] {
            return row[nr - 1];
        }
        let j = self.radii.partition_point(|&rr| rr < r).max(1) - 1;
        let j = j.min(nr - 2);
        let t = (r - self.radii[j]) / (self.radii[j + 1] - self.radii[j]);
        row[j] + (row[j + 1] - row[j]) * t
    }

    /// |grad|^2 of the interpolant by central differences.
    pub fn grad_norm_sq(&self, x: &Point3, h: f64) -> f64 {
        let mut acc = 0.0;
        for axis in 0..3 {
            let mut xp = *x;
            let mut xm = *x;
            match axis {
                0 => {
                    xp.x1 += h;
                    xm.x1 -= h;
                }
                1 => {
                    xp.x2 += h;
                    xm.x2 -= h;
                }
                _ => {
                    xp.x3 += h;
                    xm.x3 -= h;
                }
            }
            let d = (self.eval(&xp) - self.eval(&xm)) / (2.0 * h);
            acc += d * d;
        }
        acc
    }
}

/// Picard iterate of the phase correction on a radial grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseCorrection {
    pub k: f64,
    pub directions: Vec<[f64; 3]>,
    pub radii: Vec<f64>,
    /// mu values, direction-major.
    pub mu: Vec<f64>,
    /// |grad mu|^2 source of the *current* iterate (zeros at iteration <= 1).
    pub w_source: Vec<f64>,
    pub iteration: usize,
    /// sup |mu_n - mu_{n-1}| per step.
    pub diff_norms: Vec<f64>,
    /// Finite-difference step used for gradients.
    pub fd_step: f64,
}

impl PhaseCorrection {
    pub fn mu_table(&self) -> ScalarTable {
        ScalarTable {
            directions: self.directions.clone(),
            radii: self.radii.clone(),
            values: self.mu.clone(),
        }
    }

    fn w_table(&self) -> ScalarTable {
        ScalarTable {
            directions: self.directions.clone(),
            radii: self.radii.clone(),
            values: self.w_source.clone(),
        }
    }

    /// Smooth off-grid evaluation: re-synthesize mu(x) = -GV(x) + G[w](x)
    /// from the stored source table (0 at iteration 0).
    pub fn smooth_eval(
        &self,
        v: &ScalarField,
        v_bound: f64,
        x: &Point3,
        spec: &QuadratureSpec,
    ) -> Result<f64> {
        self.smooth_eval_pinned(v, v_bound, x, x, spec)
    }

    /// `smooth_eval` with the quadrature decomposition pinned to `pin`;
    /// used for finite-difference stencils around a probe point.
    pub fn smooth_eval_pinned(
        &self,
        v: &ScalarField,
        v_bound: f64,
        x: &Point3,
        pin: &Point3,
        spec: &QuadratureSpec,
    ) -> Result<f64> {
        if self.iteration == 0 {
            return Ok(0.0);
        }
        let gv = apply_g_pinned(self.k, &|y: &Point3| v.at(y), v_bound, x, pin, spec)?;
        let w_bound = self.w_source.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let gw = if w_bound == 0.0 {
            0.0
        } else {
            let wt = self.w_table();
            apply_g_pinned(self.k, &|y: &Point3| wt.eval(y), w_bound, x, pin, spec)?
        };
        Ok(-gv + gw)
    }
}

fn sup_bound_on_grid(v: &ScalarField, points: &[Point3]) -> f64 {
    let mut m = v.at(&Point3::new(0.0, 0.0, 0.0)).abs();
    for p in points {
        m = m.max(v.at(p).abs());
    }
    m
}

/// Run the Picard iteration mu_{n+1} = -GV + G[|grad mu_n|^2] from mu_0 = 0.
/// Two consecutive growing difference norms abort with a divergence error:
/// contraction failure is a legitimate, reportable outcome.
pub fn picard_iterate_mu(
    v: &ScalarField,
    k: f64,
    n_iter: usize,
    directions: &[Point3],
    radii: &[f64],
    spec: &QuadratureSpec,
) -> Result<PhaseCorrection> {
    if k <= 0.0 {
        return Err(Error::Parameter(format!("iteration needs k > 0, got {k}")));
    }
    if radii.len() < 2 || radii[0] <= 1.0 {
        return Err(Error::Parameter(
            "mu grid needs >= 2 radii with r > 1".into(),
        ));
    }
    let points: Vec<Point3> = directions
        .iter()
        .flat_map(|d| radii.iter().map(|&r| d.scale(r)))
        .collect();
    let v_bound = sup_bound_on_grid(v, &points);
    let fd_step = 0.1;
    let mut gv = Vec::with_capacity(points.len());
    for p in &points {
        gv.push(apply_g(k, &|y: &Point3| v.at(y), v_bound, p, spec)?);
    }
    let dir_arrays: Vec<[f64; 3]> = directions.iter().map(|d| [d.x1, d.x2, d.x3]).collect();
    let mut state = PhaseCorrection {
        k,
        directions: dir_arrays,
        radii: radii.to_vec(),
        mu: vec![0.0; points.len()],
        w_source: vec![0.0; points.len()],
        iteration: 0,
        diff_norms: Vec::new(),
        fd_step,
    };
    for n in 1..=n_iter {
        let w_bound = state.w_source.iter().fold(0.0f64, |a, &b| a.max(b));
        let mut mu_new = Vec::with_capacity(points.len());
        if w_bound == 0.0 {
            for &g in &gv {
                mu_new.push(-g);
            }
        } else {
            let wt = state.w_table();
            for (p, &g) in points.iter().zip(&gv) {
                mu_new.push(-g + apply_g(k, &|y: &Point3| wt.eval(y), w_bound, p, spec)?);
            }
        }
        let diff = mu_new
            .iter()
            .zip(&state.mu)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        state.diff_norms.push(diff);
        let m = state.diff_norms.len();
        if m >= 3
            && state.diff_norms[m - 1] > state.diff_norms[m - 2]
            && state.diff_norms[m - 2] > state.diff_norms[m - 3]
        {
            return Err(Error::Divergence(format!(
                "phase iteration difference norms grew twice in a row (last {:.3e})",
                diff
            )));
        }
        state.mu = mu_new;
        state.iteration = n;
        let mu_t = state.mu_table();
        state.w_source = points
            .iter()
            .map(|p| mu_t.grad_norm_sq(p, fd_step))
            .collect();
    }
    Ok(state)
}

/// Pointwise residual of the modified eikonal equation for a smooth mu
/// closure, all derivatives by second-order central differences.
pub fn hj_residual_at<M, V>(mu: &M, v: &V, k: f64, x: &Point3, h: f64) -> f64
where
    M: Fn(&Point3) -> f64 + ?Sized,
    V: Fn(&Point3) -> f64 + ?Sized,
{
    let c = mu(x);
    let mut lap = 0.0;
    let mut grad_sq = 0.0;
    let mut grad = [0.0; 3];
    #[allow(clippy::needless_range_loop)]
    for axis in 0..3 {
        let mut xp = *x;
        let mut xm = *x;
        match axis {
            0 => {
                xp.x1 += h;
                xm.x1 -= h;
            }
            1 => {
                xp.x2 += h;
                xm.x2 -= h;
            }
            _ => {
                xp.x3 += h;
                xm.x3 -= h;
            }
        }
        let fp = mu(&xp);
        let fm = mu(&xm);
        lap += (fp - 2.0 * c + fm) / (h * h);
        let g = (fp - fm) / (2.0 * h);
        grad[axis] = g;
        grad_sq += g * g;
    }
    let r = x.norm();
    let radial = (grad[0] * x.x1 + grad[1] * x.x2 + grad[2] * x.x3) / r;
    lap + grad_sq - 2.0 * k * radial - v(x) - 2.0 / r * radial
}

/// Max-norm residual of the eikonal equation over the interior grid points
/// of a Picard iterate, using the smooth re-synthesized evaluation.
pub fn eikonal_residual(
    mu: &PhaseCorrection,
    v: &ScalarField,
    k: f64,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let nr = mu.radii.len();
    if nr < 5 {
        return Err(Error::InsufficientData(format!(
            "residual needs >= 5 radii per direction, got {nr}"
        )));
    }
    let points: Vec<Point3> = mu
        .directions
        .iter()
        .flat_map(|d| {
            mu.radii[1..nr - 1]
                .iter()
                .map(move |&r| Point3::new(d[0] * r, d[1] * r, d[2] * r))
        })
        .collect();
    let v_bound = sup_bound_on_grid(v, &points);
    let h = mu.fd_step;
    let mut worst: f64 = 0.0;
    for p in &points {
        let mu_fn = |x: &Point3| -> f64 {
            mu.smooth_eval_pinned(v, v_bound, x, p, spec)
                .expect("interior stencil point left the G domain")
        };
        let res = hj_residual_at(&mu_fn, &|y: &Point3| v.at(y), k, p, h);
        worst = worst.max(res.abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::directions_axes;
    use approx::assert_abs_diff_eq;

    fn small_grid() -> (Vec<Point3>, Vec<f64>) {
        (directions_axes(), log_radii(1.25, 8.0, 6))
    }

    #[test]
    fn g_rejects_bad_inputs_and_zero() {
        let spec = eikonal_spec();
        let x = Point3::new(3.0, 0.0, 0.0);
        assert!(apply_g(0.0, &|_: &Point3| 1.0, 1.0, &x, &spec).is_err());
        assert!(apply_g(
            10.0,
            &|_: &Point3| 1.0,
            1.0,
            &Point3::new(0.5, 0.0, 0.0),
            &spec
        )
        .is_err());
        let z = apply_g(10.0, &|_: &Point3| 0.0, 0.0, &x, &spec).unwrap();
        assert_eq!(z, 0.0);
    }

    #[test]
    fn g_is_positive_on_positive_input() {
        let spec = eikonal_spec();
        let x = Point3::new(2.0, 1.0, 0.0);
        let v = apply_g(8.0, &|_: &Point3| 1.0, 1.0, &x, &spec).unwrap();
        assert!(v > 0.0);
    }

    #[test]
    fn g_indicator_matches_refined_oracle() {
        // f = unit-ball indicator, |x| = 3, k = 10; high angular counts are
        // needed because the damping factor e^{k rho cos-angle terms} is
        // sharply peaked toward the source direction.
        let spec = QuadratureSpec {
            n_theta: 20,
            n_phi: 32,
            n_radial: 12,
            panel_len: 0.3,
            refine_steps: 0,
            tol: 1e-10,
        };
        let f = |y: &Point3| if y.norm_sq() < 1.0 { 1.0 } else { 0.0 };
        let x = Point3::new(3.0, 0.0, 0.0);
        let coarse = apply_g(10.0, &f, 1.0, &x, &spec).unwrap();
        let fine = apply_g(10.0, &f, 1.0, &x, &spec.refined(2)).unwrap();
        assert!(fine > 0.0);
        assert!(
            (coarse - fine).abs() / fine < 1e-6,
            "relative gap {:.3e}",
            (coarse - fine).abs() / fine
        );
    }

    #[test]
    fn g_is_linear() {
        let spec = eikonal_spec();
        let x = Point3::new(2.5, 0.5, 0.3);
        let f = |y: &Point3| (-0.3 * y.norm()).exp();
        let g = |y: &Point3| 1.0 / (1.0 + y.norm_sq());
        let gf = apply_g(6.0, &f, 1.0, &x, &spec).unwrap();
        let gg = apply_g(6.0, &g, 1.0, &x, &spec).unwrap();
        let sum = apply_g(6.0, &|y: &Point3| 2.0 * f(y) - 3.0 * g(y), 5.0, &x, &spec).unwrap();
        assert_abs_diff_eq!(
            sum,
            2.0 * gf - 3.0 * gg,
            epsilon = 1e-10 * (gf.abs() + gg.abs())
        );
    }

    #[test]
    fn zero_potential_keeps_mu_zero() {
        let (dirs, radii) = small_grid();
        let spec = eikonal_spec();
        let v = ScalarField::zero();
        let mu = picard_iterate_mu(&v, 10.0, 3, &dirs, &radii, &spec).unwrap();
        assert!(mu.mu.iter().all(|&m| m == 0.0));
        assert!(mu.diff_norms.iter().all(|&d| d == 0.0));
        assert_eq!(mu.iteration, 3);
    }

    #[test]
    fn first_iterate_is_minus_gv() {
        let (dirs, radii) = small_grid();
        let spec = eikonal_spec();
        let v = ScalarField::gaussian(0.5, 1.0);
        let mu1 = picard_iterate_mu(&v, 10.0, 1, &dirs, &radii, &spec).unwrap();
        // Spot-check against a direct application of G.
        let p = dirs[0].scale(radii[2]);
        // Direction 0, radius index 2 in direction-major layout.
        let idx = 2;
        let gv = apply_g(10.0, &|y: &Point3| v.at(y), 0.5, &p, &spec).unwrap();
        assert_abs_diff_eq!(mu1.mu[idx], -gv, epsilon = 1e-13);
    }

    // Wide, strong Gaussian: the nonlinear feedback |grad mu|^2 is well
    // above the quadrature floor, yet the iteration still contracts.
    fn contraction_case() -> ScalarField {
        ScalarField::gaussian(150.0, 0.15)
    }

    #[test]
    fn gaussian_case_contracts() {
        let (dirs, radii) = small_grid();
        let spec = eikonal_spec();
        let v = contraction_case();
        let mu = picard_iterate_mu(&v, 10.0, 2, &dirs, &radii, &spec).unwrap();
        assert_eq!(mu.diff_norms.len(), 2);
        let ratio = mu.diff_norms[1] / mu.diff_norms[0];
        assert!(ratio < 0.5, "contraction ratio {ratio:.3}");
    }

    #[test]
    fn residual_trivial_cases() {
        let (dirs, radii) = small_grid();
        let spec = eikonal_spec();
        let zero = ScalarField::zero();
        let mu0 = picard_iterate_mu(&zero, 10.0, 0, &dirs, &radii, &spec).unwrap();
        assert_eq!(eikonal_residual(&mu0, &zero, 10.0, &spec).unwrap(), 0.0);
        // mu = 0, V Gaussian: residual equals max |V| over the probes.
        let v = ScalarField::gaussian(0.7, 0.5);
        let res = eikonal_residual(&mu0, &v, 10.0, &spec).unwrap();
        let want = radii[1..radii.len() - 1]
            .iter()
            .map(|&r| (0.7 * (-0.5 * r * r).exp()).abs())
            .fold(0.0f64, f64::max);
        assert_abs_diff_eq!(res, want, epsilon = 1e-12);
    }

    #[test]
    fn residual_shrinks_over_iterations() {
        let dirs = directions_axes();
        let radii = log_radii(1.25, 6.0, 5);
        let spec = eikonal_spec();
        let v = contraction_case();
        let mut last = f64::INFINITY;
        for n in 1..=3 {
            let mu = picard_iterate_mu(&v, 10.0, n, &dirs, &radii, &spec).unwrap();
            let res = eikonal_residual(&mu, &v, 10.0, &spec).unwrap();
            assert!(
                res < last,
                "residual at iteration {n} is {res:.3e}, previous {last:.3e}"
            );
            last = res;
        }
    }

    #[test]
    fn fd_residual_is_second_order() {
        // Synthetic mu = e^{-r^2} with V chosen so the true residual is 0;
        // the FD residual is then pure discretization error, O(h^2).
        let k = 4.0;
        let mu = |x: &Point3| (-x.norm_sq()).exp();
        let v = move |x: &Point3| {
            let r2 = x.norm_sq();
            let e = (-r2).exp();
            let lap = (4.0 * r2 - 6.0) * e;
            let grad_sq = 4.0 * r2 * e * e;
            let radial = -2.0 * x.norm() * e;
            lap + grad_sq - 2.0 * k * radial - 2.0 / x.norm() * radial
        };
        let x = Point3::new(1.1, 0.4, 0.2);
        let r1 = hj_residual_at(&mu, &v, k, &x, 0.1).abs();
        let r2 = hj_residual_at(&mu, &v, k, &x, 0.05).abs();
        let ratio = r1 / r2;
        assert!(
            (3.4..=4.6).contains(&ratio),
            "halving h gave factor {ratio:.3}"
        );
    }
}
