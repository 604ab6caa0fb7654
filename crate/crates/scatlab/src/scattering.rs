//! Far-field amplitudes, the spectral-density factorization, and the
//! triangle harmonic-measure entropy certificate.
//!
//! The far-field amplitude A(k, theta) is read off from radial resolvent
//! samples by stripping the outgoing factor e^{ikr}/r and extrapolating in
//! 1/r. The factorization sigma'(E) = k/pi * ||A(k,.)||^2 on the sphere
//! turns amplitudes into spectral densities. The certificate machinery
//! integrates ln ||A|| against the harmonic measure of a flat isosceles
//! triangle sitting on the spectral interval, computed by walk-on-spheres.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::fit::{least_squares, linear_fit, LinearFit};
use crate::geom::Point3;
use crate::quad::{gauss_legendre, QuadratureSpec};
use crate::rng::stream;

/// Product sphere grid (Gauss-Legendre x trapezoid); weights sum to 4 pi.
pub fn sphere_grid(n_theta: usize, n_phi: usize) -> (Vec<Point3>, Vec<f64>) {
    let (mu, wmu) = gauss_legendre(n_theta);
    let dphi = TAU / n_phi as f64;
    let mut dirs = Vec::with_capacity(n_theta * n_phi);
    let mut weights = Vec::with_capacity(n_theta * n_phi);
    for (ct, wm) in mu.iter().zip(&wmu) {
        let st = (1.0 - ct * ct).max(0.0).sqrt();
        for j in 0..n_phi {
            let phi = j as f64 * dphi;
            dirs.push(Point3::new(st * phi.cos(), st * phi.sin(), *ct));
            weights.push(wm * dphi);
        }
    }
    (dirs, weights)
}

/// Free amplitude (4 pi)^{-1} * integral over the unit ball of
/// e^{-i k <theta, y>} f(y) dy; entire in k.
pub fn free_amplitude(
    f: &ScalarField,
    k: Complex64,
    theta: &Point3,
    spec: &QuadratureSpec,
) -> Result<Complex64> {
    let th = theta.unit()?;
    let (mu, wmu) = gauss_legendre(spec.n_theta);
    let (gx, gw) = gauss_legendre(spec.n_radial);
    let dphi = TAU / spec.n_phi as f64;
    let mut total = Complex64::new(0.0, 0.0);
    // One radial panel suffices: the integrand is analytic in r on [0, 1].
    for (t, wt) in gx.iter().zip(&gw) {
        let r = 0.5 + 0.5 * t;
        let wr = 0.5 * wt * r * r;
        for (ct, wm) in mu.iter().zip(&wmu) {
            let st = (1.0 - ct * ct).max(0.0).sqrt();
            for j in 0..spec.n_phi {
                let phi = j as f64 * dphi;
                let y = Point3::new(r * st * phi.cos(), r * st * phi.sin(), r * ct);
                let fv = f.at(&y);
                if fv != 0.0 {
                    let phase = (-Complex64::i() * k * th.dot(&y)).exp();
                    total += phase * fv * wr * wm * dphi;
                }
            }
        }
    }
    Ok(total / (4.0 * PI))
}

/// Extrapolate A = lim r e^{-ikr} u(r theta) from samples along one ray.
///
/// The stripped profile h(r) = r e^{-ikr} u is fitted as A + c/r; the fit
/// residual is returned alongside. Strictly growing successive profile
/// differences mean the samples are not converging and the extraction is
/// refused.
pub fn extract_amplitude(
    radii: &[f64],
    values: &[Complex64],
    k: Complex64,
) -> Result<(Complex64, f64)> {
    if radii.len() < 4 || radii.len() != values.len() {
        return Err(Error::InsufficientData(format!(
            "amplitude extraction needs >= 4 aligned samples, got {}",
            radii.len()
        )));
    }
    if radii.windows(2).any(|w| w[1] <= w[0]) || radii[0] <= 0.0 {
        return Err(Error::Parameter("extraction radii must ascend".into()));
    }
    let h: Vec<Complex64> = radii
        .iter()
        .zip(values)
        .map(|(&r, &u)| u * r * (-Complex64::i() * k * r).exp())
        .collect();
    let h_scale = h.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let diffs: Vec<f64> = h.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    if diffs.windows(2).all(|d| d[1] > d[0]) && *diffs.last().unwrap() > 1e-12 * h_scale {
        return Err(Error::ExtractionUnreliable(format!(
            "profile differences grow along the ray (last {:.3e})",
            diffs.last().unwrap()
        )));
    }
    let design: Vec<Vec<f64>> = radii.iter().map(|&r| vec![1.0, 1.0 / r]).collect();
    let re = least_squares(&design, &h.iter().map(|v| v.re).collect::<Vec<_>>())?;
    let im = least_squares(&design, &h.iter().map(|v| v.im).collect::<Vec<_>>())?;
    let a = Complex64::new(re[0], im[0]);
    let c = Complex64::new(re[1], im[1]);
    let residual = radii
        .iter()
        .zip(&h)
        .map(|(&r, &hv)| (hv - a - c / r).norm())
        .fold(0.0, f64::max);
    Ok((a, residual))
}

/// Amplitude samples over a direction set, with quadrature weights on the
/// sphere (sum 4 pi) so that L2 norms are a weighted sum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FarFieldAmplitude {
    pub tau: f64,
    pub delta: f64,
    pub directions: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub values_re: Vec<f64>,
    pub values_im: Vec<f64>,
    pub extraction_radii: Vec<f64>,
    /// Max extrapolation residual over directions.
    pub residual: f64,
}

impl FarFieldAmplitude {
    pub fn value(&self, i: usize) -> Complex64 {
        Complex64::new(self.values_re[i], self.values_im[i])
    }

    /// ||A||^2 over the sphere by the attached weights.
    pub fn norm_sq(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.values_re)
            .zip(&self.values_im)
            .map(|((w, re), im)| w * (re * re + im * im))
            .sum()
    }

    /// Constant amplitude on a product sphere grid (free radial sources).
    pub fn constant(k_tau: f64, k_delta: f64, a: Complex64, n_theta: usize, n_phi: usize) -> Self {
        let (dirs, weights) = sphere_grid(n_theta, n_phi);
        let n = dirs.len();
        FarFieldAmplitude {
            tau: k_tau,
            delta: k_delta,
            directions: dirs.iter().map(|d| [d.x1, d.x2, d.x3]).collect(),
            weights,
            values_re: vec![a.re; n],
            values_im: vec![a.im; n],
            extraction_radii: Vec::new(),
            residual: 0.0,
        }
    }
}

/// Extract the far field from every ray of a resolvent table, using samples
/// at radii >= min_radius (equal solid-angle weights over the table's
/// direction set).
pub fn amplitude_from_resolvent(
    table: &crate::born::ResolventTable,
    min_radius: f64,
) -> Result<FarFieldAmplitude> {
    let k = Complex64::new(table.tau, table.delta);
    let keep: Vec<usize> = table
        .radii
        .iter()
        .enumerate()
        .filter(|(_, &r)| r >= min_radius)
        .map(|(i, _)| i)
        .collect();
    if keep.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "only {} radii beyond {min_radius}",
            keep.len()
        )));
    }
    let radii: Vec<f64> = keep.iter().map(|&i| table.radii[i]).collect();
    let nd = table.directions.len();
    let mut values_re = Vec::with_capacity(nd);
    let mut values_im = Vec::with_capacity(nd);
    let mut residual: f64 = 0.0;
    for di in 0..nd {
        let vals: Vec<Complex64> = keep.iter().map(|&i| table.value(di, i)).collect();
        let (a, res) = extract_amplitude(&radii, &vals, k)?;
        values_re.push(a.re);
        values_im.push(a.im);
        residual = residual.max(res);
    }
    Ok(FarFieldAmplitude {
        tau: table.tau,
        delta: table.delta,
        directions: table.directions.clone(),
        weights: vec![4.0 * PI / nd as f64; nd],
        values_re,
        values_im,
        extraction_radii: radii,
        residual,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpectralDensitySample {
    pub e: f64,
    pub density: f64,
}

/// The factorization sigma'(E) = k / pi * ||A(k,.)||^2, E = k^2.
pub fn spectral_density(a: &FarFieldAmplitude, k: f64) -> Result<SpectralDensitySample> {
    if k <= 0.0 {
        return Err(Error::Parameter(format!(
            "spectral density needs k > 0, got {k}"
        )));
    }
    Ok(SpectralDensitySample {
        e: k * k,
        density: k / PI * a.norm_sq(),
    })
}

/// Flat isosceles triangle in the upper half k-plane with base [a1, a2] on
/// the real axis and base angles pi/gamma1, gamma1 > 2.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TriangleDomain {
    pub a1: f64,
    pub a2: f64,
    pub gamma1: f64,
    pub apex_re: f64,
    pub apex_im: f64,
}

impl TriangleDomain {
    pub fn new(a1: f64, a2: f64, gamma1: f64) -> Result<Self> {
        if a2 <= a1 {
            return Err(Error::Parameter(format!("base [{a1}, {a2}] is empty")));
        }
        if gamma1 <= 2.0 {
            return Err(Error::Parameter(format!(
                "base angles pi/gamma1 need gamma1 > 2, got {gamma1}"
            )));
        }
        let half = 0.5 * (a2 - a1);
        Ok(TriangleDomain {
            a1,
            a2,
            gamma1,
            apex_re: 0.5 * (a1 + a2),
            apex_im: half * (PI / gamma1).tan(),
        })
    }

    /// gamma1 = 3 gives base angles pi/3: an equilateral triangle.
    pub fn equilateral(a1: f64, a2: f64) -> Result<Self> {
        TriangleDomain::new(a1, a2, 3.0)
    }

    pub fn s1(&self) -> Complex64 {
        Complex64::new(self.a1, 0.0)
    }

    pub fn s2(&self) -> Complex64 {
        Complex64::new(self.a2, 0.0)
    }

    pub fn apex(&self) -> Complex64 {
        Complex64::new(self.apex_re, self.apex_im)
    }

    pub fn centroid(&self) -> Complex64 {
        (self.s1() + self.s2() + self.apex()) / 3.0
    }

    /// Edges in bin order: the base I, then s2 -> apex, then apex -> s1.
    pub fn edges(&self) -> [(Complex64, Complex64); 3] {
        [
            (self.s1(), self.s2()),
            (self.s2(), self.apex()),
            (self.apex(), self.s1()),
        ]
    }

    pub fn edge_lengths(&self) -> [f64; 3] {
        let e = self.edges();
        [
            (e[0].1 - e[0].0).norm(),
            (e[1].1 - e[1].0).norm(),
            (e[2].1 - e[2].0).norm(),
        ]
    }

    pub fn diameter(&self) -> f64 {
        self.edge_lengths().iter().fold(0.0f64, |a, &b| a.max(b))
    }

    pub fn contains_interior(&self, z: Complex64) -> bool {
        let v = [self.s1(), self.s2(), self.apex()];
        for i in 0..3 {
            let a = v[i];
            let b = v[(i + 1) % 3];
            let cross = (b.re - a.re) * (z.im - a.im) - (b.im - a.im) * (z.re - a.re);
            if cross <= 0.0 {
                return false;
            }
        }
        true
    }

    /// Distance to the boundary plus the nearest edge index and the
    /// arc-length parameter (0..1) along it.
    pub fn nearest_boundary(&self, z: Complex64) -> (f64, usize, f64) {
        let mut best = (f64::INFINITY, 0usize, 0.0f64);
        for (i, (a, b)) in self.edges().iter().enumerate() {
            let ab = b - a;
            let len_sq = ab.norm_sqr();
            let t = (((z - a) * ab.conj()).re / len_sq).clamp(0.0, 1.0);
            let p = a + ab * t;
            let d = (z - p).norm();
            if d < best.0 {
                best = (d, i, t);
            }
        }
        best
    }

    /// Bin-center boundary points of one edge.
    pub fn edge_points(&self, edge: usize, bins: usize) -> Vec<Complex64> {
        let (a, b) = self.edges()[edge];
        (0..bins)
            .map(|j| a + (b - a) * ((j as f64 + 0.5) / bins as f64))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WosOptions {
    pub bins_per_edge: usize,
    /// Snap distance as a fraction of the triangle diameter.
    pub snap_factor: f64,
    pub max_steps: u64,
}

impl Default for WosOptions {
    fn default() -> Self {
        WosOptions {
            bins_per_edge: 64,
            snap_factor: 1e-4,
            max_steps: 1_000_000,
        }
    }
}

/// Harmonic measure of the triangle boundary seen from k0, by binned
/// walk-on-spheres hits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarmonicMeasureEstimate {
    pub bins_per_edge: usize,
    pub n_walkers: u64,
    pub seed: u64,
    pub snap: f64,
    /// Masses per bin, edges concatenated in TriangleDomain::edges order.
    pub masses: Vec<f64>,
    /// Binomial standard error per bin.
    pub errors: Vec<f64>,
    pub edge_lengths: [f64; 3],
}

impl HarmonicMeasureEstimate {
    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn edge_mass(&self, edge: usize) -> f64 {
        let b = self.bins_per_edge;
        self.masses[edge * b..(edge + 1) * b].iter().sum()
    }

    /// Base-edge (interval I) masses.
    pub fn base_masses(&self) -> &[f64] {
        &self.masses[..self.bins_per_edge]
    }

    /// Linear mass density per base bin.
    pub fn base_density(&self) -> Vec<f64> {
        let w = self.edge_lengths[0] / self.bins_per_edge as f64;
        self.base_masses().iter().map(|m| m / w).collect()
    }
}

/// Walk-on-spheres harmonic measure: each walker jumps from its position to
/// a uniform point on the largest inscribed disk until within the snap
/// distance of the boundary. Deterministic given (seed, n_walkers, bins).
pub fn harmonic_measure(
    t: &TriangleDomain,
    k0: Complex64,
    n_walkers: u64,
    seed: u64,
    opts: &WosOptions,
) -> Result<HarmonicMeasureEstimate> {
    if !t.contains_interior(k0) {
        return Err(Error::Domain(format!(
            "walk start {k0} is not strictly inside the triangle"
        )));
    }
    if n_walkers == 0 || opts.bins_per_edge == 0 {
        return Err(Error::Parameter("need walkers and bins".into()));
    }
    let bins = opts.bins_per_edge;
    let snap = opts.snap_factor * t.diameter();
    let mut counts = vec![0u64; 3 * bins];
    for w in 0..n_walkers {
        let mut rng = stream(seed, w);
        let mut z = k0;
        let mut hit = None;
        for _ in 0..opts.max_steps {
            let (d, edge, tt) = t.nearest_boundary(z);
            if d < snap {
                hit = Some((edge, tt));
                break;
            }
            let ang = rng.gen::<f64>() * TAU;
            z += Complex64::new(ang.cos(), ang.sin()) * d;
        }
        let (edge, tt) = hit.unwrap_or_else(|| {
            let (_, e, tt) = t.nearest_boundary(z);
            (e, tt)
        });
        let bin = ((tt * bins as f64) as usize).min(bins - 1);
        counts[edge * bins + bin] += 1;
    }
    let n = n_walkers as f64;
    let masses: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let errors: Vec<f64> = masses.iter().map(|&m| (m * (1.0 - m) / n).sqrt()).collect();
    Ok(HarmonicMeasureEstimate {
        bins_per_edge: bins,
        n_walkers,
        seed,
        snap,
        masses,
        errors,
        edge_lengths: t.edge_lengths(),
    })
}

/// Mean-value gap sum(nu * mass) - nu(k0); nonnegative in expectation for
/// subharmonic nu.
pub fn subharmonic_test(
    nu_boundary: &[f64],
    nu_at_k0: f64,
    omega: &HarmonicMeasureEstimate,
) -> Result<f64> {
    if nu_boundary.len() != omega.masses.len() {
        return Err(Error::Parameter(format!(
            "nu has {} bins, measure has {}",
            nu_boundary.len(),
            omega.masses.len()
        )));
    }
    let mut acc = 0.0;
    for (nu, &m) in nu_boundary.iter().zip(&omega.masses) {
        if m > 0.0 {
            acc += nu * m;
        }
    }
    Ok(acc - nu_at_k0)
}

/// Weighted entropy integral over the base interval: sum of base-bin masses
/// times ln(density). Any zero density yields the -infinity sentinel; a
/// negative density is rejected.
pub fn entropy_lower_bound(densities: &[f64], omega_base: &[f64]) -> Result<f64> {
    if densities.len() != omega_base.len() {
        return Err(Error::Parameter(format!(
            "{} densities vs {} base bins",
            densities.len(),
            omega_base.len()
        )));
    }
    if densities.iter().any(|&d| d < 0.0) {
        return Err(Error::Domain("negative spectral density".into()));
    }
    if densities
        .iter()
        .zip(omega_base)
        .any(|(&d, &m)| d == 0.0 && m > 0.0)
    {
        return Ok(f64::NEG_INFINITY);
    }
    let mut acc = 0.0;
    for (&d, &m) in densities.iter().zip(omega_base) {
        if m > 0.0 {
            acc += m * d.ln();
        }
    }
    Ok(acc)
}

/// First interior grid point (row-major from the apex) where the sphere
/// norm of the free amplitude exceeds 1e-6 times its sup over the grid.
pub fn pick_k0(f: &ScalarField, t: &TriangleDomain, spec: &QuadratureSpec) -> Result<Complex64> {
    let (dirs, weights) = sphere_grid(4, 8);
    let norm_at = |k: Complex64| -> Result<f64> {
        let mut acc = 0.0;
        for (d, w) in dirs.iter().zip(&weights) {
            acc += w * free_amplitude(f, k, d, spec)?.norm_sqr();
        }
        Ok(acc.sqrt())
    };
    let n_rows = 10;
    let n_cols = 8;
    let mut grid = Vec::new();
    for i in 1..=n_rows {
        let frac = i as f64 / (n_rows + 1) as f64;
        let y = t.apex_im * (1.0 - frac);
        // Horizontal section of the triangle at height y, shrunk slightly
        // to stay strictly interior.
        let half = (t.apex_im - y) / (PI / t.gamma1).tan();
        let xl = t.apex_re - half;
        let xr = t.apex_re + half;
        for j in 1..=n_cols {
            let x = xl + (xr - xl) * j as f64 / (n_cols + 1) as f64;
            let z = Complex64::new(x, y);
            if t.contains_interior(z) {
                grid.push(z);
            }
        }
    }
    let norms: Vec<f64> = grid
        .iter()
        .map(|&z| norm_at(z))
        .collect::<Result<Vec<_>>>()?;
    let sup = norms.iter().fold(0.0f64, |a, &b| a.max(b));
    let threshold = 1e-6 * sup;
    for (z, &n) in grid.iter().zip(&norms) {
        if n > threshold {
            return Ok(*z);
        }
    }
    Err(Error::DegenerateSource(
        "free amplitude vanishes on the whole scan grid".into(),
    ))
}

/// Entropy certificate: boundary values of nu = ln ||A||, the mean-value
/// gap against the harmonic measure, and the entropy integral over I.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropyCertificate {
    pub nu_boundary: Vec<f64>,
    pub nu_at_k0: f64,
    pub mean_value_gap: f64,
    pub entropy_integral: f64,
    pub seed: u64,
    pub n_walkers: u64,
    pub bins_per_edge: usize,
    /// Imaginary offset used as the real-axis boundary proxy.
    pub delta_proxy: f64,
    /// Truncation radius of the compactly supported potential stage.
    pub rho: f64,
}

/// Assemble a certificate from boundary evaluations. `nu` is evaluated at
/// every boundary bin center; `density` at the base bin centers' real parts.
#[allow(clippy::too_many_arguments)]
pub fn entropy_certificate<N, D>(
    t: &TriangleDomain,
    omega: &HarmonicMeasureEstimate,
    nu: N,
    density: D,
    nu_at_k0: f64,
    delta_proxy: f64,
    rho: f64,
) -> Result<EntropyCertificate>
where
    N: Fn(Complex64) -> Result<f64>,
    D: Fn(f64) -> Result<f64>,
{
    let bins = omega.bins_per_edge;
    let mut nu_boundary = Vec::with_capacity(3 * bins);
    for edge in 0..3 {
        for p in t.edge_points(edge, bins) {
            nu_boundary.push(nu(p)?);
        }
    }
    let mean_value_gap = subharmonic_test(&nu_boundary, nu_at_k0, omega)?;
    let mut densities = Vec::with_capacity(bins);
    for p in t.edge_points(0, bins) {
        densities.push(density(p.re)?);
    }
    let entropy_integral = entropy_lower_bound(&densities, omega.base_masses())?;
    Ok(EntropyCertificate {
        nu_boundary,
        nu_at_k0,
        mean_value_gap,
        entropy_integral,
        seed: omega.seed,
        n_walkers: omega.n_walkers,
        bins_per_edge: bins,
        delta_proxy,
        rho,
    })
}

/// Log-log fit of the base-edge mass density against distance from the s1
/// corner, over bins inside `window` (fraction of the base length) that
/// collected at least `min_hits` walkers.
pub fn endpoint_exponent(
    omega: &HarmonicMeasureEstimate,
    window: f64,
    min_hits: u64,
) -> Result<LinearFit> {
    let bins = omega.bins_per_edge;
    let base_len = omega.edge_lengths[0];
    let w = base_len / bins as f64;
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for (j, &m) in omega.base_masses().iter().enumerate() {
        let s = (j as f64 + 0.5) * w;
        if s <= window * base_len && m * omega.n_walkers as f64 >= min_hits as f64 {
            lx.push(s.ln());
            ly.push((m / w).ln());
        }
    }
    if lx.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "only {} usable bins near the corner",
            lx.len()
        )));
    }
    linear_fit(&lx, &ly)
}
