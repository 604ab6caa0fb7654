//! Randomized sums of signed bumps on a separated center set — the
//! slowly decaying Anderson-type potential — plus the single-bump far-field
//! kernel S_j used by the moment estimates.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{bump, DecayEnvelope, ScalarField};
use crate::geom::Point3;
use crate::quad::{self, QuadratureSpec};
use crate::rng;

/// Sign law for the i.i.d. factors xi_j. Both are bounded and even, so all
/// odd moments vanish.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignLaw {
    /// xi_j = +-1 with equal probability.
    Rademacher,
    /// xi_j uniform on [-1, 1].
    Uniform,
}

impl SignLaw {
    /// E[xi^2]; enters the variance bound.
    pub fn second_moment(&self) -> f64 {
        match self {
            SignLaw::Rademacher => 1.0,
            SignLaw::Uniform => 1.0 / 3.0,
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            SignLaw::Rademacher => {
                if rng.gen::<f64>() < 0.5 {
                    -1.0
                } else {
                    1.0
                }
            }
            SignLaw::Uniform => rng.gen::<f64>() * 2.0 - 1.0,
        }
    }
}

/// Specification of the randomized potential V = sum_j a_j xi_j phi(x - x_j):
/// centers with pairwise separation > 2 (so the unit-ball bumps never
/// overlap), positive amplitudes, an even sign law, and a base seed.
#[derive(Clone)]
pub struct AndersonPotentialSpec {
    pub centers: Vec<Point3>,
    pub amplitudes: Vec<f64>,
    pub sign_law: SignLaw,
    pub seed: u64,
    pub eps: f64,
    cells: Arc<HashMap<(i64, i64, i64), Vec<usize>>>,
}

fn cell_of(x: &Point3) -> (i64, i64, i64) {
    (
        (x.x1 / 2.0).floor() as i64,
        (x.x2 / 2.0).floor() as i64,
        (x.x3 / 2.0).floor() as i64,
    )
}

impl AndersonPotentialSpec {
    pub fn new(
        centers: Vec<Point3>,
        amplitudes: Vec<f64>,
        sign_law: SignLaw,
        seed: u64,
        eps: f64,
    ) -> Result<Self> {
        if centers.len() != amplitudes.len() {
            return Err(Error::Spec(
                "centers and amplitudes must have the same length".into(),
            ));
        }
        if amplitudes.iter().any(|&a| a < 0.0) {
            return Err(Error::Spec("amplitudes must be nonnegative".into()));
        }
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (j, c) in centers.iter().enumerate() {
            cells.entry(cell_of(c)).or_default().push(j);
        }
        // Separation check through the cell grid: any violator sits in the
        // same or an adjacent cell.
        for (j, c) in centers.iter().enumerate() {
            let (ci, cj, ck) = cell_of(c);
            for di in -1..=1 {
                for dj in -1..=1 {
                    for dk in -1..=1 {
                        if let Some(list) = cells.get(&(ci + di, cj + dj, ck + dk)) {
                            for &l in list {
                                if l != j && centers[l].sub(c).norm() <= 2.0 {
                                    return Err(Error::Spec(format!(
                                        "centers {j} and {l} are closer than 2"
                                    )));
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(AndersonPotentialSpec {
            centers,
            amplitudes,
            sign_law,
            seed,
            eps,
            cells: Arc::new(cells),
        })
    }

    /// Default layout: the cubic lattice 3Z^3 inside the ball of the given
    /// radius (excluding the origin point's ball so sources stay away from
    /// the unit-ball probe region), with amplitudes a_j = (1+|x_j|)^{-0.5-eps}.
    pub fn lattice(eps: f64, max_radius: f64, sign_law: SignLaw, seed: u64) -> Result<Self> {
        let n = (max_radius / 3.0).floor() as i64;
        let mut centers = Vec::new();
        let mut amplitudes = Vec::new();
        for i in -n..=n {
            for j in -n..=n {
                for k in -n..=n {
                    let c = Point3::new(3.0 * i as f64, 3.0 * j as f64, 3.0 * k as f64);
                    if c.norm() > max_radius || (i == 0 && j == 0 && k == 0) {
                        continue;
                    }
                    amplitudes.push((1.0 + c.norm()).powf(-0.5 - eps));
                    centers.push(c);
                }
            }
        }
        AndersonPotentialSpec::new(centers, amplitudes, sign_law, seed, eps)
    }

    /// Index of the unique center whose unit ball contains x, if any.
    pub fn covering_center(&self, x: &Point3) -> Option<usize> {
        let (ci, cj, ck) = cell_of(x);
        for di in -1..=1 {
            for dj in -1..=1 {
                for dk in -1..=1 {
                    if let Some(list) = self.cells.get(&(ci + di, cj + dj, ck + dk)) {
                        for &j in list {
                            if self.centers[j].sub(x).norm() < 1.0 {
                                return Some(j);
                            }
                        }
                    }
                }
            }
        }
        None
    }

    /// Draw the sign vector for one realization. Stream keyed on
    /// (spec seed, realization, j), so values are independent of evaluation
    /// order and of how many centers precede j.
    pub fn signs(&self, realization: u64) -> Vec<f64> {
        (0..self.centers.len())
            .map(|j| {
                let mut r = rng::stream3(self.seed, realization, j as u64);
                self.sign_law.draw(&mut r)
            })
            .collect()
    }
}

/// One realization: the field V(x) = sum_j a_j xi_j phi(x - x_j).
#[derive(Clone)]
pub struct AndersonRealization {
    pub spec: AndersonPotentialSpec,
    pub signs: Vec<f64>,
    pub realization: u64,
}

impl AndersonRealization {
    pub fn value(&self, x: &Point3) -> f64 {
        match self.spec.covering_center(x) {
            Some(j) => {
                self.spec.amplitudes[j] * self.signs[j] * bump(&x.sub(&self.spec.centers[j]))
            }
            None => 0.0,
        }
    }

    /// View as a ScalarField (shares the realization through an Arc).
    pub fn field(&self) -> ScalarField {
        let me = self.clone();
        let m = self.spec.amplitudes.iter().cloned().fold(0.0f64, f64::max);
        ScalarField::new(
            move |x: &Point3| me.value(x),
            Some(DecayEnvelope::new(
                // |V(x)| <= a_j phi <= (1 + (|x|-1))^{-0.5-eps} when covered;
                // 2^{0.5+eps} m is a safe global constant.
                (2.0f64.powf(0.5 + self.spec.eps) * m).max(1e-300),
                self.spec.eps,
            )),
        )
    }

    /// Rows (center, amplitude, sign) for CSV export.
    pub fn rows(&self) -> Vec<(Point3, f64, f64)> {
        self.spec
            .centers
            .iter()
            .zip(&self.spec.amplitudes)
            .zip(&self.signs)
            .map(|((c, &a), &s)| (*c, a, s))
            .collect()
    }
}

/// Deterministic realization of the spec for the given realization index.
pub fn sample_anderson(spec: &AndersonPotentialSpec, realization: u64) -> AndersonRealization {
    AndersonRealization {
        spec: spec.clone(),
        signs: spec.signs(realization),
        realization,
    }
}

/// Total mass of the standard bump, int_{|w|<1} phi(w) dw.
pub fn bump_mass() -> f64 {
    static MASS: OnceLock<f64> = OnceLock::new();
    *MASS.get_or_init(|| {
        4.0 * std::f64::consts::PI
            * quad::adaptive_simpson_1d(
                &|r: f64| r * r * (-1.0 / (1.0 - r * r)).exp(),
                0.0,
                1.0 - 1e-12,
                1e-13,
            )
    })
}

/// S_j evaluated through the offset xi = x - x_j:
/// int_{|x-y|>1} (x-y)/(4 pi |x-y|^3) phi(y - x_j) dy.
///
/// For |xi| > 2 the constraint is inactive and, phi being radial, Newton's
/// theorem collapses the integral to the exact point-mass field
/// xi/(4 pi |xi|^3) * mass(phi). Inside, the truncated integral is computed
/// by ball quadrature over the bump support.
pub fn s_kernel(xi: &Point3, spec: &QuadratureSpec) -> Result<[f64; 3]> {
    let inv4pi = 1.0 / (4.0 * std::f64::consts::PI);
    let d = xi.norm();
    if d > 2.0 {
        let c = inv4pi * bump_mass() / (d * d * d);
        return Ok([c * xi.x1, c * xi.x2, c * xi.x3]);
    }
    let mut out = [0.0; 3];
    for i in 0..3 {
        let v = quad::integrate_ball_smooth(
            &|w: &Point3| {
                let u = xi.sub(w);
                let un = u.norm();
                if un <= 1.0 {
                    return Complex64::new(0.0, 0.0);
                }
                let ui = [u.x1, u.x2, u.x3][i];
                Complex64::new(inv4pi * ui / (un * un * un) * bump(w), 0.0)
            },
            &Point3::ZERO,
            1.0,
            &spec.fast(),
        )?;
        out[i] = v.value().re;
    }
    Ok(out)
}
