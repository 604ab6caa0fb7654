//! Points, directions and complex wavenumbers in the upper half plane.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point (or vector) in R^3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl Point3 {
    pub const ZERO: Point3 = Point3 {
        x1: 0.0,
        x2: 0.0,
        x3: 0.0,
    };

    pub fn new(x1: f64, x2: f64, x3: f64) -> Self {
        Point3 { x1, x2, x3 }
    }

    pub fn norm(&self) -> f64 {
        (self.x1 * self.x1 + self.x2 * self.x2 + self.x3 * self.x3).sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.x1 * self.x1 + self.x2 * self.x2 + self.x3 * self.x3
    }

    pub fn dot(&self, o: &Point3) -> f64 {
        self.x1 * o.x1 + self.x2 * o.x2 + self.x3 * o.x3
    }

    pub fn scale(&self, s: f64) -> Point3 {
        Point3::new(self.x1 * s, self.x2 * s, self.x3 * s)
    }

    pub fn add(&self, o: &Point3) -> Point3 {
        Point3::new(self.x1 + o.x1, self.x2 + o.x2, self.x3 + o.x3)
    }

    pub fn sub(&self, o: &Point3) -> Point3 {
        Point3::new(self.x1 - o.x1, self.x2 - o.x2, self.x3 - o.x3)
    }

    pub fn unit(&self) -> Result<Point3> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::Domain("cannot normalize the zero vector".into()));
        }
        Ok(self.scale(1.0 / n))
    }
}

/// Angle between two nonzero vectors, in [0, pi].
///
/// Computed through atan2 of the cross-product magnitude against the dot
/// product, which is well conditioned near 0 and pi.
pub fn angle_zeta(u: &Point3, v: &Point3) -> Result<f64> {
    if u.norm() == 0.0 || v.norm() == 0.0 {
        return Err(Error::Domain("angle of a zero vector is undefined".into()));
    }
    let cx = u.x2 * v.x3 - u.x3 * v.x2;
    let cy = u.x3 * v.x1 - u.x1 * v.x3;
    let cz = u.x1 * v.x2 - u.x2 * v.x1;
    let cross = (cx * cx + cy * cy + cz * cz).sqrt();
    Ok(cross.atan2(u.dot(v)))
}

/// k = tau + i*delta in the upper half plane; z = k^2 is the spectral parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexWavenumber {
    pub tau: f64,
    pub delta: f64,
}

impl ComplexWavenumber {
    pub fn new(tau: f64, delta: f64) -> Self {
        ComplexWavenumber { tau, delta }
    }

    pub fn k(&self) -> Complex64 {
        Complex64::new(self.tau, self.delta)
    }

    pub fn z(&self) -> Complex64 {
        self.k() * self.k()
    }

    pub fn require_resolvent(&self) -> Result<()> {
        if self.delta <= 0.0 {
            return Err(Error::Parameter(format!(
                "resolvent work needs Im k > 0, got delta = {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// The 26 directions through the faces, edges and corners of the unit cube,
/// normalized. The standard envelope-estimation direction set.
pub fn directions_26() -> Vec<Point3> {
    let mut dirs = Vec::with_capacity(26);
    for i in -1i32..=1 {
        for j in -1i32..=1 {
            for l in -1i32..=1 {
                if i == 0 && j == 0 && l == 0 {
                    continue;
                }
                let p = Point3::new(i as f64, j as f64, l as f64);
                dirs.push(p.scale(1.0 / p.norm()));
            }
        }
    }
    dirs
}

/// 16 roughly equidistributed directions (spherical Fibonacci points).
/// The default angular grid for Born-iteration tables.
pub fn directions_fibonacci(n: usize) -> Vec<Point3> {
    let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = 2.0 * std::f64::consts::PI * (i as f64 / golden).fract();
            Point3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// The six coordinate directions.
pub fn directions_axes() -> Vec<Point3> {
    vec![
        Point3::new(1.0, 0.0, 0.0),
        Point3::new(-1.0, 0.0, 0.0),
        Point3::new(0.0, 1.0, 0.0),
        Point3::new(0.0, -1.0, 0.0),
        Point3::new(0.0, 0.0, 1.0),
        Point3::new(0.0, 0.0, -1.0),
    ]
}

/// Dyadic radii {1, 2, 4, ..., 2^(n-1)}.
pub fn dyadic_radii(n: usize) -> Vec<f64> {
    (0..n).map(|i| (1u64 << i) as f64).collect()
}

/// n log-spaced radii on [r_min, r_max].
pub fn log_radii(r_min: f64, r_max: f64, n: usize) -> Vec<f64> {
    assert!(r_min > 0.0 && r_max > r_min && n >= 2);
    let l0 = r_min.ln();
    let l1 = r_max.ln();
    (0..n)
        .map(|i| (l0 + (l1 - l0) * i as f64 / (n - 1) as f64).exp())
        .collect()
}
