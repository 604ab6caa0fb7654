//! Ordinary least squares on (usually log-transformed) data. The constants
//! in the decay estimates are existential, so the contract everywhere is
//! stability of the fit, reported with R^2, not a specific value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
}

/// OLS fit y = intercept + slope * x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::Parameter("fit inputs have different lengths".into()));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "linear fit needs >= 2 points, got {n}"
        )));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all abscissae identical".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
        n,
    })
}

/// Fit |values| ~ C * r^{-p} over (radii, values); returns (p, C, R^2).
/// Zero values are dropped; fewer than two survivors is an error.
pub fn power_law_fit(radii: &[f64], values: &[f64]) -> Result<LinearFit> {
    let mut lx = Vec::with_capacity(radii.len());
    let mut ly = Vec::with_capacity(values.len());
    for (&r, &v) in radii.iter().zip(values) {
        if r > 0.0 && v.abs() > 1e-300 {
            lx.push(r.ln());
            ly.push(v.abs().ln());
        }
    }
    linear_fit(&lx, &ly)
}

/// Multi-variate OLS: y = sum_j beta_j * x_j, solved by normal equations.
/// Small systems only (the sweeps fit 2-3 coefficients).
pub fn least_squares(design: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let n = design.len();
    if n == 0 || n != y.len() {
        return Err(Error::InsufficientData("empty or mismatched design".into()));
    }
    let p = design[0].len();
    if n < p {
        return Err(Error::InsufficientData(format!(
            "need >= {p} rows, got {n}"
        )));
    }
    // Normal equations A^T A beta = A^T y.
    let mut ata = vec![vec![0.0; p]; p];
    let mut aty = vec![0.0; p];
    for (row, &yi) in design.iter().zip(y) {
        for j in 0..p {
            aty[j] += row[j] * yi;
            for l in 0..p {
                ata[j][l] += row[j] * row[l];
            }
        }
    }
    // Gaussian elimination with partial pivoting.
    let mut a = ata;
    let mut b = aty;
    for col in 0..p {
        let piv = (col..p)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[piv][col].abs() < 1e-14 {
            return Err(Error::InsufficientData("singular normal equations".into()));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in 0..p {
            if row == col {
                continue;
            }
            let f = a[row][col] / a[col][col];
            #[allow(clippy::needless_range_loop)]
            for l in col..p {
                a[row][l] -= f * a[col][l];
            }
            b[row] -= f * b[col];
        }
    }
    Ok((0..p).map(|i| b[i] / a[i][i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [2.5, 4.5, 6.5, 8.5];
        let f = linear_fit(&x, &y).unwrap();
        assert_abs_diff_eq!(f.slope, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.intercept, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(f.r_squared, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn power_law_recovers_exponent() {
        let radii: Vec<f64> = (1..=8).map(|i| 2.0f64.powi(i)).collect();
        let values: Vec<f64> = radii.iter().map(|r| 3.0 * r.powf(-1.5)).collect();
        let f = power_law_fit(&radii, &values).unwrap();
        assert_abs_diff_eq!(-f.slope, 1.5, epsilon = 1e-10);
    }

    #[test]
    fn least_squares_two_coefficients() {
        // y = 2 a - 3 b
        let design = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
            vec![2.0, -1.0],
        ];
        let y = vec![2.0, -3.0, -1.0, 7.0];
        let beta = least_squares(&design, &y).unwrap();
        assert_abs_diff_eq!(beta[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(beta[1], -3.0, epsilon = 1e-12);
    }
}
