//! Least-squares line fits used to read off decay rates and convergence slopes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Pearson correlation of the data.
    pub r: f64,
    pub r2: f64,
}

/// Ordinary least squares `y ≈ slope x + intercept`. Needs two distinct xs.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> LineFit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let r = if syy > 0.0 { sxy / (sxx * syy).sqrt() } else { 1.0 };
    LineFit {
        slope,
        intercept: my - slope * mx,
        r,
        r2: r * r,
    }
}

/// Log-log fit `log y ≈ slope log x + intercept`; returns `(slope, intercept, r²)`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::Shape {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 3 {
        return Err(Error::Domain(format!("need at least 3 points, got {}", xs.len())));
    }
    if let Some(v) = xs.iter().chain(ys).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!("log-log fit needs positive finite values, got {v}")));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    if lx.iter().all(|x| (x - lx[0]).abs() < 1e-300) {
        return Err(Error::Domain("all abscissae coincide".into()));
    }
    let f = fit_line(&lx, &ly);
    Ok((f.slope, f.intercept, f.r2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_laws() {
        let xs = [2.0, 3.0, 5.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| x.powi(-3)).collect();
        let (s, _, r2) = fit_slope(&xs, &ys).unwrap();
        assert!((s + 3.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 0.7 * x.powi(-2)).collect();
        let (s, c, _) = fit_slope(&xs, &ys).unwrap();
        assert!((s + 2.0).abs() < 1e-12 && (c - 0.7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(fit_slope(&[1.0, 2.0, 3.0], &[1.0, 0.0, 2.0]), Err(Error::Domain(_))));
        assert!(matches!(fit_slope(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::Domain(_))));
    }
}
