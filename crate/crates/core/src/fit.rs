use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Least-squares line through (log x, log y).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square deviation of log y from the fitted line.
    pub rms_residual: f64,
    pub points: usize,
}

impl SlopeFit {
    pub fn within(&self, target: f64, tol: f64) -> bool {
        (self.slope - target).abs() <= tol
    }
}

/// Fits log y = slope·log x + intercept. Needs at least `min_points`
/// pairs, all strictly positive.
pub fn loglog_fit(xs: &[f64], ys: &[f64], min_points: usize) -> Result<SlopeFit> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(alloc::format!("{} abscissae vs {} values", xs.len(), ys.len())));
    }
    let positive = xs.iter().zip(ys).filter(|(x, y)| **x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite()).count();
    if positive != xs.len() || xs.len() < min_points.max(2) {
        return Err(Error::RateFit { needed: min_points.max(2), got: positive.min(xs.len()) });
    }
    let lx: Vec<f64> = xs.iter().map(|&x| libm::log(x)).collect();
    let ly: Vec<f64> = ys.iter().map(|&y| libm::log(y)).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("rate fit needs distinct abscissae".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let r = y - slope * x - intercept;
            r * r
        })
        .sum();
    Ok(SlopeFit { slope, intercept, rms_residual: libm::sqrt(ss / n), points: lx.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let xs: Vec<f64> = (0..6).map(|k| 10f64.powi(-k)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.sqrt()).collect();
        let f = loglog_fit(&xs, &ys, 5).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12);
        assert!(f.intercept.abs() < 1e-12);
    }

    #[test]
    fn constant_has_zero_slope() {
        let xs = [1.0, 2.0, 4.0, 8.0, 16.0];
        let f = loglog_fit(&xs, &[3.0; 5], 5).unwrap();
        assert!(f.slope.abs() < 1e-14);
    }

    #[test]
    fn rejects_nonpositive_or_short_input() {
        assert!(loglog_fit(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 0.0, 1.0, 1.0, 1.0], 5).is_err());
        assert!(loglog_fit(&[1.0, 2.0], &[1.0, 2.0], 5).is_err());
    }
}
