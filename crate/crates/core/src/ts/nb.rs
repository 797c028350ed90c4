//! Mapping of neighbor-mean forecasts onto a cell: `p = b q + e`.

use super::Forecast;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NbFit {
    pub b: f64,
    pub var_b: f64,
    /// Error variance of the mapping; pooled across cells by the engine.
    pub s2: f64,
    /// Residual sum of squares of this cell's fit.
    pub rss: f64,
    /// Residual degrees of freedom of this cell's fit.
    pub dof: usize,
}

fn check(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::InvalidInput("p and q series must be non-empty and paired".into()));
    }
    if p.iter().chain(q).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("NB series contain non-finite values".into()));
    }
    Ok(())
}

/// No-intercept least squares of `p` on `q` over every training epoch.
pub fn fit_nb(p: &[f64], q: &[f64]) -> Result<NbFit> {
    check(p, q)?;
    let sqq: f64 = q.iter().map(|v| v * v).sum();
    if sqq == 0.0 {
        return Err(Error::Unestimable("neighbor population is identically zero".into()));
    }
    let spq: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    let b = spq / sqq;
    let rss: f64 = p.iter().zip(q).map(|(a, c)| (a - b * c).powi(2)).sum();
    let dof = p.len() - 1;
    let s2 = if dof > 0 { rss / dof as f64 } else { 0.0 };
    Ok(NbFit {
        b,
        var_b: s2 / sqq,
        s2,
        rss,
        dof,
    })
}

/// Ratio of the last observations, `b = p_T / q_T`. The coefficient is
/// treated as exact; residuals over the whole window still feed `s²`.
pub fn fit_nb_last_epoch(p: &[f64], q: &[f64]) -> Result<NbFit> {
    check(p, q)?;
    let (pl, ql) = (p[p.len() - 1], q[q.len() - 1]);
    if ql == 0.0 {
        return Err(Error::Unestimable("last neighbor population is zero".into()));
    }
    let b = pl / ql;
    let rss: f64 = p.iter().zip(q).map(|(a, c)| (a - b * c).powi(2)).sum();
    let dof = p.len() - 1;
    Ok(NbFit {
        b,
        var_b: 0.0,
        s2: if dof > 0 { rss / dof as f64 } else { 0.0 },
        rss,
        dof,
    })
}

/// Panel-level error variance `Σ rss / Σ dof`.
pub fn pooled_s2(fits: &[NbFit]) -> f64 {
    let (rss, dof) = fits
        .iter()
        .fold((0.0, 0usize), |(r, d), f| (r + f.rss, d + f.dof));
    if dof == 0 {
        0.0
    } else {
        rss / dof as f64
    }
}

/// Mean `b q̂` and variance `V[q̂]V[b] + q̂²V[b] + V[q̂]b² + s²`.
pub fn forecast_nb(fit: &NbFit, q: Forecast) -> Forecast {
    if !q.is_informative() {
        return Forecast::unestimable();
    }
    let product_var = q.variance * fit.var_b + q.mean * q.mean * fit.var_b + q.variance * fit.b * fit.b;
    Forecast::new(fit.b * q.mean, product_var + fit.s2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_proportionality() {
        let q = [10.0, 20.0, 15.0, 30.0];
        let p: Vec<f64> = q.iter().map(|v| 2.0 * v).collect();
        let f = fit_nb(&p, &q).unwrap();
        assert_eq!((f.b, f.var_b, f.s2), (2.0, 0.0, 0.0));
        let fc = forecast_nb(&NbFit { s2: 0.5, ..f }, Forecast::new(40.0, 3.0));
        assert_eq!(fc.mean, 80.0);
        assert_eq!(fc.variance, 4.0 * 3.0 + 0.5);
    }

    #[test]
    fn product_formula_collapses_to_s2() {
        let f = NbFit {
            b: 1.3,
            var_b: 0.0,
            s2: 7.0,
            rss: 0.0,
            dof: 1,
        };
        assert_eq!(forecast_nb(&f, Forecast::new(100.0, 0.0)).variance, 7.0);
    }

    #[test]
    fn zero_neighbors_unestimable() {
        assert!(matches!(fit_nb(&[1.0, 2.0], &[0.0, 0.0]), Err(Error::Unestimable(_))));
        let f = fit_nb(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert!(!forecast_nb(&f, Forecast::unestimable()).fitted);
    }

    #[test]
    fn last_epoch_ratio() {
        let f = fit_nb_last_epoch(&[5.0, 6.0, 9.0], &[2.0, 2.0, 3.0]).unwrap();
        assert_eq!(f.b, 3.0);
        assert_eq!(f.var_b, 0.0);
        assert!(f.s2 > 0.0);
    }

    #[test]
    fn pooling() {
        let a = NbFit {
            b: 1.0,
            var_b: 0.0,
            s2: 0.0,
            rss: 6.0,
            dof: 2,
        };
        let b = NbFit { rss: 2.0, dof: 2, ..a };
        assert_eq!(pooled_s2(&[a, b]), 2.0);
        assert_eq!(pooled_s2(&[]), 0.0);
    }
}
