//! ARIMA(1,1,0) and ARIMA(2,1,0) without intercept, estimated by conditional
//! least squares on first differences.

use nalgebra::{DMatrix, DVector};

use super::TsModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ari1Fit {
    pub rho: f64,
    pub sigma2: f64,
    pub last_diff: f64,
    pub last_level: f64,
    pub n_obs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ari2Fit {
    pub rho1: f64,
    pub rho2: f64,
    pub sigma2: f64,
    /// Most recent difference.
    pub last_diff: f64,
    /// Difference before `last_diff`.
    pub prev_diff: f64,
    pub last_level: f64,
    pub n_obs: usize,
}

fn check_series(series: &[f64], min_len: usize, model: &str) -> Result<Vec<f64>> {
    if series.len() < min_len {
        return Err(Error::Unestimable(format!(
            "{model} needs {min_len} observations, got {}",
            series.len()
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{model}: series contains non-finite values")));
    }
    Ok(series.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Fits `ΔP[t+1] = ρ ΔP[t] + ε`. Needs at least three observations.
pub fn fit_ari1(series: &[f64]) -> Result<Ari1Fit> {
    let d = check_series(series, 3, "ARI1")?;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for w in d.windows(2) {
        sxx += w[0] * w[0];
        sxy += w[0] * w[1];
    }
    let rho = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let rss: f64 = d.windows(2).map(|w| (w[1] - rho * w[0]).powi(2)).sum();
    let rows = d.len() - 1;
    Ok(Ari1Fit {
        rho,
        sigma2: rss / rows as f64,
        last_diff: d[d.len() - 1],
        last_level: series[series.len() - 1],
        n_obs: series.len(),
    })
}

/// Fits `ΔP[t+1] = ρ1 ΔP[t] + ρ2 ΔP[t-1] + ε`. Needs at least four
/// observations; rank-deficient designs get the minimum-norm solution.
pub fn fit_ari2(series: &[f64]) -> Result<Ari2Fit> {
    let d = check_series(series, 4, "ARI2")?;
    let rows = d.len() - 2;
    let x = DMatrix::from_fn(rows, 2, |r, c| d[r + 1 - c]);
    let y = DVector::from_fn(rows, |r, _| d[r + 2]);
    let (rho1, rho2) = if x.iter().all(|&v| v == 0.0) {
        (0.0, 0.0)
    } else {
        let svd = x.clone().svd(true, true);
        let tol = svd.singular_values.max() * 1e-12;
        let beta = svd
            .solve(&y, tol)
            .map_err(|e| Error::Unestimable(format!("ARI2 least squares: {e}")))?;
        (beta[0], beta[1])
    };
    let rss: f64 = (0..rows)
        .map(|r| (y[r] - rho1 * x[(r, 0)] - rho2 * x[(r, 1)]).powi(2))
        .sum();
    Ok(Ari2Fit {
        rho1,
        rho2,
        sigma2: rss / rows as f64,
        last_diff: d[d.len() - 1],
        prev_diff: d[d.len() - 2],
        last_level: series[series.len() - 1],
        n_obs: series.len(),
    })
}

/// `Σ_{j<steps} ψ_j²` for the AR(2) impulse response
/// `ψ_0 = 1, ψ_1 = ρ1, ψ_j = ρ1 ψ_{j-1} + ρ2 ψ_{j-2}`.
pub fn impulse_response_sq_sum(rho1: f64, rho2: f64, steps: usize) -> f64 {
    let (mut prev, mut cur) = (0.0, 1.0);
    let mut sum = 0.0;
    for _ in 0..steps {
        sum += cur * cur;
        let next = rho1 * cur + rho2 * prev;
        prev = cur;
        cur = next;
    }
    sum
}

impl TsModel for Ari1Fit {
    fn forecast_mean(&self, h: usize) -> f64 {
        let mut level = self.last_level;
        let mut diff = self.last_diff;
        for _ in 0..h {
            diff *= self.rho;
            level += diff;
        }
        level
    }

    /// `σ² (1 - ρ^{2s}) / (1 - ρ²)`, evaluated as the geometric sum so the
    /// unit-root case reduces to `σ² s`.
    fn forecast_variance(&self, h: usize) -> f64 {
        if self.n_obs < 4 {
            // one regression row for one coefficient: σ² is not identified
            return f64::INFINITY;
        }
        self.sigma2 * impulse_response_sq_sum(self.rho, 0.0, h)
    }
}

impl TsModel for Ari2Fit {
    fn forecast_mean(&self, h: usize) -> f64 {
        let mut level = self.last_level;
        let (mut d1, mut d2) = (self.last_diff, self.prev_diff);
        for _ in 0..h {
            let next = self.rho1 * d1 + self.rho2 * d2;
            d2 = d1;
            d1 = next;
            level += next;
        }
        level
    }

    fn forecast_variance(&self, h: usize) -> f64 {
        if self.n_obs < 6 {
            return f64::INFINITY;
        }
        self.sigma2 * impulse_response_sq_sum(self.rho1, self.rho2, h)
    }
}
