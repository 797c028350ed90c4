//! Log-linear-in-time regression `P_t = a0 + a1 ln t`, fitted by weighted
//! least squares (weights `t²`) subject to passing exactly through the last
//! training observation.

use super::TsModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LlFit {
    pub a0: f64,
    pub a1: f64,
    /// Unweighted residual variance with divisor `n - 1`.
    pub sigma2: f64,
    /// Lagrange multiplier of the terminal constraint.
    pub lambda: f64,
    /// Time index of the last training observation.
    pub t_last: f64,
    /// `(XᵀWX)⁻¹` with `W = diag(t)`, used by the predictive variance.
    pub leverage_inv: [[f64; 2]; 2],
    pub n_obs: usize,
}

type Mat2 = [[f64; 2]; 2];

fn inv2(m: Mat2) -> Option<Mat2> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let scale = m[0][0].abs().max(m[1][1].abs()).max(m[0][1].abs());
    if !det.is_finite() || det.abs() <= 1e-14 * scale * scale {
        return None;
    }
    Some([
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ])
}

fn mul2(m: &Mat2, v: [f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// `XᵀWX` for rows `[1, ln t]` and diagonal weights `w(t)`.
fn gram(times: &[f64], weight: impl Fn(f64) -> f64) -> Mat2 {
    let mut m = [[0.0; 2]; 2];
    for &t in times {
        let (w, x) = (weight(t), t.ln());
        m[0][0] += w;
        m[0][1] += w * x;
        m[1][1] += w * x * x;
    }
    m[1][0] = m[0][1];
    m
}

/// Constrained fit on times `1..=n`.
pub fn fit_ll_constrained(series: &[f64]) -> Result<LlFit> {
    let times: Vec<f64> = (1..=series.len()).map(|t| t as f64).collect();
    fit_ll_constrained_at(&times, series)
}

/// Constrained fit on explicit, strictly increasing time indices (`t >= 1`).
pub fn fit_ll_constrained_at(times: &[f64], series: &[f64]) -> Result<LlFit> {
    if times.len() != series.len() {
        return Err(Error::InvalidInput("times and series differ in length".into()));
    }
    if series.len() < 2 {
        return Err(Error::Unestimable(format!(
            "LL needs 2 observations, got {}",
            series.len()
        )));
    }
    if series.iter().chain(times).any(|v| !v.is_finite()) || times.iter().any(|&t| t <= 0.0) {
        return Err(Error::InvalidInput("LL: times must be positive and values finite".into()));
    }
    let n = series.len();
    let m = gram(times, |t| t * t);
    let m_inv = inv2(m).ok_or_else(|| Error::Unestimable("LL design is singular".into()))?;
    let mut xtvp = [0.0; 2];
    for (&t, &p) in times.iter().zip(series) {
        let w = t * t;
        xtvp[0] += w * p;
        xtvp[1] += w * t.ln() * p;
    }
    let a_free = mul2(&m_inv, xtvp);
    let t_last = times[n - 1];
    let x_last = [1.0, t_last.ln()];
    let p_last = series[n - 1];
    let m_inv_x = mul2(&m_inv, x_last);
    let lambda = (dot2(x_last, a_free) - p_last) / dot2(x_last, m_inv_x);
    let a0 = a_free[0] - m_inv_x[0] * lambda;
    let a1 = a_free[1] - m_inv_x[1] * lambda;

    let rss: f64 = times
        .iter()
        .zip(series)
        .map(|(&t, &p)| (p - a0 - a1 * t.ln()).powi(2))
        .sum();
    let leverage_inv = inv2(gram(times, |t| t))
        .ok_or_else(|| Error::Unestimable("LL variance design is singular".into()))?;
    Ok(LlFit {
        a0,
        a1,
        sigma2: rss / (n - 1) as f64,
        lambda,
        t_last,
        leverage_inv,
        n_obs: n,
    })
}

impl LlFit {
    pub fn value_at(&self, t: f64) -> f64 {
        self.a0 + self.a1 * t.ln()
    }

    /// `σ² (1 + x'(XᵀWX)⁻¹x)` with `x = [1, ln t0]`.
    pub fn variance_at(&self, t0: f64) -> f64 {
        let x = [1.0, t0.ln()];
        self.sigma2 * (1.0 + dot2(x, mul2(&self.leverage_inv, x)))
    }
}

impl TsModel for LlFit {
    fn forecast_mean(&self, h: usize) -> f64 {
        self.value_at(self.t_last + h as f64)
    }

    fn forecast_variance(&self, h: usize) -> f64 {
        if self.n_obs < 3 {
            return f64::INFINITY;
        }
        self.variance_at(self.t_last + h as f64)
    }
}
