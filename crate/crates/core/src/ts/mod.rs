//! Short-panel time-series forecasters and inverse-variance ensembling.
//!
//! Every model is fitted on a training window whose last observation sits at
//! time index `T`; forecasts are requested by horizon `h >= 1`, i.e. for time
//! `T + h`.

mod ari;
mod ll;
mod nb;

pub use ari::{fit_ari1, fit_ari2, impulse_response_sq_sum, Ari1Fit, Ari2Fit};
pub use ll::{fit_ll_constrained, fit_ll_constrained_at, LlFit};
pub use nb::{fit_nb, fit_nb_last_epoch, forecast_nb, pooled_s2, NbFit};

use crate::error::{Error, Result};

/// Predictive mean and variance of one unit at one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Forecast {
    pub mean: f64,
    /// Non-negative, or `+inf` when the forecast carries no information.
    pub variance: f64,
    /// Whether the underlying model could be estimated.
    pub fitted: bool,
}

impl Forecast {
    pub fn new(mean: f64, variance: f64) -> Self {
        Self {
            mean,
            variance,
            fitted: true,
        }
    }

    pub fn unestimable() -> Self {
        Self {
            mean: f64::NAN,
            variance: f64::INFINITY,
            fitted: false,
        }
    }

    /// Whether this forecast receives non-zero weight in an ensemble.
    pub fn is_informative(&self) -> bool {
        self.fitted && self.variance.is_finite() && self.mean.is_finite()
    }

    /// Inverse-variance weight; 0 for uninformative forecasts and `+inf`
    /// for exact ones.
    pub fn weight(&self) -> f64 {
        if self.is_informative() {
            1.0 / self.variance
        } else {
            0.0
        }
    }
}

/// Common interface of the fitted forecasters.
pub trait TsModel {
    fn forecast_mean(&self, h: usize) -> f64;
    fn forecast_variance(&self, h: usize) -> f64;

    /// Adds the model's own step-`h` increment to `level`, so the forecast
    /// path follows adjustments made to earlier epochs. `h` counts epochs
    /// after the end of training and must be at least 1.
    fn step_mean(&self, level: f64, h: usize) -> f64 {
        level + self.forecast_mean(h) - self.forecast_mean(h - 1)
    }

    fn forecast(&self, h: usize) -> Forecast {
        Forecast::new(self.forecast_mean(h), self.forecast_variance(h))
    }

    /// [`TsModel::step_mean`] paired with the `h`-step variance.
    fn step(&self, level: f64, h: usize) -> Forecast {
        Forecast::new(self.step_mean(level, h), self.forecast_variance(h))
    }
}


const EXACT_AGREEMENT: f64 = 1e-9;

fn agree(a: f64, b: f64) -> bool {
    (a - b).abs() <= EXACT_AGREEMENT * a.abs().max(b.abs()).max(1.0)
}

/// Inverse-variance weighted average of `forecasts`.
///
/// Members with infinite variance get zero weight. A zero-variance member
/// dominates and is returned as is; several zero-variance members must agree.
/// With no informative member the result is [`Forecast::unestimable`].
pub fn ensemble(forecasts: &[Forecast]) -> Result<Forecast> {
    let informative: Vec<&Forecast> = forecasts.iter().filter(|f| f.is_informative()).collect();
    if informative.is_empty() {
        return Ok(Forecast::unestimable());
    }
    let exact: Vec<&Forecast> = informative.iter().copied().filter(|f| f.variance == 0.0).collect();
    if let Some(first) = exact.first() {
        for f in &exact[1..] {
            if !agree(first.mean, f.mean) {
                return Err(Error::InconsistentForecasts(first.mean, f.mean));
            }
        }
        return Ok(Forecast::new(first.mean, 0.0));
    }
    let (mut sw, mut swx) = (0.0, 0.0);
    for f in informative {
        let w = 1.0 / f.variance;
        sw += w;
        swx += w * f.mean;
    }
    Ok(Forecast::new(swx / sw, 1.0 / sw))
}
