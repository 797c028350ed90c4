use crate::error::{Error, Result};

/// Exogenous national path for the projected epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub years: Vec<i32>,
    pub total_pop: Vec<f64>,
    /// Urban fraction per projected epoch; extrapolated from the training
    /// panel when absent.
    pub urban_share: Option<Vec<f64>>,
}

pub const MAX_URBAN_SHARE: f64 = 0.99;
const MIN_URBAN_SHARE: f64 = 1e-6;

impl Scenario {
    pub fn new(name: impl Into<String>, years: Vec<i32>, total_pop: Vec<f64>, urban_share: Option<Vec<f64>>) -> Result<Self> {
        let s = Self {
            name: name.into(),
            years,
            total_pop,
            urban_share,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.years.len()
    }

    pub fn is_empty(&self) -> bool {
        self.years.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_pop.len() != self.years.len() {
            return Err(Error::InvalidInput("scenario years and totals differ in length".into()));
        }
        if self.years.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("scenario years must be strictly increasing".into()));
        }
        if let Some(y) = self.total_pop.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::InvalidInput(format!("scenario total population {y} must be positive")));
        }
        if let Some(sh) = &self.urban_share {
            if sh.len() != self.years.len() {
                return Err(Error::InvalidInput("scenario urban shares differ in length".into()));
            }
            if let Some(v) = sh.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
                return Err(Error::InvalidInput(format!("urban share {v} must lie in (0, 1)")));
            }
        }
        Ok(())
    }

    /// First `n` epochs of the scenario.
    pub fn head(&self, n: usize) -> Self {
        Self {
            name: self.name.clone(),
            years: self.years[..n].to_vec(),
            total_pop: self.total_pop[..n].to_vec(),
            urban_share: self.urban_share.as_ref().map(|s| s[..n].to_vec()),
        }
    }
}

/// Fits `share = c0 + c1 ln t` by OLS on the observed epochs and evaluates it
/// at `future_times`, clamped to `(0, 0.99]`.
pub fn extrapolate_urban_share(times: &[f64], shares: &[f64], future_times: &[f64]) -> Result<Vec<f64>> {
    if times.len() != shares.len() || times.len() < 2 {
        return Err(Error::Unestimable("urban share trend needs 2 observed epochs".into()));
    }
    if shares.iter().any(|s| !(0.0..=1.0).contains(s)) || times.iter().any(|&t| t <= 0.0) {
        return Err(Error::InvalidInput("observed urban shares must lie in [0, 1]".into()));
    }
    let n = times.len() as f64;
    let x: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let xm = x.iter().sum::<f64>() / n;
    let ym = shares.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Unestimable("urban share trend needs distinct times".into()));
    }
    let sxy: f64 = x.iter().zip(shares).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let c1 = sxy / sxx;
    let c0 = ym - c1 * xm;
    Ok(future_times
        .iter()
        .map(|t| (c0 + c1 * t.ln()).clamp(MIN_URBAN_SHARE, MAX_URBAN_SHARE))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_log_trend() {
        let times: Vec<f64> = (1..=11).map(f64::from).collect();
        let shares: Vec<f64> = times.iter().map(|t| 0.5 + 0.1 * t.ln()).collect();
        let out = extrapolate_urban_share(&times, &shares, &[12.0, 20.0]).unwrap();
        assert!((out[0] - (0.5 + 0.1 * 12f64.ln())).abs() < 1e-12);
        assert!((out[1] - (0.5 + 0.1 * 20f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn clamped_at_upper_bound() {
        let out = extrapolate_urban_share(&[1.0, 2.0], &[0.9, 0.98], &[100.0]).unwrap();
        assert_eq!(out, vec![MAX_URBAN_SHARE]);
    }

    #[test]
    fn validation() {
        assert!(Scenario::new("x", vec![2025], vec![-1.0], None).is_err());
        assert!(Scenario::new("x", vec![2025], vec![1.0], Some(vec![1.0])).is_err());
        assert!(Scenario::new("x", vec![2025, 2030], vec![1.0, 2.0], None).is_ok());
    }
}
