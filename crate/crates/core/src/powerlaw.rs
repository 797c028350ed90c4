//! Country-level rank-size model.
//!
//! Each epoch gets an OLS fit of `ln P = A + B ln(r - 0.5)`. The coefficient
//! paths `A_t` and `B_t` are then regressed on `[1, ln t]` with weights `t²`,
//! and the slopes of those paths drive the growth factor
//! `1 + (a1_A + a1_B ln(r - 0.5)) / t` applied to each city.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ts::Forecast;

/// Default number of bootstrap replicates.
pub const DEFAULT_N_BOOT: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankSizeFit {
    /// Population scale `A` (log persons).
    pub intercept: f64,
    /// Power coefficient `B`.
    pub slope: f64,
    pub var_intercept: f64,
    pub var_slope: f64,
    pub sigma2: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoeffPath {
    pub a0_a: f64,
    pub a1_a: f64,
    pub a0_b: f64,
    pub a1_b: f64,
    pub var_a1_a: f64,
    pub var_a1_b: f64,
    pub sigma2_a: f64,
    pub sigma2_b: f64,
}

/// Bias-corrected log rank.
pub fn log_rank(rank: usize) -> f64 {
    (rank as f64 - 0.5).ln()
}

/// OLS rank-size fit. Populations need not be sorted.
pub fn fit_rank_size(populations: &[f64]) -> Result<RankSizeFit> {
    let n = populations.len();
    if n < 3 {
        return Err(Error::Unestimable(format!("rank-size fit needs 3 cities, got {n}")));
    }
    if populations.iter().any(|&p| !(p.is_finite() && p > 0.0)) {
        return Err(Error::InvalidInput("rank-size fit needs positive populations".into()));
    }
    let mut sorted = populations.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let x: Vec<f64> = (1..=n).map(log_rank).collect();
    let y: Vec<f64> = sorted.iter().map(|p| p.ln()).collect();
    let nf = n as f64;
    let xm = x.iter().sum::<f64>() / nf;
    let ym = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = x
        .iter()
        .zip(&y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let sigma2 = rss / (nf - 2.0);
    Ok(RankSizeFit {
        intercept,
        slope,
        var_intercept: sigma2 * (1.0 / nf + xm * xm / sxx),
        var_slope: sigma2 / sxx,
        sigma2,
        n,
    })
}

/// Weighted regression of `y` on `[1, ln t]` with weights `t²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogTimeLine {
    pub a0: f64,
    pub a1: f64,
    pub var_a0: f64,
    pub var_a1: f64,
    pub sigma2: f64,
}

pub fn fit_log_time_line(times: &[f64], y: &[f64]) -> Result<LogTimeLine> {
    let n = times.len();
    if n < 2 || y.len() != n {
        return Err(Error::Unestimable(format!("coefficient path needs 2 epochs, got {n}")));
    }
    let (mut s0, mut s1, mut s2, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&t, &v) in times.iter().zip(y) {
        let (w, x) = (t * t, t.ln());
        s0 += w;
        s1 += w * x;
        s2 += w * x * x;
        sy += w * v;
        sxy += w * x * v;
    }
    let det = s0 * s2 - s1 * s1;
    if !(det.is_finite() && det > 1e-12 * s0 * s2) {
        return Err(Error::Unestimable("coefficient path design is singular".into()));
    }
    let a0 = (s2 * sy - s1 * sxy) / det;
    let a1 = (s0 * sxy - s1 * sy) / det;
    // residuals at the rounding level of the data count as exact fits
    let wrss: f64 = times
        .iter()
        .zip(y)
        .map(|(&t, &v)| {
            let fit = a0 + a1 * t.ln();
            let e = v - fit;
            let resolution = 16.0 * f64::EPSILON * (v.abs() + a0.abs() + (a1 * t.ln()).abs());
            if e.abs() <= resolution {
                0.0
            } else {
                t * t * e * e
            }
        })
        .sum();
    let sigma2 = if n > 2 { wrss / (n - 2) as f64 } else { 0.0 };
    Ok(LogTimeLine {
        a0,
        a1,
        var_a0: sigma2 * s2 / det,
        var_a1: sigma2 * s0 / det,
        sigma2,
    })
}

/// Fits the evolution of `A_t` and `B_t`. `fits` pairs each epoch's time
/// index with its rank-size fit.
pub fn fit_coeff_paths(fits: &[(f64, RankSizeFit)]) -> Result<CoeffPath> {
    let times: Vec<f64> = fits.iter().map(|f| f.0).collect();
    let a: Vec<f64> = fits.iter().map(|f| f.1.intercept).collect();
    let b: Vec<f64> = fits.iter().map(|f| f.1.slope).collect();
    let la = fit_log_time_line(&times, &a)?;
    let lb = fit_log_time_line(&times, &b)?;
    Ok(CoeffPath {
        a0_a: la.a0,
        a1_a: la.a1,
        a0_b: lb.a0,
        a1_b: lb.a1,
        var_a1_a: la.var_a1,
        var_a1_b: lb.var_a1,
        sigma2_a: la.sigma2,
        sigma2_b: lb.sigma2,
    })
}

/// `1 + (a1_A + a1_B ln(rank - 0.5)) / t`.
pub fn growth_factor(rank: usize, t: f64, a1_a: f64, a1_b: f64) -> f64 {
    1.0 + (a1_a + a1_b * log_rank(rank)) / t
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlProjection {
    pub value: f64,
    /// The growth factor was not positive and the value was clamped to 0.
    pub clamped: bool,
}

/// Projects a city of the given rank one epoch ahead from time index `t`.
pub fn pl_project(population: f64, rank: usize, t: f64, path: &CoeffPath) -> Result<PlProjection> {
    if rank == 0 || t < 1.0 {
        return Err(Error::InvalidInput(format!("rank {rank} and time {t} must be >= 1")));
    }
    let f = growth_factor(rank, t, path.a1_a, path.a1_b);
    if f <= 0.0 {
        return Ok(PlProjection {
            value: 0.0,
            clamped: true,
        });
    }
    Ok(PlProjection {
        value: population * f,
        clamped: false,
    })
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut ChaCha8Rng, mean: f64, var: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    mean + var.max(0.0).sqrt() * z
}

/// SplitMix64 finalizer, used to derive independent seeds per unit.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Bootstrap draws of the coefficient-path slopes.
///
/// Replicate `l` draws `A_t`, `B_t` around every epoch's estimate, refits both
/// paths, and draws `a1_A`, `a1_B` from the refitted normals. Each replicate
/// has its own RNG stream, so results do not depend on thread scheduling.
#[derive(Debug, Clone)]
pub struct PlBootstrap {
    seed: u64,
    draws: Vec<(f64, f64)>,
}

impl PlBootstrap {
    pub fn new(fits: &[(f64, RankSizeFit)], n_boot: usize, seed: u64) -> Result<Self> {
        if n_boot < 2 {
            return Err(Error::InvalidInput(format!("n_boot must be at least 2, got {n_boot}")));
        }
        let times: Vec<f64> = fits.iter().map(|f| f.0).collect();
        let draws = (0..n_boot as u64)
            .into_par_iter()
            .map(|l| {
                let mut rng = stream_rng(seed, l);
                let mut a = Vec::with_capacity(fits.len());
                let mut b = Vec::with_capacity(fits.len());
                for (_, f) in fits {
                    a.push(normal(&mut rng, f.intercept, f.var_intercept));
                    b.push(normal(&mut rng, f.slope, f.var_slope));
                }
                let la = fit_log_time_line(&times, &a)?;
                let lb = fit_log_time_line(&times, &b)?;
                let a1_a = normal(&mut rng, la.a1, la.var_a1);
                let a1_b = normal(&mut rng, lb.a1, lb.var_a1);
                Ok((a1_a, a1_b))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { seed, draws })
    }

    pub fn n_boot(&self) -> usize {
        self.draws.len()
    }

    pub fn draws(&self) -> &[(f64, f64)] {
        &self.draws
    }

    /// Sample variance (divisor `n_boot - 1`) of the projected population.
    /// `unit_key` selects the RNG streams used for the population draws.
    pub fn variance(&self, current: Forecast, rank: usize, t: f64, unit_key: u64) -> f64 {
        let p_seed = mix(self.seed ^ mix(unit_key));
        let values: Vec<f64> = self
            .draws
            .iter()
            .enumerate()
            .map(|(l, &(a1_a, a1_b))| {
                let mut rng = stream_rng(p_seed, l as u64);
                let p = normal(&mut rng, current.mean, current.variance);
                p * growth_factor(rank, t, a1_a, a1_b)
            })
            .collect();
        // Welford's update keeps identical draws at exactly zero spread
        let (mut mean, mut m2) = (0.0, 0.0);
        for (k, v) in values.iter().enumerate() {
            let d = v - mean;
            mean += d / (k + 1) as f64;
            m2 += d * (v - mean);
        }
        m2 / (values.len() - 1) as f64
    }
}

/// Bootstrap variance of the power-law projection of one city.
pub fn bootstrap_pl_variance(
    fits: &[(f64, RankSizeFit)],
    current: Forecast,
    rank: usize,
    t: f64,
    n_boot: usize,
    seed: u64,
) -> Result<f64> {
    if !current.is_informative() {
        return Err(Error::InvalidInput("bootstrap needs a finite-variance population".into()));
    }
    Ok(PlBootstrap::new(fits, n_boot, seed)?.variance(current, rank, t, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn exact_sizes(a: f64, b: f64, n: usize) -> Vec<f64> {
        (1..=n).map(|r| (a + b * log_rank(r)).exp()).collect()
    }

    #[test]
    fn noiseless_recovery() {
        let f = fit_rank_size(&exact_sizes(10.0, -1.0, 100)).unwrap();
        assert!((f.intercept - 10.0).abs() < 1e-10);
        assert!((f.slope + 1.0).abs() < 1e-10);
        assert!(f.sigma2 < 1e-20);
    }

    #[test]
    fn ties_and_order() {
        let mut sizes = exact_sizes(10.0, -1.0, 10);
        sizes[4] = sizes[3];
        sizes.reverse();
        let f = fit_rank_size(&sizes).unwrap();
        assert!(f.slope < 0.0 && f.var_slope > 0.0);
        assert!(fit_rank_size(&sizes[..2]).is_err());
    }

    #[test]
    fn path_recovery() {
        let fits: Vec<(f64, RankSizeFit)> = (1..=11)
            .map(|t| {
                let t = t as f64;
                let f = RankSizeFit {
                    intercept: 2.0 + 0.5 * t.ln(),
                    slope: -1.0 - 0.1 * t.ln(),
                    var_intercept: 0.0,
                    var_slope: 0.0,
                    sigma2: 0.0,
                    n: 10,
                };
                (t, f)
            })
            .collect();
        let p = fit_coeff_paths(&fits).unwrap();
        assert_relative_eq!(p.a0_a, 2.0, max_relative = 1e-10);
        assert_relative_eq!(p.a1_a, 0.5, max_relative = 1e-10);
        assert_relative_eq!(p.a1_b, -0.1, max_relative = 1e-10);
        assert!(p.sigma2_a < 1e-20);
    }

    #[test]
    fn projection_examples() {
        let path = CoeffPath {
            a0_a: 0.0,
            a1_a: 0.424,
            a0_b: 0.0,
            a1_b: -0.0822,
            var_a1_a: 0.0,
            var_a1_b: 0.0,
            sigma2_a: 0.0,
            sigma2_b: 0.0,
        };
        let p = pl_project(34.2e6, 1, 11.0, &path).unwrap();
        assert!((p.value / 1e6 - 35.70).abs() < 0.01);
        assert!(growth_factor(400, 11.0, 0.424, -0.0822) < 1.0);

        let flat = CoeffPath {
            a1_a: 0.0,
            a1_b: 0.0,
            ..path
        };
        assert_eq!(pl_project(1234.5, 17, 3.0, &flat).unwrap().value, 1234.5);

        let collapse = CoeffPath {
            a1_a: -20.0,
            ..path
        };
        let p = pl_project(1000.0, 1, 2.0, &collapse).unwrap();
        assert!(p.clamped && p.value == 0.0);
    }

    #[test]
    fn bootstrap_degenerate_is_zero() {
        let fits: Vec<(f64, RankSizeFit)> = (1..=5)
            .map(|t| {
                let t = t as f64;
                (
                    t,
                    RankSizeFit {
                        intercept: 10.0 + 0.2 * t.ln(),
                        slope: -1.0 - 0.05 * t.ln(),
                        var_intercept: 0.0,
                        var_slope: 0.0,
                        sigma2: 0.0,
                        n: 20,
                    },
                )
            })
            .collect();
        let v = bootstrap_pl_variance(&fits, Forecast::new(5e4, 0.0), 3, 5.0, 200, 1).unwrap();
        assert!(v.abs() < 1e-12 * 5e4 * 5e4);
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let fits: Vec<(f64, RankSizeFit)> = (1..=6)
            .map(|t| {
                let t = t as f64;
                (
                    t,
                    RankSizeFit {
                        intercept: 10.0 + 0.2 * t.ln(),
                        slope: -1.0 - 0.05 * t.ln(),
                        var_intercept: 0.01,
                        var_slope: 0.001,
                        sigma2: 0.1,
                        n: 20,
                    },
                )
            })
            .collect();
        let a = bootstrap_pl_variance(&fits, Forecast::new(5e4, 1e6), 3, 6.0, 300, 9).unwrap();
        let b = bootstrap_pl_variance(&fits, Forecast::new(5e4, 1e6), 3, 6.0, 300, 9).unwrap();
        assert_eq!(a, b);
        assert!(PlBootstrap::new(&fits, 1, 0).is_err());
    }
}
