//! One-step hold-out check: refit without the final epoch, project it, and
//! compare the predicted direction of each city's growth with the observed one.

use super::{run_projection, EngineConfig, ModelSet, Scenario, MAX_URBAN_SHARE};
use crate::detect::track_panel;
use crate::error::{Error, Result};
use crate::grid::GridPanel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoldoutCity {
    pub lineage_id: u64,
    /// Observed population at the last training epoch.
    pub base: f64,
    pub predicted: f64,
    pub actual: f64,
}

impl HoldoutCity {
    pub fn signs_agree(&self) -> bool {
        sign(self.predicted - self.base) == sign(self.actual - self.base)
    }
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutVariant {
    pub models: ModelSet,
    pub cities: Vec<HoldoutCity>,
}

impl HoldoutVariant {
    /// Fraction of cities whose growth sign was predicted correctly; NaN
    /// when no city could be compared.
    pub fn sign_agreement(&self) -> f64 {
        if self.cities.is_empty() {
            return f64::NAN;
        }
        self.cities.iter().filter(|c| c.signs_agree()).count() as f64 / self.cities.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutReport {
    pub year: i32,
    pub variants: Vec<HoldoutVariant>,
}

impl HoldoutReport {
    pub fn variant(&self, models: ModelSet) -> Option<&HoldoutVariant> {
        self.variants.iter().find(|v| v.models == models)
    }
}

/// Holds out the last epoch of `panel` and projects it with the full model
/// blend and with its time-series-only and rank-size-only variants. The
/// scenario for the held-out epoch uses its observed total and urban share.
pub fn validate_holdout(panel: &GridPanel, config: &EngineConfig) -> Result<HoldoutReport> {
    let n = panel.n_epochs();
    if n < 4 {
        return Err(Error::InvalidInput(format!("hold-out needs at least 4 epochs, got {n}")));
    }
    let actual = track_panel(panel, &config.detect)?;
    let year = panel.years()[n - 1];
    let total = panel.total(n - 1);
    let urban: f64 = actual.latest().map_or(0.0, |e| e.cities.iter().map(|c| c.population).sum());
    let share = (urban / total).clamp(1e-6, MAX_URBAN_SHARE);
    let scenario = Scenario::new("holdout", vec![year], vec![total], Some(vec![share]))?;
    let train = panel.truncated(n - 1);
    let observed = actual.latest().map(|e| e.cities.as_slice()).unwrap_or_default();

    let mut variants = Vec::new();
    for models in [ModelSet::Full, ModelSet::TsOnly, ModelSet::PlOnly] {
        let cfg = EngineConfig {
            horizon: Some(1),
            models,
            ..config.clone()
        };
        let proj = run_projection(&train, &scenario, &cfg)?;
        let cities = proj
            .city_forecasts
            .iter()
            .filter(|f| f.combined.is_informative())
            .filter_map(|f| {
                let a = observed.iter().find(|c| c.lineage_id == f.lineage_id)?;
                Some(HoldoutCity {
                    lineage_id: f.lineage_id,
                    base: f.origin.mean,
                    predicted: f.combined.mean,
                    actual: a.population,
                })
            })
            .collect();
        variants.push(HoldoutVariant { models, cities });
    }
    Ok(HoldoutReport { year, variants })
}
