//! The projection loop.
//!
//! Models are estimated once on the training panel. Each projected epoch
//! then forecasts every cell and every city, blends the city time-series
//! forecast with the rank-size projection, rescales cells to the city
//! forecasts and then to the scenario's urban and rural totals, and finally
//! re-detects and re-tracks cities on the adjusted snapshot.

mod grid_models;
mod holdout;
mod scenario;
mod summary;

pub use grid_models::{
    robust_ensemble, smooth_boundaries, CellModels, GridFits, NbFitMode, GRID_MODEL_NAMES,
};
pub use holdout::{validate_holdout, HoldoutCity, HoldoutReport, HoldoutVariant};
pub use scenario::{extrapolate_urban_share, Scenario, MAX_URBAN_SHARE};
pub use summary::{summarize, threshold_label, SummaryRow, DEFAULT_SIZE_THRESHOLDS};

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{detect_cities, rank_cities, track_panel, CityLineage, DetectParams, UrbanAgglomeration};
use crate::error::{Error, Result};
use crate::grid::GridPanel;
use crate::powerlaw::{fit_coeff_paths, fit_rank_size, pl_project, CoeffPath, PlBootstrap, RankSizeFit, DEFAULT_N_BOOT};
use crate::ts::{fit_ari1, fit_ari2, fit_ll_constrained_at, Ari1Fit, Ari2Fit, Forecast, LlFit, TsModel};

/// Which city-level forecasts enter the blend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSet {
    #[default]
    Full,
    TsOnly,
    PlOnly,
}

impl std::str::FromStr for ModelSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(Self::Full),
            "ts_only" => Ok(Self::TsOnly),
            "pl_only" => Ok(Self::PlOnly),
            _ => Err(format!("unknown model set '{s}' (expected full, ts_only or pl_only)")),
        }
    }
}

impl std::fmt::Display for ModelSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::TsOnly => "ts_only",
            Self::PlOnly => "pl_only",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub detect: DetectParams,
    /// Number of epochs to project; the whole scenario when `None`.
    pub horizon: Option<usize>,
    pub smoothing: bool,
    pub nb_fit_mode: NbFitMode,
    /// Clamp negative cell and city forecasts to zero.
    pub clamp_negative: bool,
    pub n_boot: usize,
    pub seed: u64,
    pub models: ModelSet,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            detect: DetectParams::default(),
            horizon: None,
            smoothing: false,
            nb_fit_mode: NbFitMode::Panel,
            clamp_negative: true,
            n_boot: DEFAULT_N_BOOT,
            seed: 0,
            models: ModelSet::Full,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == Some(0) {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        if self.n_boot < 2 {
            return Err(Error::InvalidInput(format!("n_boot must be at least 2, got {}", self.n_boot)));
        }
        let d = &self.detect;
        if !(d.density_threshold.is_finite() && d.density_threshold >= 0.0) {
            return Err(Error::InvalidInput("density_threshold must be a non-negative number".into()));
        }
        if !(d.min_pop.is_finite() && d.min_pop >= 0.0) {
            return Err(Error::InvalidInput("min_pop must be a non-negative number".into()));
        }
        Ok(())
    }
}

/// Time-series models of one city, fitted on the trailing run of training
/// epochs in which the city existed.
#[derive(Debug, Clone, PartialEq)]
pub struct CityModels {
    pub ari1: Option<Ari1Fit>,
    pub ari2: Option<Ari2Fit>,
    pub ll: Option<LlFit>,
    /// Time index of the first observation used.
    pub first_time: usize,
}

impl CityModels {
    fn fit(history: &[Option<f64>]) -> Option<Self> {
        if !matches!(history.last(), Some(Some(_))) {
            return None;
        }
        let start = history.iter().rposition(Option::is_none).map_or(0, |i| i + 1);
        let series: Vec<f64> = history[start..].iter().map(|p| p.unwrap()).collect();
        let times: Vec<f64> = (start + 1..=history.len()).map(|t| t as f64).collect();
        let m = Self {
            ari1: fit_ari1(&series).ok(),
            ari2: fit_ari2(&series).ok(),
            ll: fit_ll_constrained_at(&times, &series).ok(),
            first_time: start + 1,
        };
        Some(m)
    }

    pub fn is_estimated(&self) -> bool {
        self.ari1.is_some() || self.ari2.is_some() || self.ll.is_some()
    }

    /// Ensemble of the city's models one step past population `level`,
    /// `h` epochs after the end of training.
    pub fn step(&self, level: f64, h: usize) -> Forecast {
        let f = |m: Option<&dyn TsModel>| m.map_or_else(Forecast::unestimable, |m| m.step(level, h));
        let fs = [
            f(self.ari1.as_ref().map(|m| m as &dyn TsModel)),
            f(self.ari2.as_ref().map(|m| m as &dyn TsModel)),
            f(self.ll.as_ref().map(|m| m as &dyn TsModel)),
        ];
        robust_ensemble(&fs).0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankSizeEpoch {
    pub year: i32,
    pub time: f64,
    pub fit: RankSizeFit,
}

/// Everything estimated on the training panel.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub lineage: CityLineage,
    pub grid: GridFits,
    pub cities: BTreeMap<u64, CityModels>,
    /// Rank-size fits of the training epochs with at least three cities.
    pub rank_size: Vec<RankSizeEpoch>,
    pub coeff_path: Option<CoeffPath>,
}

/// One row of the fit dump: `unit_id,model,param,value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub unit_id: String,
    pub model: String,
    pub param: String,
    pub value: f64,
}

impl Fitted {
    pub fn dump(&self, panel: &GridPanel) -> Vec<FitRecord> {
        let mut out = Vec::new();
        let mut push = |unit: &str, model: &str, param: &str, value: f64| {
            out.push(FitRecord {
                unit_id: unit.to_string(),
                model: model.to_string(),
                param: param.to_string(),
                value,
            })
        };
        for (id, m) in &self.cities {
            let unit = format!("city:{id}");
            dump_ts(&mut push, &unit, "", m.ari1.as_ref(), m.ari2.as_ref(), m.ll.as_ref());
        }
        if let Some(p) = &self.coeff_path {
            for (param, v) in [
                ("a0_A", p.a0_a),
                ("a1_A", p.a1_a),
                ("a0_B", p.a0_b),
                ("a1_B", p.a1_b),
                ("var_a1_A", p.var_a1_a),
                ("var_a1_B", p.var_a1_b),
                ("sigma2_A", p.sigma2_a),
                ("sigma2_B", p.sigma2_b),
            ] {
                push("country", "coeff_path", param, v);
            }
        }
        for (idx, c) in self.grid.cells.iter().enumerate() {
            let Some(c) = c else { continue };
            let cell = panel.cell_of(idx);
            let unit = format!("cell:{}:{}", cell.row, cell.col);
            dump_ts(&mut push, &unit, "", c.ari1.as_ref(), c.ari2.as_ref(), c.ll.as_ref());
            dump_ts(&mut push, &unit, "_nb", c.nb_ari1.as_ref(), c.nb_ari2.as_ref(), c.nb_ll.as_ref());
            if let Some(nb) = &c.nb {
                push(&unit, "nb", "b", nb.b);
                push(&unit, "nb", "var_b", nb.var_b);
                push(&unit, "nb", "s2", nb.s2);
            }
        }
        out
    }
}

fn dump_ts(
    push: &mut impl FnMut(&str, &str, &str, f64),
    unit: &str,
    suffix: &str,
    ari1: Option<&Ari1Fit>,
    ari2: Option<&Ari2Fit>,
    ll: Option<&LlFit>,
) {
    if let Some(m) = ari1 {
        let name = format!("ari1{suffix}");
        push(unit, &name, "rho", m.rho);
        push(unit, &name, "sigma2", m.sigma2);
    }
    if let Some(m) = ari2 {
        let name = format!("ari2{suffix}");
        push(unit, &name, "rho1", m.rho1);
        push(unit, &name, "rho2", m.rho2);
        push(unit, &name, "sigma2", m.sigma2);
    }
    if let Some(m) = ll {
        let name = format!("ll{suffix}");
        push(unit, &name, "a0", m.a0);
        push(unit, &name, "a1", m.a1);
        push(unit, &name, "sigma2", m.sigma2);
        push(unit, &name, "lambda", m.lambda);
    }
}

/// Minimum number of training epochs for every model to be estimable.
pub const MIN_TRAINING_EPOCHS: usize = 3;

/// Estimates grid, city and rank-size models on the training panel.
pub fn fit_models(panel: &GridPanel, config: &EngineConfig) -> Result<Fitted> {
    config.validate()?;
    if panel.n_epochs() < MIN_TRAINING_EPOCHS {
        return Err(Error::InvalidInput(format!(
            "training panel needs at least {MIN_TRAINING_EPOCHS} epochs, got {}",
            panel.n_epochs()
        )));
    }
    let lineage = track_panel(panel, &config.detect)?;
    let grid = GridFits::fit(panel, config.nb_fit_mode)?;

    let mut cities = BTreeMap::new();
    if let Some(last) = lineage.latest() {
        for c in &last.cities {
            if let Some(m) = CityModels::fit(&lineage.population_history(c.lineage_id)) {
                cities.insert(c.lineage_id, m);
            }
        }
    }

    let mut rank_size = Vec::new();
    for (e, ep) in lineage.epochs().iter().enumerate() {
        if ep.cities.len() < 3 {
            continue;
        }
        let pops: Vec<f64> = ep.cities.iter().map(|c| c.population).collect();
        rank_size.push(RankSizeEpoch {
            year: ep.year,
            time: panel.time_index(e) as f64,
            fit: fit_rank_size(&pops)?,
        });
    }
    let pairs: Vec<(f64, RankSizeFit)> = rank_size.iter().map(|r| (r.time, r.fit)).collect();
    let coeff_path = match fit_coeff_paths(&pairs) {
        Ok(p) => Some(p),
        Err(e) => {
            log::warn!("rank-size model disabled: {e}");
            None
        }
    };
    Ok(Fitted {
        lineage,
        grid,
        cities,
        rank_size,
        coeff_path,
    })
}

/// Forecasts of one city for one projected epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CityForecast {
    /// Target year.
    pub year: i32,
    pub lineage_id: u64,
    /// Rank at the origin epoch.
    pub rank: usize,
    /// Population carried into the epoch.
    pub origin: Forecast,
    pub ts: Forecast,
    pub pl: Forecast,
    /// The rank-size growth factor was not positive.
    pub pl_clamped: bool,
    pub combined: Forecast,
}

/// Urban and rural sums after the scenario adjustment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StratumTotals {
    pub year: i32,
    pub urban_target: f64,
    pub urban_sum: f64,
    pub rural_target: f64,
    pub rural_sum: f64,
}

#[derive(Debug, Clone)]
pub struct Projection {
    /// Training epochs followed by the projected ones.
    pub panel: GridPanel,
    pub n_training: usize,
    pub lineage: CityLineage,
    pub fitted: Fitted,
    pub city_forecasts: Vec<CityForecast>,
    /// Grid model weights averaged across cells, per projected year.
    pub grid_weights: Vec<(i32, [f64; 6])>,
    pub strata: Vec<StratumTotals>,
    /// Urban share applied at each projected epoch.
    pub urban_share: Vec<f64>,
}

impl Projection {
    pub fn projected_years(&self) -> &[i32] {
        &self.panel.years()[self.n_training..]
    }
}

fn first_non_finite(panel: &GridPanel, snap: &[f64], year: i32, stage: &'static str) -> Result<()> {
    match snap.iter().position(|v| !v.is_finite()) {
        Some(i) => {
            let c = panel.cell_of(i);
            Err(Error::NonFinite {
                row: c.row,
                col: c.col,
                year,
                stage,
            })
        }
        None => Ok(()),
    }
}

/// Scales the cells at `idx` so they sum to `target`; a zero sum with a
/// positive target is spread evenly. Returns the factor, if one applied.
fn rescale(snap: &mut [f64], idx: &[usize], target: f64) -> Option<f64> {
    if idx.is_empty() {
        return None;
    }
    let sum: f64 = idx.iter().map(|&i| snap[i]).sum();
    if sum > 0.0 {
        let f = target / sum;
        idx.iter().for_each(|&i| snap[i] *= f);
        Some(f)
    } else {
        if target > 0.0 {
            log::warn!("rescaling {} cells with zero population; spreading evenly", idx.len());
        }
        let v = target / idx.len() as f64;
        idx.iter().for_each(|&i| snap[i] = v);
        None
    }
}

fn bootstrap_key(lineage_id: u64, year: i32) -> u64 {
    (lineage_id << 20) ^ (year as u32 as u64)
}

fn observed_urban_shares(panel: &GridPanel, lineage: &CityLineage) -> Vec<f64> {
    lineage
        .epochs()
        .iter()
        .enumerate()
        .map(|(e, ep)| {
            let total = panel.total(e);
            let urban: f64 = ep.cities.iter().map(|c| c.population).sum();
            if total > 0.0 {
                urban / total
            } else {
                0.0
            }
        })
        .collect()
}

/// Runs the projection over the scenario horizon.
pub fn run_projection(panel: &GridPanel, scenario: &Scenario, config: &EngineConfig) -> Result<Projection> {
    let fitted = fit_models(panel, config)?;
    project_fitted(panel, fitted, scenario, config)
}

/// Runs the projection from models already fitted on `panel`.
pub fn project_fitted(panel: &GridPanel, fitted: Fitted, scenario: &Scenario, config: &EngineConfig) -> Result<Projection> {
    config.validate()?;
    scenario.validate()?;
    let horizon = config.horizon.unwrap_or(scenario.len());
    if horizon == 0 {
        return Err(Error::InvalidInput("scenario has no epochs to project".into()));
    }
    if horizon > scenario.len() {
        return Err(Error::InvalidInput(format!(
            "horizon {horizon} exceeds the {} scenario epochs",
            scenario.len()
        )));
    }
    let spacing = panel
        .spacing()
        .ok_or_else(|| Error::InvalidInput("training panel needs at least two epochs".into()))?;
    let last_year = *panel.years().last().unwrap();
    for k in 1..=horizon {
        let want = last_year + k as i32 * spacing;
        if scenario.years[k - 1] != want {
            return Err(Error::InvalidInput(format!(
                "scenario epoch {k} is {}, expected {want}",
                scenario.years[k - 1]
            )));
        }
    }
    let n_train = panel.n_epochs();
    let shares = match &scenario.urban_share {
        Some(s) => s[..horizon].to_vec(),
        None => {
            let times: Vec<f64> = (1..=n_train).map(|t| t as f64).collect();
            let future: Vec<f64> = (1..=horizon).map(|k| (n_train + k) as f64).collect();
            extrapolate_urban_share(&times, &observed_urban_shares(panel, &fitted.lineage), &future)?
        }
    };

    let bootstrap = match (&fitted.coeff_path, config.models) {
        (_, ModelSet::TsOnly) | (None, _) => None,
        (Some(_), _) => {
            let pairs: Vec<(f64, RankSizeFit)> = fitted.rank_size.iter().map(|r| (r.time, r.fit)).collect();
            Some(PlBootstrap::new(&pairs, config.n_boot, config.seed)?)
        }
    };

    let mut lineage = fitted.lineage.clone();
    let mut out = panel.clone();
    let mut state: HashMap<u64, Forecast> = lineage
        .latest()
        .map(|ep| {
            ep.cities
                .iter()
                .map(|c| (c.lineage_id, Forecast::new(c.population, 0.0)))
                .collect()
        })
        .unwrap_or_default();
    let valid: Vec<usize> = (0..panel.n_cells()).filter(|&i| panel.valid_mask()[i]).collect();

    let mut city_forecasts = Vec::new();
    let mut grid_weights = Vec::with_capacity(horizon);
    let mut strata = Vec::with_capacity(horizon);

    for k in 1..=horizon {
        let year = scenario.years[k - 1];
        let t_origin = (n_train + k - 1) as f64;
        let prev = out.snapshot(out.n_epochs() - 1).to_vec();

        // grid forecasts
        let (cell_fc, weights) = fitted.grid.step(&out, k);
        let mut snap: Vec<f64> = cell_fc
            .iter()
            .enumerate()
            .map(|(i, f)| {
                if !out.valid_mask()[i] {
                    0.0
                } else if f.is_informative() {
                    if config.clamp_negative {
                        f.mean.max(0.0)
                    } else {
                        f.mean
                    }
                } else {
                    prev[i]
                }
            })
            .collect();
        first_non_finite(&out, &snap, year, "grid forecast")?;
        if config.smoothing {
            snap = smooth_boundaries(&out, &snap, &weights);
        }
        grid_weights.push((year, weights));

        // city forecasts
        let cities_t: Vec<UrbanAgglomeration> = lineage.latest().map(|e| e.cities.clone()).unwrap_or_default();
        let forecasts: Vec<CityForecast> = cities_t
            .par_iter()
            .map(|c| {
                let id = c.lineage_id;
                let origin = state.get(&id).copied().unwrap_or(Forecast::new(c.population, 0.0));
                let ts = match (config.models, fitted.cities.get(&id)) {
                    (ModelSet::PlOnly, _) | (_, None) => Forecast::unestimable(),
                    (_, Some(m)) => m.step(c.population, k),
                };
                let (pl, pl_clamped) = match (&fitted.coeff_path, &bootstrap) {
                    (Some(path), Some(boot)) if origin.is_informative() => {
                        let p = pl_project(origin.mean, c.rank, t_origin, path)?;
                        let var = boot.variance(origin, c.rank, t_origin, bootstrap_key(id, year));
                        (Forecast::new(p.value, var), p.clamped)
                    }
                    _ => (Forecast::unestimable(), false),
                };
                let mut combined = robust_ensemble(&[ts, pl]).0;
                if config.clamp_negative && combined.is_informative() {
                    combined.mean = combined.mean.max(0.0);
                }
                Ok(CityForecast {
                    year,
                    lineage_id: id,
                    rank: c.rank,
                    origin,
                    ts,
                    pl,
                    pl_clamped,
                    combined,
                })
            })
            .collect::<Result<_>>()?;

        // match cells to city forecasts
        let mut is_urban = vec![false; out.n_cells()];
        for (c, f) in cities_t.iter().zip(&forecasts) {
            let idx: Vec<usize> = c.cells.iter().map(|&cell| out.index(cell)).collect();
            idx.iter().for_each(|&i| is_urban[i] = true);
            if f.combined.is_informative() {
                rescale(&mut snap, &idx, f.combined.mean);
            }
        }

        // match strata to the scenario
        let total = scenario.total_pop[k - 1];
        let urban_idx: Vec<usize> = valid.iter().copied().filter(|&i| is_urban[i]).collect();
        let rural_idx: Vec<usize> = valid.iter().copied().filter(|&i| !is_urban[i]).collect();
        let (urban_target, rural_target) = if urban_idx.is_empty() {
            (0.0, total)
        } else if rural_idx.is_empty() {
            (total, 0.0)
        } else {
            let u = total * shares[k - 1];
            (u, total - u)
        };
        let urban_factor = rescale(&mut snap, &urban_idx, urban_target);
        rescale(&mut snap, &rural_idx, rural_target);
        first_non_finite(&out, &snap, year, "urban-rural adjustment")?;
        strata.push(StratumTotals {
            year,
            urban_target,
            urban_sum: urban_idx.iter().map(|&i| snap[i]).sum(),
            rural_target,
            rural_sum: rural_idx.iter().map(|&i| snap[i]).sum(),
        });

        out.push_epoch(year, snap)?;
        let e = out.n_epochs() - 1;
        let detected = rank_cities(detect_cities(&out, out.snapshot(e), &config.detect)?);
        lineage.advance(year, detected)?;

        // carry city populations into the next epoch
        let carried: HashMap<u64, Forecast> = forecasts
            .iter()
            .filter(|f| f.combined.is_informative())
            .map(|f| (f.lineage_id, f.combined))
            .collect();
        state = lineage
            .latest()
            .unwrap()
            .cities
            .iter()
            .map(|c| {
                let variance = match (carried.get(&c.lineage_id), urban_factor) {
                    (Some(f), Some(s)) => f.variance * s * s,
                    _ => 0.0,
                };
                (c.lineage_id, Forecast::new(c.population, variance))
            })
            .collect();
        city_forecasts.extend(forecasts);
    }

    Ok(Projection {
        panel: out,
        n_training: n_train,
        lineage,
        fitted,
        city_forecasts,
        grid_weights,
        strata,
        urban_share: shares,
    })
}
