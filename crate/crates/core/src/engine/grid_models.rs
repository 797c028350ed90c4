//! Per-cell forecasters: three models on the cell's own series and three on
//! the mean of its neighbors, mapped back through the neighbor regression.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridPanel;
use crate::ts::{
    ensemble, fit_ari1, fit_ari2, fit_ll_constrained, fit_nb, fit_nb_last_epoch, forecast_nb,
    pooled_s2, Ari1Fit, Ari2Fit, Forecast, LlFit, NbFit, TsModel,
};

/// Names of the six grid models, in the order used by every weight vector.
pub const GRID_MODEL_NAMES: [&str; 6] = ["ari1", "ari2", "ll", "ari1_nb", "ari2_nb", "ll_nb"];

/// How the neighbor regression coefficient is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NbFitMode {
    /// No-intercept least squares over every training epoch.
    #[default]
    Panel,
    /// Ratio of the last training epoch, treated as exact.
    #[serde(alias = "year2020")]
    LastEpoch,
}

impl std::str::FromStr for NbFitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "panel" => Ok(Self::Panel),
            "last_epoch" | "year2020" => Ok(Self::LastEpoch),
            _ => Err(format!("unknown nb_fit_mode '{s}' (expected panel or last_epoch)")),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CellModels {
    pub ari1: Option<Ari1Fit>,
    pub ari2: Option<Ari2Fit>,
    pub ll: Option<LlFit>,
    pub nb_ari1: Option<Ari1Fit>,
    pub nb_ari2: Option<Ari2Fit>,
    pub nb_ll: Option<LlFit>,
    pub nb: Option<NbFit>,
}

fn model_step<M: TsModel>(m: &Option<M>, level: Option<f64>, h: usize) -> Forecast {
    match (m, level) {
        (Some(m), Some(level)) => m.step(level, h),
        _ => Forecast::unestimable(),
    }
}

impl CellModels {
    /// Forecasts of the six models one step past the current level of the
    /// cell (`p`) and of its neighbor mean (`q`), `h` epochs after training.
    pub fn step_forecasts(&self, p: f64, q: Option<f64>, h: usize) -> [Forecast; 6] {
        let nb = |qf: Forecast| match &self.nb {
            Some(fit) => forecast_nb(fit, qf),
            None => Forecast::unestimable(),
        };
        [
            model_step(&self.ari1, Some(p), h),
            model_step(&self.ari2, Some(p), h),
            model_step(&self.ll, Some(p), h),
            nb(model_step(&self.nb_ari1, q, h)),
            nb(model_step(&self.nb_ari2, q, h)),
            nb(model_step(&self.nb_ll, q, h)),
        ]
    }
}

/// Fitted models for every valid cell, indexed like the panel's cells.
#[derive(Debug, Clone)]
pub struct GridFits {
    pub cells: Vec<Option<CellModels>>,
    /// Pooled neighbor-regression error variance.
    pub nb_s2: f64,
}

fn fit_cell(panel: &GridPanel, idx: usize, mode: NbFitMode) -> Result<CellModels> {
    let cell = panel.cell_of(idx);
    let p = panel.series(cell);
    let mut m = CellModels {
        ari1: fit_ari1(&p).ok(),
        ari2: fit_ari2(&p).ok(),
        ll: fit_ll_constrained(&p).ok(),
        ..CellModels::default()
    };
    let Ok(q) = panel.neighbor_mean_series(cell) else {
        return Ok(m);
    };
    m.nb_ari1 = fit_ari1(&q).ok();
    m.nb_ari2 = fit_ari2(&q).ok();
    m.nb_ll = fit_ll_constrained(&q).ok();
    m.nb = match mode {
        NbFitMode::Panel => fit_nb(&p, &q),
        NbFitMode::LastEpoch => fit_nb_last_epoch(&p, &q),
    }
    .map(Some)
    .or_else(|e| match e {
        Error::Unestimable(_) => Ok(None),
        other => Err(other),
    })?;
    Ok(m)
}

impl GridFits {
    pub fn fit(panel: &GridPanel, mode: NbFitMode) -> Result<Self> {
        let mut cells = (0..panel.n_cells())
            .into_par_iter()
            .map(|idx| {
                if panel.valid_mask()[idx] {
                    fit_cell(panel, idx, mode).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let nb_fits: Vec<NbFit> = cells.iter().flatten().filter_map(|c| c.nb).collect();
        let nb_s2 = pooled_s2(&nb_fits);
        for c in cells.iter_mut().flatten() {
            if let Some(nb) = c.nb.as_mut() {
                nb.s2 = nb_s2;
            }
        }
        Ok(Self { cells, nb_s2 })
    }

    /// Ensembled forecast of every cell one step past the last epoch of
    /// `panel`, which lies `h - 1` epochs after the end of training, plus the
    /// model weights averaged across cells. Invalid cells stay at 0.
    pub fn step(&self, panel: &GridPanel, h: usize) -> (Vec<Forecast>, [f64; 6]) {
        let current = panel.snapshot(panel.n_epochs() - 1);
        let nb_means = panel.neighbor_means(current);
        let per_cell: Vec<(Forecast, Option<[f64; 6]>)> = self
            .cells
            .par_iter()
            .enumerate()
            .map(|(i, c)| match c {
                Some(m) => {
                    let fs = m.step_forecasts(current[i], nb_means[i], h);
                    let (f, w) = robust_ensemble(&fs);
                    (f, Some(w))
                }
                None => (Forecast::new(0.0, 0.0), None),
            })
            .collect();
        let mut avg = [0.0; 6];
        let mut n = 0usize;
        for w in per_cell.iter().filter_map(|(_, w)| w.as_ref()) {
            if w.iter().sum::<f64>() > 0.0 {
                for (a, b) in avg.iter_mut().zip(w) {
                    *a += b;
                }
                n += 1;
            }
        }
        if n > 0 {
            avg.iter_mut().for_each(|a| *a /= n as f64);
        }
        (per_cell.into_iter().map(|(f, _)| f).collect(), avg)
    }
}

/// Inverse-variance ensemble that never fails, with normalized weights.
///
/// Disagreeing zero-variance members are averaged with equal weight.
pub fn robust_ensemble<const N: usize>(fs: &[Forecast; N]) -> (Forecast, [f64; N]) {
    let mut w = [0.0; N];
    let exact: Vec<usize> = (0..N)
        .filter(|&i| fs[i].is_informative() && fs[i].variance == 0.0)
        .collect();
    if !exact.is_empty() {
        let share = 1.0 / exact.len() as f64;
        let mut mean = 0.0;
        for &i in &exact {
            w[i] = share;
            mean += share * fs[i].mean;
        }
        let f = match ensemble(fs) {
            Ok(f) => f,
            Err(_) => {
                log::warn!("zero-variance forecasts disagree; averaging them");
                Forecast::new(mean, 0.0)
            }
        };
        return (f, w);
    }
    let total: f64 = fs.iter().map(Forecast::weight).sum();
    if total > 0.0 {
        for (wi, f) in w.iter_mut().zip(fs) {
            *wi = f.weight() / total;
        }
    }
    let f = ensemble(fs).unwrap_or_else(|_| Forecast::unestimable());
    (f, w)
}

/// Blends each cell with the mean of its neighbors, using the summed weight
/// of the own-series models and of the neighbor models.
pub fn smooth_boundaries(panel: &GridPanel, snapshot: &[f64], weights: &[f64; 6]) -> Vec<f64> {
    let own: f64 = weights[..3].iter().sum();
    let nb: f64 = weights[3..].iter().sum();
    if nb == 0.0 || own + nb == 0.0 {
        return snapshot.to_vec();
    }
    let means = panel.neighbor_means(snapshot);
    snapshot
        .iter()
        .zip(means)
        .enumerate()
        .map(|(i, (&p, q))| match q {
            Some(q) if panel.valid_mask()[i] => (own * p + nb * q) / (own + nb),
            _ => p,
        })
        .collect()
}
