//! Log-linear additive land-price model:
//!
//! `ln price = c0 + city effect + c1 ln pop + c2 ln nb_pop + f(x, y) + g(elev) + e`
//!
//! `f` is a tensor-product cubic B-spline over coordinates and `g` a cubic
//! B-spline over elevation, each centered to sum to zero on the training
//! rows and penalized by second differences. Smoothing parameters are chosen
//! by generalized cross-validation over a logarithmic grid.

mod bspline;

pub use bspline::{difference_penalty, tensor_penalty, SplineBasis};

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::CellId;

/// One land-price observation.
#[derive(Debug, Clone, PartialEq)]
pub struct LandPriceObs {
    pub cell: CellId,
    pub year: i32,
    pub price: f64,
    pub pop: f64,
    pub nb_pop: f64,
    pub x: f64,
    pub y: f64,
    pub elev: f64,
    /// City the cell belongs to; `None` outside cities.
    pub lineage_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandPriceConfig {
    /// Basis functions per spline margin.
    pub n_basis: usize,
    /// Smallest and largest log10 smoothing parameter, relative to the
    /// scale of each smooth's design block.
    pub log10_lambda_min: f64,
    pub log10_lambda_max: f64,
    pub lambda_steps: usize,
}

impl Default for LandPriceConfig {
    fn default() -> Self {
        Self {
            n_basis: 10,
            log10_lambda_min: -6.0,
            log10_lambda_max: 4.0,
            lambda_steps: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandPriceModel {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    /// Offsets per city; the reference city, if any, has 0.
    pub city_effects: BTreeMap<u64, f64>,
    pub basis_x: SplineBasis,
    pub basis_y: SplineBasis,
    pub basis_elev: SplineBasis,
    /// Coefficients of the coordinate tensor basis, indexed `ix * k + iy`.
    pub coef_xy: Vec<f64>,
    pub coef_elev: Vec<f64>,
    pub lambda_xy: f64,
    pub lambda_elev: f64,
    pub edf_xy: f64,
    pub edf_elev: f64,
    pub sigma2_z: f64,
    pub adj_r2: f64,
    pub gcv: f64,
    pub n_obs: usize,
    /// Rows dropped for non-positive populations.
    pub n_dropped: usize,
}

/// Householder reflection whose trailing columns span the complement of `c`.
#[derive(Debug, Clone)]
struct Centering {
    v: Vec<f64>,
    vv: f64,
}

impl Centering {
    fn new(c: &[f64]) -> Self {
        let norm = c.iter().map(|a| a * a).sum::<f64>().sqrt();
        let mut v = c.to_vec();
        // reflect c onto -sign(c0)·e1 for stability
        let sign = if c[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * norm;
        let vv = v.iter().map(|a| a * a).sum();
        Self { v, vv }
    }

    fn reflect(&self, x: &[f64]) -> Vec<f64> {
        if self.vv == 0.0 {
            return x.to_vec();
        }
        let f = 2.0 * x.iter().zip(&self.v).map(|(a, b)| a * b).sum::<f64>() / self.vv;
        x.iter().zip(&self.v).map(|(a, b)| a - f * b).collect()
    }

    /// Basis row in constrained coordinates.
    fn project(&self, row: &[f64]) -> Vec<f64> {
        self.reflect(row)[1..].to_vec()
    }

    /// Constrained coefficients back to basis coefficients.
    fn expand(&self, gamma: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0];
        z.extend_from_slice(gamma);
        self.reflect(&z)
    }

    /// Penalty in constrained coordinates.
    fn penalty(&self, s: &[Vec<f64>]) -> DMatrix<f64> {
        let k = s.len();
        let cols: Vec<Vec<f64>> = (0..k).map(|j| self.reflect(&(0..k).map(|i| s[i][j]).collect::<Vec<_>>())).collect();
        // cols[j] = H S e_j; rows of H S H come from reflecting each row of H S
        let hs = DMatrix::from_fn(k, k, |i, j| cols[j][i]);
        let mut out = DMatrix::zeros(k - 1, k - 1);
        for i in 1..k {
            let row: Vec<f64> = (0..k).map(|j| hs[(i, j)]).collect();
            let r = self.reflect(&row);
            for j in 1..k {
                out[(i - 1, j - 1)] = r[j];
            }
        }
        out
    }
}

struct Layout {
    cities: Vec<u64>,
    reference: Option<u64>,
    basis_x: SplineBasis,
    basis_y: SplineBasis,
    basis_elev: SplineBasis,
    center_xy: Centering,
    center_elev: Centering,
    n_city_cols: usize,
}

impl Layout {
    fn k(&self) -> usize {
        self.basis_x.n_basis
    }

    fn col_logp(&self) -> usize {
        1 + self.n_city_cols
    }

    fn xy_range(&self) -> std::ops::Range<usize> {
        let s = self.col_logp() + 2;
        s..s + self.k() * self.k() - 1
    }

    fn elev_range(&self) -> std::ops::Range<usize> {
        let s = self.xy_range().end;
        s..s + self.basis_elev.n_basis - 1
    }

    fn n_cols(&self) -> usize {
        self.elev_range().end
    }

    fn raw_xy(&self, x: f64, y: f64) -> (Vec<f64>, bool) {
        let k = self.k();
        let (ix, bx, cx) = self.basis_x.eval(x);
        let (iy, by, cy) = self.basis_y.eval(y);
        let mut row = vec![0.0; k * k];
        for a in 0..4 {
            for b in 0..4 {
                row[(ix + a) * k + iy + b] = bx[a] * by[b];
            }
        }
        (row, cx || cy)
    }

    fn design_row(&self, o: &LandPriceObs) -> Vec<f64> {
        let mut row = vec![0.0; self.n_cols()];
        row[0] = 1.0;
        if let Some(id) = o.lineage_id {
            if Some(id) != self.reference {
                if let Ok(pos) = self.cities.binary_search(&id) {
                    let pos = if self.reference.is_some() { pos - 1 } else { pos };
                    row[1 + pos] = 1.0;
                }
            }
        }
        row[self.col_logp()] = o.pop.ln();
        row[self.col_logp() + 1] = o.nb_pop.ln();
        let (xy, _) = self.raw_xy(o.x, o.y);
        let r = self.xy_range();
        row[r].copy_from_slice(&self.center_xy.project(&xy));
        let r = self.elev_range();
        row[r].copy_from_slice(&self.center_elev.project(&self.basis_elev.row(o.elev)));
        row
    }
}

struct Design {
    layout: Layout,
    x: DMatrix<f64>,
    y: DVector<f64>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    s_xy: DMatrix<f64>,
    s_elev: DMatrix<f64>,
    scale_xy: f64,
    scale_elev: f64,
    n_dropped: usize,
}

fn block_scale(xtx: &DMatrix<f64>, s: &DMatrix<f64>, r: std::ops::Range<usize>) -> f64 {
    let tx: f64 = r.clone().map(|i| xtx[(i, i)]).sum();
    let ts: f64 = s.trace();
    if ts > 0.0 && tx > 0.0 {
        tx / ts
    } else {
        1.0
    }
}

fn build_design(obs: &[LandPriceObs], n_basis: usize) -> Result<Design> {
    if n_basis < 4 {
        return Err(Error::InvalidInput("land-price splines need at least 4 basis functions".into()));
    }
    if let Some(o) = obs.iter().find(|o| !(o.price > 0.0 && o.price.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "land price {} at ({}, {}) in {} must be positive",
            o.price, o.cell.row, o.cell.col, o.year
        )));
    }
    let rows: Vec<&LandPriceObs> = obs.iter().filter(|o| o.pop > 0.0 && o.nb_pop > 0.0).collect();
    let n_dropped = obs.len() - rows.len();
    if n_dropped > 0 {
        log::warn!("dropped {n_dropped} land-price rows with zero population");
    }
    let mut cities: Vec<u64> = rows.iter().filter_map(|o| o.lineage_id).collect();
    cities.sort_unstable();
    cities.dedup();
    let reference = if !cities.is_empty() && rows.iter().all(|o| o.lineage_id.is_some()) {
        Some(cities[0])
    } else {
        None
    };
    let n_city_cols = cities.len() - usize::from(reference.is_some());

    let basis_x = SplineBasis::covering(rows.iter().map(|o| o.x), n_basis);
    let basis_y = SplineBasis::covering(rows.iter().map(|o| o.y), n_basis);
    let basis_elev = SplineBasis::covering(rows.iter().map(|o| o.elev), n_basis);
    let n = rows.len();
    let k = n_basis;

    // column means of the raw smooth bases define the centering constraints
    let mut mean_xy = vec![0.0; k * k];
    let mut mean_e = vec![0.0; k];
    for o in &rows {
        let (ix, bx, _) = basis_x.eval(o.x);
        let (iy, by, _) = basis_y.eval(o.y);
        for a in 0..4 {
            for b in 0..4 {
                mean_xy[(ix + a) * k + iy + b] += bx[a] * by[b] / n as f64;
            }
        }
        let (ie, be, _) = basis_elev.eval(o.elev);
        for a in 0..4 {
            mean_e[ie + a] += be[a] / n as f64;
        }
    }
    let layout = Layout {
        cities,
        reference,
        basis_x,
        basis_y,
        basis_elev,
        center_xy: Centering::new(&mean_xy),
        center_elev: Centering::new(&mean_e),
        n_city_cols,
    };
    let p = layout.n_cols();
    if n <= p {
        return Err(Error::InvalidInput(format!(
            "land-price model has {p} coefficients but only {n} usable rows"
        )));
    }
    let mut x = DMatrix::zeros(n, p);
    for (i, o) in rows.iter().enumerate() {
        for (j, v) in layout.design_row(o).into_iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    let y = DVector::from_iterator(n, rows.iter().map(|o| o.price.ln()));
    let xtx = x.tr_mul(&x);
    let xty = x.tr_mul(&y);
    let s_xy = layout.center_xy.penalty(&tensor_penalty(k));
    let s_elev = layout.center_elev.penalty(&difference_penalty(k));
    let scale_xy = block_scale(&xtx, &s_xy, layout.xy_range());
    let scale_elev = block_scale(&xtx, &s_elev, layout.elev_range());
    Ok(Design {
        layout,
        x,
        y,
        xtx,
        xty,
        s_xy,
        s_elev,
        scale_xy,
        scale_elev,
        n_dropped,
    })
}

struct Solve {
    beta: DVector<f64>,
    edf_xy: f64,
    edf_elev: f64,
    edf: f64,
    rss: f64,
}

impl Design {
    fn penalized(&self, lambda_xy: f64, lambda_elev: f64) -> DMatrix<f64> {
        let mut a = self.xtx.clone();
        let (rx, re) = (self.layout.xy_range(), self.layout.elev_range());
        for (i, ii) in rx.clone().enumerate() {
            for (j, jj) in rx.clone().enumerate() {
                a[(ii, jj)] += lambda_xy * self.s_xy[(i, j)];
            }
        }
        for (i, ii) in re.clone().enumerate() {
            for (j, jj) in re.clone().enumerate() {
                a[(ii, jj)] += lambda_elev * self.s_elev[(i, j)];
            }
        }
        a
    }

    fn factor(&self, a: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
        if let Some(c) = a.clone().cholesky() {
            return Ok(c);
        }
        let p = a.nrows();
        let base = a.trace() / p as f64;
        let mut ridge = 1e-10 * base;
        for _ in 0..12 {
            log::warn!("penalized land-price system is singular; adding ridge {ridge:e}");
            let mut b = a.clone();
            for i in 0..p {
                b[(i, i)] += ridge;
            }
            if let Some(c) = b.cholesky() {
                return Ok(c);
            }
            ridge *= 10.0;
        }
        Err(Error::Unestimable("penalized land-price system is singular".into()))
    }

    fn solve(&self, lambda_xy: f64, lambda_elev: f64) -> Result<Solve> {
        let chol = self.factor(self.penalized(lambda_xy, lambda_elev))?;
        let beta = chol.solve(&self.xty);
        let f = chol.solve(&self.xtx);
        let edf_xy: f64 = self.layout.xy_range().map(|i| f[(i, i)]).sum();
        let edf_elev: f64 = self.layout.elev_range().map(|i| f[(i, i)]).sum();
        let edf = f.trace();
        let rss = (&self.y - &self.x * &beta).norm_squared();
        Ok(Solve {
            beta,
            edf_xy,
            edf_elev,
            edf,
            rss,
        })
    }

    fn into_model(self, s: Solve, lambda_xy: f64, lambda_elev: f64) -> LandPriceModel {
        let l = &self.layout;
        let n = self.y.len() as f64;
        let b = &s.beta;
        let mut city_effects = BTreeMap::new();
        let mut col = 1;
        for &id in &l.cities {
            if Some(id) == l.reference {
                city_effects.insert(id, 0.0);
            } else {
                city_effects.insert(id, b[col]);
                col += 1;
            }
        }
        let gamma_xy: Vec<f64> = l.xy_range().map(|i| b[i]).collect();
        let gamma_e: Vec<f64> = l.elev_range().map(|i| b[i]).collect();
        let mean_y = self.y.mean();
        let tss: f64 = self.y.iter().map(|v| (v - mean_y).powi(2)).sum();
        let dof = (n - s.edf).max(1.0);
        let sigma2_z = s.rss / dof;
        let adj_r2 = if tss > 0.0 { 1.0 - sigma2_z / (tss / (n - 1.0)) } else { 1.0 };
        LandPriceModel {
            c0: b[0],
            c1: b[l.col_logp()],
            c2: b[l.col_logp() + 1],
            city_effects,
            basis_x: l.basis_x,
            basis_y: l.basis_y,
            basis_elev: l.basis_elev,
            coef_xy: l.center_xy.expand(&gamma_xy),
            coef_elev: l.center_elev.expand(&gamma_e),
            lambda_xy,
            lambda_elev,
            edf_xy: s.edf_xy,
            edf_elev: s.edf_elev,
            sigma2_z,
            adj_r2,
            gcv: n * s.rss / (n - s.edf).powi(2),
            n_obs: self.y.len(),
            n_dropped: self.n_dropped,
        }
    }
}

/// Fits the model, choosing both smoothing parameters by GCV.
pub fn fit_landprice(obs: &[LandPriceObs], config: &LandPriceConfig) -> Result<LandPriceModel> {
    let d = build_design(obs, config.n_basis)?;
    let steps = config.lambda_steps.max(1);
    let grid: Vec<f64> = (0..steps)
        .map(|i| {
            let f = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
            config.log10_lambda_min + f * (config.log10_lambda_max - config.log10_lambda_min)
        })
        .collect();
    let n = d.y.len() as f64;
    let mut best: Option<(f64, f64, f64, Solve)> = None;
    for &gx in &grid {
        for &ge in &grid {
            let (lx, le) = (10f64.powf(gx) * d.scale_xy, 10f64.powf(ge) * d.scale_elev);
            let s = d.solve(lx, le)?;
            let gcv = n * s.rss / (n - s.edf).powi(2);
            if best.as_ref().is_none_or(|b| gcv < b.0) {
                best = Some((gcv, lx, le, s));
            }
        }
    }
    let (_, lx, le, s) = best.expect("lambda grid is never empty");
    Ok(d.into_model(s, lx, le))
}

/// Fits the model at fixed smoothing parameters (absolute scale).
pub fn fit_landprice_at(obs: &[LandPriceObs], n_basis: usize, lambda_xy: f64, lambda_elev: f64) -> Result<LandPriceModel> {
    let d = build_design(obs, n_basis)?;
    let s = d.solve(lambda_xy, lambda_elev)?;
    Ok(d.into_model(s, lambda_xy, lambda_elev))
}

/// Per-row diagnostics of a prediction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PredictFlags {
    /// A spline input lay outside the training range and was clamped.
    pub clamped: bool,
    /// The row's city was not seen in training; no city offset applied.
    pub unknown_city: bool,
    /// A non-positive population was raised to one person.
    pub floored_pop: bool,
}

impl LandPriceModel {
    fn smooth_xy(&self, x: f64, y: f64) -> (f64, bool) {
        let k = self.basis_x.n_basis;
        let (ix, bx, cx) = self.basis_x.eval(x);
        let (iy, by, cy) = self.basis_y.eval(y);
        let mut v = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                v += bx[a] * by[b] * self.coef_xy[(ix + a) * k + iy + b];
            }
        }
        (v, cx || cy)
    }

    fn smooth_elev(&self, e: f64) -> (f64, bool) {
        let (ie, be, c) = self.basis_elev.eval(e);
        ((0..4).map(|a| be[a] * self.coef_elev[ie + a]).sum(), c)
    }

    /// Log price of one row and its diagnostics.
    pub fn predict_log(&self, o: &LandPriceObs) -> (f64, PredictFlags) {
        let mut flags = PredictFlags::default();
        let mut eta = self.c0;
        if let Some(id) = o.lineage_id {
            match self.city_effects.get(&id) {
                Some(e) => eta += e,
                None => flags.unknown_city = true,
            }
        }
        let floor = |v: f64, flags: &mut PredictFlags| {
            if v > 0.0 {
                v
            } else {
                flags.floored_pop = true;
                1.0
            }
        };
        eta += self.c1 * floor(o.pop, &mut flags).ln();
        eta += self.c2 * floor(o.nb_pop, &mut flags).ln();
        let (fxy, c1) = self.smooth_xy(o.x, o.y);
        let (fe, c2) = self.smooth_elev(o.elev);
        flags.clamped = c1 || c2;
        (eta + fxy + fe, flags)
    }

    /// Price level of every row.
    pub fn predict(&self, rows: &[LandPriceObs]) -> (Vec<f64>, Vec<PredictFlags>) {
        use rayon::prelude::*;
        rows.par_iter()
            .map(|o| {
                let (eta, f) = self.predict_log(o);
                (eta.exp(), f)
            })
            .unzip()
    }
}

/// Sum of predicted prices over each city's cells per year.
pub fn city_total_values(rows: &[LandPriceObs], price_hat: &[f64]) -> Vec<(i32, u64, f64)> {
    let mut acc: BTreeMap<(i32, u64), f64> = BTreeMap::new();
    for (o, p) in rows.iter().zip(price_hat) {
        if let Some(id) = o.lineage_id {
            *acc.entry((o.year, id)).or_default() += p;
        }
    }
    acc.into_iter().map(|((y, id), v)| (y, id, v)).collect()
}
