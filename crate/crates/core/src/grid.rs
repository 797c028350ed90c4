//! Raster population panel: cell addressing, study-area mask, Moore
//! neighborhoods and per-epoch snapshots.
//!
//! Populations are stored epoch-major (one dense snapshot per epoch) so that
//! detection and rescaling work on contiguous slices. Cells outside the study
//! area always hold zero and are never reported as neighbors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row/column address of a raster cell. Ordering is row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub row: usize,
    pub col: usize,
}

impl CellId {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// A rectangular raster of cells, each carrying a population time series.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPanel {
    n_rows: usize,
    n_cols: usize,
    cell_area: f64,
    years: Vec<i32>,
    snapshots: Vec<Vec<f64>>,
    valid: Vec<bool>,
}

impl GridPanel {
    /// Builds a panel from per-epoch snapshots (each `n_rows * n_cols`,
    /// row-major) and a validity mask.
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        years: Vec<i32>,
        snapshots: Vec<Vec<f64>>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = n_rows * n_cols;
        if n == 0 {
            return Err(Error::InvalidInput("raster has no cells".into()));
        }
        if valid.len() != n {
            return Err(Error::InvalidInput(format!(
                "mask has {} entries, raster has {n} cells",
                valid.len()
            )));
        }
        if years.len() != snapshots.len() {
            return Err(Error::InvalidInput(format!(
                "{} epoch labels for {} snapshots",
                years.len(),
                snapshots.len()
            )));
        }
        check_years(&years)?;
        let mut panel = Self {
            n_rows,
            n_cols,
            cell_area: 1.0,
            years: Vec::with_capacity(years.len()),
            snapshots: Vec::with_capacity(snapshots.len()),
            valid,
        };
        for (year, snap) in years.into_iter().zip(snapshots) {
            panel.check_snapshot(year, &snap)?;
            panel.years.push(year);
            panel.snapshots.push(snap);
        }
        Ok(panel)
    }

    /// A panel where every cell is valid.
    pub fn full(n_rows: usize, n_cols: usize, years: Vec<i32>, snapshots: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(n_rows, n_cols, years, snapshots, vec![true; n_rows * n_cols])
    }

    pub fn with_cell_area(mut self, area: f64) -> Result<Self> {
        if !(area.is_finite() && area > 0.0) {
            return Err(Error::InvalidInput(format!("cell area must be positive, got {area}")));
        }
        self.cell_area = area;
        Ok(self)
    }

    fn check_snapshot(&self, year: i32, snap: &[f64]) -> Result<()> {
        if snap.len() != self.n_cells() {
            return Err(Error::InvalidInput(format!(
                "snapshot for {year} has {} values, expected {}",
                snap.len(),
                self.n_cells()
            )));
        }
        for (idx, (&v, &ok)) in snap.iter().zip(&self.valid).enumerate() {
            if !v.is_finite() || v < 0.0 {
                let c = self.cell_of(idx);
                return Err(Error::InvalidInput(format!(
                    "population {v} at ({}, {}) in {year} is not a finite non-negative number",
                    c.row, c.col
                )));
            }
            if !ok && v != 0.0 {
                let c = self.cell_of(idx);
                return Err(Error::InvalidInput(format!(
                    "cell ({}, {}) is outside the study area but has population {v} in {year}",
                    c.row, c.col
                )));
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_cells(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_area
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn n_epochs(&self) -> usize {
        self.years.len()
    }

    /// Epoch spacing in years; `None` for single-epoch panels.
    pub fn spacing(&self) -> Option<i32> {
        (self.years.len() >= 2).then(|| self.years[1] - self.years[0])
    }

    /// Epoch index counted from 1 at the first epoch.
    pub fn time_index(&self, epoch: usize) -> usize {
        epoch + 1
    }

    pub fn epoch_of_year(&self, year: i32) -> Option<usize> {
        self.years.iter().position(|&y| y == year)
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, cell: CellId) -> bool {
        self.in_bounds(cell) && self.valid[self.index(cell)]
    }

    pub fn in_bounds(&self, cell: CellId) -> bool {
        cell.row < self.n_rows && cell.col < self.n_cols
    }

    pub fn index(&self, cell: CellId) -> usize {
        cell.row * self.n_cols + cell.col
    }

    pub fn cell_of(&self, index: usize) -> CellId {
        CellId::new(index / self.n_cols, index % self.n_cols)
    }

    /// Valid cells in row-major order.
    pub fn valid_cells(&self) -> impl Iterator<Item = CellId> + '_ {
        (0..self.n_cells()).filter(|&i| self.valid[i]).map(|i| self.cell_of(i))
    }

    pub fn snapshot(&self, epoch: usize) -> &[f64] {
        &self.snapshots[epoch]
    }

    pub fn snapshots(&self) -> &[Vec<f64>] {
        &self.snapshots
    }

    pub fn pop(&self, cell: CellId, epoch: usize) -> f64 {
        self.snapshots[epoch][self.index(cell)]
    }

    /// Population time series of one cell over every epoch.
    pub fn series(&self, cell: CellId) -> Vec<f64> {
        let idx = self.index(cell);
        self.snapshots.iter().map(|s| s[idx]).collect()
    }

    pub fn total(&self, epoch: usize) -> f64 {
        self.snapshots[epoch].iter().sum()
    }

    /// Appends a new epoch, which must continue the existing spacing.
    pub fn push_epoch(&mut self, year: i32, snapshot: Vec<f64>) -> Result<()> {
        if let Some(&last) = self.years.last() {
            let expected = self.spacing().map(|s| last + s);
            if year <= last || expected.is_some_and(|e| e != year) {
                return Err(Error::InvalidInput(format!(
                    "epoch {year} does not continue the panel after {last}"
                )));
            }
        }
        self.check_snapshot(year, &snapshot)?;
        self.years.push(year);
        self.snapshots.push(snapshot);
        Ok(())
    }

    /// Keeps only the first `n` epochs.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.n_epochs());
        Self {
            years: self.years[..n].to_vec(),
            snapshots: self.snapshots[..n].to_vec(),
            ..self.clone()
        }
    }

    /// Edge- and corner-adjacent valid cells in row-major order.
    pub fn neighbors8(&self, cell: CellId) -> Result<Vec<CellId>> {
        if !self.in_bounds(cell) {
            return Err(Error::OutOfBounds {
                row: cell.row,
                col: cell.col,
                n_rows: self.n_rows,
                n_cols: self.n_cols,
            });
        }
        let mut out = Vec::with_capacity(8);
        let r0 = cell.row.saturating_sub(1);
        let c0 = cell.col.saturating_sub(1);
        let r1 = (cell.row + 1).min(self.n_rows - 1);
        let c1 = (cell.col + 1).min(self.n_cols - 1);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let nb = CellId::new(r, c);
                if nb != cell && self.valid[self.index(nb)] {
                    out.push(nb);
                }
            }
        }
        Ok(out)
    }

    /// Mean population of the valid Moore neighbors at every epoch.
    pub fn neighbor_mean_series(&self, cell: CellId) -> Result<Vec<f64>> {
        if !self.is_valid(cell) {
            return Err(Error::InvalidInput(format!(
                "cell ({}, {}) is not a valid study-area cell",
                cell.row, cell.col
            )));
        }
        let nbs = self.neighbors8(cell)?;
        if nbs.is_empty() {
            return Err(Error::InvalidInput(format!(
                "cell ({}, {}) has no valid neighbors",
                cell.row, cell.col
            )));
        }
        let idx: Vec<usize> = nbs.iter().map(|&c| self.index(c)).collect();
        Ok(self
            .snapshots
            .iter()
            .map(|s| neighbor_mean(s, &idx))
            .collect())
    }

    /// Neighbor means of an arbitrary snapshot laid out like this panel.
    /// Cells without valid neighbors get `None`.
    pub fn neighbor_means(&self, snapshot: &[f64]) -> Vec<Option<f64>> {
        (0..self.n_cells())
            .map(|i| {
                let cell = self.cell_of(i);
                if !self.valid[i] {
                    return None;
                }
                let nbs = self.neighbors8(cell).ok()?;
                if nbs.is_empty() {
                    return None;
                }
                let idx: Vec<usize> = nbs.iter().map(|&c| self.index(c)).collect();
                Some(neighbor_mean(snapshot, &idx))
            })
            .collect()
    }
}

fn neighbor_mean(snapshot: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| snapshot[i]).sum::<f64>() / idx.len() as f64
}

fn check_years(years: &[i32]) -> Result<()> {
    if years.len() < 2 {
        return Ok(());
    }
    let step = years[1] - years[0];
    if step <= 0 {
        return Err(Error::InvalidInput("epochs must be strictly increasing".into()));
    }
    for w in years.windows(2) {
        if w[1] - w[0] != step {
            return Err(Error::InvalidInput(format!(
                "epochs must be equally spaced: {} -> {} breaks spacing {step}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}
