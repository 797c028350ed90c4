use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CellId, GridPanel};

/// Which cells count as touching when growing a city.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contiguity {
    /// Edge-sharing cells only.
    #[default]
    Rook,
    /// Edge- or corner-sharing cells.
    Queen,
}

impl std::str::FromStr for Contiguity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rook" => Ok(Contiguity::Rook),
            "queen" => Ok(Contiguity::Queen),
            other => Err(Error::InvalidInput(format!(
                "unknown contiguity {other:?}, expected rook or queen"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectParams {
    /// Persons per km² a cell needs to count as urban.
    pub density_threshold: f64,
    /// Smallest total population of a city.
    pub min_pop: f64,
    pub contiguity: Contiguity,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            density_threshold: 1000.0,
            min_pop: 10_000.0,
            contiguity: Contiguity::Rook,
        }
    }
}

/// A contiguous cluster of dense cells holding enough people to be a city.
#[derive(Debug, Clone, PartialEq)]
pub struct UrbanAgglomeration {
    /// Persistent identifier; 0 until the city has been tracked.
    pub lineage_id: u64,
    /// Member cells in row-major order.
    pub cells: Vec<CellId>,
    /// Population of each member cell, aligned with `cells`.
    pub cell_pops: Vec<f64>,
    pub population: f64,
    pub mean_density: f64,
    /// 1 for the largest city; 0 until ranked.
    pub rank: usize,
}

impl UrbanAgglomeration {
    pub(crate) fn from_cells(cells: Vec<CellId>, cell_pops: Vec<f64>, cell_area: f64) -> Self {
        let population: f64 = cell_pops.iter().sum();
        let mean_density = population / (cells.len() as f64 * cell_area);
        Self {
            lineage_id: 0,
            cells,
            cell_pops,
            population,
            mean_density,
            rank: 0,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Smallest member cell in row-major order.
    pub fn anchor(&self) -> CellId {
        self.cells[0]
    }
}

struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] { (ra, rb) } else { (rb, ra) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
    }
}

/// Finds every maximal connected component of super-threshold cells in
/// `snapshot` and keeps those with at least `min_pop` people. Components are
/// returned unranked, ordered by their smallest cell.
pub fn detect_cities(
    panel: &GridPanel,
    snapshot: &[f64],
    params: &DetectParams,
) -> Result<Vec<UrbanAgglomeration>> {
    let (n_rows, n_cols) = (panel.n_rows(), panel.n_cols());
    if snapshot.len() != panel.n_cells() {
        return Err(Error::InvalidInput(format!(
            "snapshot has {} cells, raster has {}",
            snapshot.len(),
            panel.n_cells()
        )));
    }
    if let Some(bad) = snapshot.iter().position(|v| !v.is_finite() || *v < 0.0) {
        let c = panel.cell_of(bad);
        return Err(Error::InvalidInput(format!(
            "population at ({}, {}) is {}",
            c.row, c.col, snapshot[bad]
        )));
    }
    let area = panel.cell_area();
    let valid = panel.valid_mask();
    let dense: Vec<bool> = snapshot
        .iter()
        .zip(valid)
        .map(|(&p, &ok)| ok && p / area >= params.density_threshold)
        .collect();

    let mut sets = DisjointSet::new(snapshot.len());
    for r in 0..n_rows {
        for c in 0..n_cols {
            let i = r * n_cols + c;
            if !dense[i] {
                continue;
            }
            if c > 0 && dense[i - 1] {
                sets.union(i, i - 1);
            }
            if r > 0 {
                let up = i - n_cols;
                if dense[up] {
                    sets.union(i, up);
                }
                if params.contiguity == Contiguity::Queen {
                    if c > 0 && dense[up - 1] {
                        sets.union(i, up - 1);
                    }
                    if c + 1 < n_cols && dense[up + 1] {
                        sets.union(i, up + 1);
                    }
                }
            }
        }
    }

    // Row-major scan means each component is first seen at its smallest cell.
    let mut slot = vec![usize::MAX; snapshot.len()];
    let mut members: Vec<Vec<usize>> = Vec::new();
    for i in 0..snapshot.len() {
        if !dense[i] {
            continue;
        }
        let root = sets.find(i);
        if slot[root] == usize::MAX {
            slot[root] = members.len();
            members.push(Vec::new());
        }
        members[slot[root]].push(i);
    }

    Ok(members
        .into_iter()
        .map(|idx| {
            let cells = idx.iter().map(|&i| panel.cell_of(i)).collect();
            let pops = idx.iter().map(|&i| snapshot[i]).collect();
            UrbanAgglomeration::from_cells(cells, pops, area)
        })
        .filter(|ua| ua.population >= params.min_pop)
        .collect())
}

/// Size order: population descending, then mean density descending, then
/// smallest member cell.
pub fn city_order(a: &UrbanAgglomeration, b: &UrbanAgglomeration) -> Ordering {
    b.population
        .total_cmp(&a.population)
        .then(b.mean_density.total_cmp(&a.mean_density))
        .then(a.anchor().cmp(&b.anchor()))
}

/// Sorts cities by size and assigns ranks starting at 1.
pub fn rank_cities(mut cities: Vec<UrbanAgglomeration>) -> Vec<UrbanAgglomeration> {
    cities.sort_by(city_order);
    for (i, c) in cities.iter_mut().enumerate() {
        c.rank = i + 1;
    }
    cities
}
