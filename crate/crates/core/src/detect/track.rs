//! Persistent city identities across epochs.
//!
//! Old and new cities are paired greedily by the population (measured at the
//! earlier epoch) inside their areal intersection: the heaviest pair is
//! matched first, then the heaviest pair among still-unmatched cities, and so
//! on. A matched new city inherits the old ID. An unmatched old city whose
//! heaviest overlap went to a new city matched elsewhere is absorbed by it.
//! Unmatched new cities either restore the ID of a retired predecessor they
//! overlap (when they split off an existing city) or receive a fresh ID.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::detect::label::{city_order, rank_cities, UrbanAgglomeration};
use crate::error::{Error, Result};
use crate::grid::CellId;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochCities {
    pub year: i32,
    /// Cities in rank order, each carrying its lineage ID.
    pub cities: Vec<UrbanAgglomeration>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Absorption {
    pub year: i32,
    pub absorbed_id: u64,
    pub absorber_id: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CityLineage {
    epochs: Vec<EpochCities>,
    next_fresh_id: u64,
    absorptions: Vec<Absorption>,
    /// lineage ID -> index of the last epoch it existed in
    last_seen: BTreeMap<u64, usize>,
}

/// Population and cell count shared by two cities, measured on the older one.
#[derive(Debug, Clone, Copy, Default)]
struct Overlap {
    pop: f64,
    n_cells: usize,
}

impl Overlap {
    fn density(&self) -> f64 {
        if self.n_cells == 0 {
            0.0
        } else {
            self.pop / self.n_cells as f64
        }
    }

    /// Heavier overlap first; denser overlap breaks ties.
    fn cmp_desc(&self, other: &Overlap) -> std::cmp::Ordering {
        other
            .pop
            .total_cmp(&self.pop)
            .then(other.density().total_cmp(&self.density()))
    }
}

fn cell_index(cities: &[UrbanAgglomeration]) -> HashMap<CellId, (usize, f64)> {
    let mut map = HashMap::new();
    for (k, c) in cities.iter().enumerate() {
        for (&cell, &pop) in c.cells.iter().zip(&c.cell_pops) {
            map.insert(cell, (k, pop));
        }
    }
    map
}

fn overlap_with(old: &UrbanAgglomeration, new: &UrbanAgglomeration) -> Overlap {
    let old_cells: HashMap<CellId, f64> =
        old.cells.iter().copied().zip(old.cell_pops.iter().copied()).collect();
    let mut ov = Overlap::default();
    for cell in &new.cells {
        if let Some(&p) = old_cells.get(cell) {
            ov.pop += p;
            ov.n_cells += 1;
        }
    }
    ov
}

impl CityLineage {
    pub fn new() -> Self {
        Self {
            next_fresh_id: 1,
            ..Default::default()
        }
    }

    pub fn epochs(&self) -> &[EpochCities] {
        &self.epochs
    }

    pub fn latest(&self) -> Option<&EpochCities> {
        self.epochs.last()
    }

    pub fn cities_at(&self, year: i32) -> Option<&[UrbanAgglomeration]> {
        self.epochs
            .iter()
            .find(|e| e.year == year)
            .map(|e| e.cities.as_slice())
    }

    pub fn next_fresh_id(&self) -> u64 {
        self.next_fresh_id
    }

    pub fn absorptions(&self) -> &[Absorption] {
        &self.absorptions
    }

    /// Population of one lineage at every recorded epoch (None where absent).
    pub fn population_history(&self, id: u64) -> Vec<Option<f64>> {
        self.epochs
            .iter()
            .map(|e| e.cities.iter().find(|c| c.lineage_id == id).map(|c| c.population))
            .collect()
    }

    /// Adds the cities detected at `year`, assigning lineage IDs.
    pub fn advance(&mut self, year: i32, cities: Vec<UrbanAgglomeration>) -> Result<()> {
        if let Some(last) = self.epochs.last() {
            if year <= last.year {
                return Err(Error::InvalidInput(format!(
                    "cannot track {year}: lineage already reaches {}",
                    last.year
                )));
            }
        }
        if self.next_fresh_id == 0 {
            self.next_fresh_id = 1;
        }
        let mut cities = if cities.iter().any(|c| c.rank == 0) {
            rank_cities(cities)
        } else {
            cities
        };
        cities.sort_by_key(|c| c.rank);

        if self.epochs.is_empty() {
            for c in cities.iter_mut() {
                c.lineage_id = c.rank as u64;
            }
            self.next_fresh_id = cities.len() as u64 + 1;
        } else {
            let year_absorptions = self.assign_ids(year, &mut cities)?;
            self.absorptions.extend(year_absorptions);
        }

        let mut seen = BTreeSet::new();
        for c in &cities {
            if c.lineage_id == 0 || !seen.insert(c.lineage_id) {
                return Err(Error::Invariant(format!(
                    "lineage ID {} assigned twice in {year}",
                    c.lineage_id
                )));
            }
        }
        let epoch_idx = self.epochs.len();
        for c in &cities {
            self.last_seen.insert(c.lineage_id, epoch_idx);
        }
        self.epochs.push(EpochCities { year, cities });
        Ok(())
    }

    fn assign_ids(&mut self, year: i32, new: &mut [UrbanAgglomeration]) -> Result<Vec<Absorption>> {
        let prev_idx = self.epochs.len() - 1;
        let old = &self.epochs[prev_idx].cities;

        let old_cells = cell_index(old);
        let mut overlaps: BTreeMap<(usize, usize), Overlap> = BTreeMap::new();
        for (j, c) in new.iter().enumerate() {
            for cell in &c.cells {
                if let Some(&(i, pop)) = old_cells.get(cell) {
                    let ov = overlaps.entry((i, j)).or_default();
                    ov.pop += pop;
                    ov.n_cells += 1;
                }
            }
        }
        let mut pairs: Vec<((usize, usize), Overlap)> = overlaps.into_iter().collect();
        pairs.sort_by(|(a, oa), (b, ob)| {
            oa.cmp_desc(ob)
                .then(old[a.0].anchor().cmp(&old[b.0].anchor()))
                .then(new[a.1].anchor().cmp(&new[b.1].anchor()))
        });

        let mut old_match: Vec<Option<usize>> = vec![None; old.len()];
        let mut new_match: Vec<Option<usize>> = vec![None; new.len()];
        for &((i, j), _) in &pairs {
            if old_match[i].is_none() && new_match[j].is_none() {
                old_match[i] = Some(j);
                new_match[j] = Some(i);
            }
        }
        let mut used: BTreeSet<u64> = BTreeSet::new();
        for (j, m) in new_match.iter().enumerate() {
            if let Some(i) = *m {
                new[j].lineage_id = old[i].lineage_id;
                used.insert(old[i].lineage_id);
            }
        }

        // Unmatched new cities: split-offs try to revive a retired lineage.
        let intersects_old: Vec<bool> = (0..new.len())
            .map(|j| pairs.iter().any(|&((_, jj), _)| jj == j))
            .collect();
        let mut unmatched: Vec<usize> = (0..new.len()).filter(|&j| new_match[j].is_none()).collect();
        unmatched.sort_by(|&a, &b| city_order(&new[a], &new[b]));
        let mut fresh = Vec::new();
        for j in unmatched {
            let revived = if intersects_old[j] {
                self.find_predecessor(prev_idx, &new[j], &used)
            } else {
                None
            };
            match revived {
                Some(id) => {
                    new[j].lineage_id = id;
                    used.insert(id);
                }
                None => fresh.push(j),
            }
        }
        // `unmatched` was already in size order, so fresh IDs follow it.
        for j in fresh {
            new[j].lineage_id = self.next_fresh_id;
            self.next_fresh_id += 1;
        }

        // Old cities that lost their heaviest overlap to another lineage.
        let mut absorbed = Vec::new();
        for (i, city) in old.iter().enumerate() {
            if old_match[i].is_some() {
                continue;
            }
            // `pairs` is sorted, so the first hit is this city's heaviest
            // overlap; greedy matching guarantees that partner is taken.
            if let Some(&((_, j), _)) = pairs.iter().find(|&&((ii, _), _)| ii == i) {
                absorbed.push(Absorption {
                    year,
                    absorbed_id: city.lineage_id,
                    absorber_id: new[j].lineage_id,
                });
            }
        }
        Ok(absorbed)
    }

    /// Latest retired lineage (absent at the previous epoch and not yet
    /// reused) whose last known footprint overlaps `city`.
    fn find_predecessor(
        &self,
        prev_idx: usize,
        city: &UrbanAgglomeration,
        used: &BTreeSet<u64>,
    ) -> Option<u64> {
        let mut best: Option<(usize, Overlap, u64)> = None;
        for (&id, &last) in &self.last_seen {
            if last >= prev_idx || used.contains(&id) {
                continue;
            }
            let Some(old) = self.epochs[last].cities.iter().find(|c| c.lineage_id == id) else {
                continue;
            };
            let ov = overlap_with(old, city);
            if ov.n_cells == 0 {
                continue;
            }
            let better = match &best {
                None => true,
                Some((b_last, b_ov, b_id)) => last
                    .cmp(b_last)
                    .then(b_ov.cmp_desc(&ov))
                    .then(b_id.cmp(&id))
                    .is_gt(),
            };
            if better {
                best = Some((last, ov, id));
            }
        }
        best.map(|(_, _, id)| id)
    }
}

/// Pure form of [`CityLineage::advance`].
pub fn track_cities(
    lineage: &CityLineage,
    year: i32,
    new_cities: Vec<UrbanAgglomeration>,
) -> Result<CityLineage> {
    let mut next = lineage.clone();
    next.advance(year, new_cities)?;
    Ok(next)
}
