//! Synthetic panels: rank-size distributed cities drawn as exponential
//! density bumps on a rural background, evolved under national growth,
//! rank-dependent concentration and multiplicative noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CellId, GridPanel};
use crate::powerlaw::log_rank;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_rows: usize,
    pub n_cols: usize,
    pub n_cities: usize,
    /// Rank-size intercept (log persons).
    pub rank_a: f64,
    /// Rank-size slope.
    pub rank_b: f64,
    /// Log-scale noise of the initial city sizes.
    pub size_noise_sd: f64,
    /// Per-cell exponential decay of density away from a city center.
    pub decay_rate: f64,
    /// Density a cell needs to belong to a city core at the first epoch.
    pub core_density: f64,
    /// Population of a rural cell at the first epoch.
    pub rural_level: f64,
    /// National growth per epoch, e.g. `-0.005` for 0.5 % decline.
    pub growth_rate: f64,
    /// Per-epoch shift of population toward larger cities; 0 keeps shares.
    pub concentration: f64,
    /// Log-scale multiplicative noise per cell and epoch.
    pub noise_sd: f64,
    /// Empty cells kept between city footprints.
    pub gap: usize,
    pub n_epochs: usize,
    pub start_year: i32,
    pub spacing: i32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_rows: 100,
            n_cols: 100,
            n_cities: 30,
            rank_a: 12.5,
            rank_b: -1.0,
            size_noise_sd: 0.0,
            decay_rate: 0.8,
            core_density: 1000.0,
            rural_level: 50.0,
            growth_rate: 0.0,
            concentration: 0.0,
            noise_sd: 0.0,
            gap: 2,
            n_epochs: 11,
            start_year: 1970,
            spacing: 5,
        }
    }
}

/// Ground truth of one generated city.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthCity {
    pub rank: usize,
    pub row: usize,
    pub col: usize,
    /// Population of the core cells at the first epoch.
    pub population: f64,
    pub peak_density: f64,
    /// Cells above the rural background.
    pub footprint_cells: usize,
}

#[derive(Debug, Clone)]
pub struct SynthPanel {
    pub panel: GridPanel,
    pub cities: Vec<SynthCity>,
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// `P_r = exp(A + B ln(r - 0.5) + e_r)` for `r = 1..=n`, `e_r ~ N(0, sd²)`.
pub fn gen_rank_size_sample(n: usize, a: f64, b: f64, noise_sd: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed, 0);
    (1..=n)
        .map(|rank| {
            let z: f64 = r.sample(StandardNormal);
            (a + b * log_rank(rank) + noise_sd * z).exp()
        })
        .collect()
}

/// Offsets from a center grouped by squared distance, nearest first.
fn rings(max_radius: usize) -> Vec<(i64, Vec<(i64, i64)>)> {
    let m = max_radius as i64;
    let mut all: Vec<(i64, (i64, i64))> = Vec::new();
    for dr in -m..=m {
        for dc in -m..=m {
            let d2 = dr * dr + dc * dc;
            if d2 <= m * m {
                all.push((d2, (dr, dc)));
            }
        }
    }
    all.sort();
    let mut out: Vec<(i64, Vec<(i64, i64)>)> = Vec::new();
    for (d2, off) in all {
        match out.last_mut() {
            Some((last, v)) if *last == d2 => v.push(off),
            _ => out.push((d2, vec![off])),
        }
    }
    out
}

struct Bump {
    amplitude: f64,
    /// Extra population on the center cell so the core sums to the target.
    remainder: f64,
    radius: f64,
}

/// Chooses the peak density so that cells with density at least
/// `core_density` hold exactly `population` people.
fn calibrate(population: f64, decay: f64, core: f64, rural: f64, rings: &[(i64, Vec<(i64, i64)>)]) -> Result<Bump> {
    if population < core {
        return Err(Error::InvalidInput(format!(
            "city of {population} people cannot fill one core cell of density {core}"
        )));
    }
    let k: Vec<f64> = rings.iter().map(|(d2, _)| (-decay * (*d2 as f64).sqrt()).exp()).collect();
    let mut cum = 0.0;
    let mut pick = None;
    for (g, (_, offs)) in rings.iter().enumerate() {
        cum += offs.len() as f64 * k[g];
        if g + 1 == rings.len() {
            break;
        }
        if core * cum / k[g] * (1.0 + 1e-9) <= population {
            pick = Some((g, cum));
        } else {
            break;
        }
    }
    let (g, cum) = pick.ok_or_else(|| Error::InvalidInput("city too large for the kernel window".into()))?;
    let ceiling = core / k[g + 1] / (1.0 + 1e-6);
    let amplitude = (population / cum).min(ceiling);
    let remainder = population - amplitude * cum;
    Ok(Bump {
        amplitude,
        remainder,
        radius: (amplitude / rural).ln().max(0.0) / decay,
    })
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.n_rows == 0 || self.n_cols == 0 {
            return bad("raster must have at least one cell");
        }
        if self.n_epochs == 0 || self.spacing <= 0 {
            return bad("need at least one epoch and a positive spacing");
        }
        if !(self.decay_rate > 0.0) {
            return bad("decay_rate must be positive");
        }
        if !(self.rural_level > 0.0 && self.rural_level < self.core_density) {
            return bad("rural_level must be positive and below core_density");
        }
        if self.growth_rate <= -1.0 || self.noise_sd < 0.0 || self.size_noise_sd < 0.0 {
            return bad("growth_rate must exceed -1 and noise scales must be non-negative");
        }
        Ok(())
    }
}

/// Generates a panel from `spec`. Pure function of the spec.
pub fn gen_panel(spec: &SynthSpec) -> Result<SynthPanel> {
    spec.validate()?;
    let mut sizes = gen_rank_size_sample(spec.n_cities, spec.rank_a, spec.rank_b, spec.size_noise_sd, spec.seed);
    sizes.sort_by(|a, b| b.total_cmp(a));

    let window = spec.n_rows.max(spec.n_cols);
    let ring_set = rings(window);
    let bumps = sizes
        .iter()
        .map(|&p| calibrate(p, spec.decay_rate, spec.core_density, spec.rural_level, &ring_set))
        .collect::<Result<Vec<_>>>()?;

    let centers = place_centers(spec, &bumps)?;

    // first-epoch field and city membership of every cell
    let n_cells = spec.n_rows * spec.n_cols;
    let mut base = vec![spec.rural_level; n_cells];
    let mut owner: Vec<Option<usize>> = vec![None; n_cells];
    let mut cities = Vec::with_capacity(bumps.len());
    for (i, (b, &(r0, c0))) in bumps.iter().zip(&centers).enumerate() {
        let reach = b.radius.floor() as i64;
        let mut footprint = 0;
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                let (r, c) = (r0 as i64 + dr, c0 as i64 + dc);
                if r < 0 || c < 0 || r >= spec.n_rows as i64 || c >= spec.n_cols as i64 {
                    continue;
                }
                let d = ((dr * dr + dc * dc) as f64).sqrt();
                let v = b.amplitude * (-spec.decay_rate * d).exp();
                if v < spec.rural_level {
                    continue;
                }
                let idx = r as usize * spec.n_cols + c as usize;
                base[idx] = v;
                owner[idx] = Some(i);
                footprint += 1;
            }
        }
        base[r0 * spec.n_cols + c0] += b.remainder;
        cities.push(SynthCity {
            rank: i + 1,
            row: r0,
            col: c0,
            population: sizes[i],
            peak_density: b.amplitude,
            footprint_cells: footprint,
        });
    }

    let years: Vec<i32> = (0..spec.n_epochs)
        .map(|e| spec.start_year + e as i32 * spec.spacing)
        .collect();
    let mut snapshots = Vec::with_capacity(spec.n_epochs);
    for e in 0..spec.n_epochs {
        let national = (1.0 + spec.growth_rate).powi(e as i32);
        // rank-dependent multipliers, normalized to keep the urban total
        let raw: Vec<f64> = (1..=sizes.len())
            .map(|r| (-spec.concentration * e as f64 * log_rank(r)).exp())
            .collect();
        let urban: f64 = sizes.iter().sum();
        let shifted: f64 = sizes.iter().zip(&raw).map(|(p, m)| p * m).sum();
        let norm = if shifted > 0.0 { urban / shifted } else { 1.0 };
        let mut noise = rng(spec.seed, 2 + e as u64);
        let snap: Vec<f64> = (0..n_cells)
            .map(|i| {
                let z: f64 = noise.sample(StandardNormal);
                let m = owner[i].map_or(1.0, |k| raw[k] * norm);
                let v = base[i] * national * m;
                if spec.noise_sd > 0.0 {
                    v * (spec.noise_sd * z).exp()
                } else {
                    v
                }
            })
            .collect();
        snapshots.push(snap);
    }
    let panel = GridPanel::full(spec.n_rows, spec.n_cols, years, snapshots)?;
    Ok(SynthPanel { panel, cities })
}

const PLACEMENT_RESTARTS: usize = 50;

/// Centers for every bump, largest first. Each city takes the first clear
/// position of a shuffled scan over the whole raster; if some city finds
/// none, the layout starts over with a new shuffle.
fn place_centers(spec: &SynthSpec, bumps: &[Bump]) -> Result<Vec<(usize, usize)>> {
    let mut place_rng = rng(spec.seed, 1);
    let gap = spec.gap as f64 + 1.0;
    for attempt in 0..PLACEMENT_RESTARTS {
        let mut centers: Vec<(usize, usize)> = Vec::with_capacity(bumps.len());
        for (i, b) in bumps.iter().enumerate() {
            let margin = b.radius.ceil() as usize;
            if 2 * margin + 1 > spec.n_rows || 2 * margin + 1 > spec.n_cols {
                return Err(overlap_error(spec));
            }
            let mut candidates: Vec<(usize, usize)> = (margin..spec.n_rows - margin)
                .flat_map(|r| (margin..spec.n_cols - margin).map(move |c| (r, c)))
                .collect();
            candidates.shuffle(&mut place_rng);
            let clear = |&(r, c): &(usize, usize)| {
                centers.iter().zip(bumps).all(|(&(r2, c2), b2)| {
                    let d = ((r as f64 - r2 as f64).powi(2) + (c as f64 - c2 as f64).powi(2)).sqrt();
                    d > b.radius + b2.radius + gap
                })
            };
            match candidates.into_iter().find(clear) {
                Some(pos) => centers.push(pos),
                None => {
                    log::debug!("layout {attempt}: no room for city {}", i + 1);
                    break;
                }
            }
        }
        if centers.len() == bumps.len() {
            return Ok(centers);
        }
    }
    Err(overlap_error(spec))
}

fn overlap_error(spec: &SynthSpec) -> Error {
    Error::InvalidInput(format!(
        "cannot place {} cities without overlap on a {}x{} raster; use a larger raster, \
         fewer cities or a faster decay",
        spec.n_cities, spec.n_rows, spec.n_cols
    ))
}

/// Cell at the center of a generated city.
pub fn center_cell(city: &SynthCity) -> CellId {
    CellId::new(city.row, city.col)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{detect_cities, rank_cities, DetectParams};
    use crate::powerlaw::fit_rank_size;

    #[test]
    fn exact_rank_size_sample() {
        let s = gen_rank_size_sample(50, 10.0, -1.0, 0.0, 3);
        assert!((s[0] - 2.0 * 10f64.exp()).abs() < 1e-9 * s[0]);
        let f = fit_rank_size(&s).unwrap();
        assert!((f.intercept - 10.0).abs() < 1e-10 && (f.slope + 1.0).abs() < 1e-10);
        assert_eq!(gen_rank_size_sample(20, 10.0, -1.0, 0.3, 5), gen_rank_size_sample(20, 10.0, -1.0, 0.3, 5));
    }

    #[test]
    fn static_spec_repeats_epochs() {
        let spec = SynthSpec {
            n_rows: 60,
            n_cols: 60,
            n_cities: 8,
            n_epochs: 3,
            ..SynthSpec::default()
        };
        let s = gen_panel(&spec).unwrap();
        assert_eq!(s.panel.snapshot(0), s.panel.snapshot(2));
    }

    #[test]
    fn detection_recovers_generated_cities() {
        let spec = SynthSpec {
            n_rows: 80,
            n_cols: 80,
            n_cities: 12,
            n_epochs: 1,
            seed: 11,
            ..SynthSpec::default()
        };
        let s = gen_panel(&spec).unwrap();
        let found = rank_cities(detect_cities(&s.panel, s.panel.snapshot(0), &DetectParams::default()).unwrap());
        assert_eq!(found.len(), 12);
        for (f, t) in found.iter().zip(&s.cities) {
            assert!((f.population - t.population).abs() < 0.01 * t.population);
        }
    }

    #[test]
    fn declining_totals() {
        let spec = SynthSpec {
            n_rows: 60,
            n_cols: 60,
            n_cities: 6,
            growth_rate: -0.01,
            concentration: 0.02,
            n_epochs: 5,
            ..SynthSpec::default()
        };
        let s = gen_panel(&spec).unwrap();
        let totals: Vec<f64> = (0..5).map(|e| s.panel.total(e)).collect();
        assert!(totals.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn crowded_raster_is_rejected() {
        let spec = SynthSpec {
            n_rows: 20,
            n_cols: 20,
            n_cities: 40,
            ..SynthSpec::default()
        };
        let err = gen_panel(&spec).unwrap_err().to_string();
        assert!(err.contains("larger raster"));
    }
}
