#![allow(dead_code)]

use std::collections::VecDeque;

use cityproj_core::detect::Contiguity;
use cityproj_core::engine::Scenario;
use cityproj_core::landprice::LandPriceObs;
use cityproj_core::synth::{gen_panel, SynthSpec};
use cityproj_core::{CellId, GridPanel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Plain BFS labeling: every maximal component of cells with
/// `value >= threshold`, kept if it sums to at least `min_pop`. Each
/// component is its sorted cell list and its population.
pub fn flood_fill(
    n_rows: usize,
    n_cols: usize,
    snap: &[f64],
    threshold: f64,
    min_pop: f64,
    contiguity: Contiguity,
) -> Vec<(Vec<(usize, usize)>, f64)> {
    let steps: &[(i64, i64)] = match contiguity {
        Contiguity::Rook => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Contiguity::Queen => &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
    };
    let mut seen = vec![false; n_rows * n_cols];
    let mut out = Vec::new();
    for start in 0..n_rows * n_cols {
        if seen[start] || snap[start] < threshold {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut cells = Vec::new();
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / n_cols, i % n_cols);
            cells.push((r, c));
            for &(dr, dc) in steps {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr < 0 || nc < 0 || nr >= n_rows as i64 || nc >= n_cols as i64 {
                    continue;
                }
                let j = nr as usize * n_cols + nc as usize;
                if !seen[j] && snap[j] >= threshold {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        cells.sort_unstable();
        let pop: f64 = cells.iter().map(|&(r, c)| snap[r * n_cols + c]).sum();
        if pop >= min_pop {
            out.push((cells, pop));
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Random raster mixing dense and sparse cells, with some cells exactly at
/// the threshold.
pub fn random_raster(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let dense_p = rng.random_range(0.2..0.7);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            if u < 0.02 {
                1000.0
            } else if rng.random::<f64>() < dense_p {
                rng.random_range(1000.0..6000.0)
            } else {
                rng.random_range(0.0..1000.0)
            }
        })
        .collect()
}

/// Snapshots of the merge, split and genesis sequence on a 10×10 raster.
/// The first epoch has seven single- or two-cell cities; the rank-3 city
/// (two cells at row 4, cols 2-3) and the rank-7 city (row 4, col 6) merge
/// in the second epoch, split again in the third, and a new 12k cluster
/// appears in the fourth.
pub fn tracking_snapshots() -> (Vec<i32>, Vec<Vec<f64>>) {
    let mut base = vec![0.0; 100];
    let set = |s: &mut Vec<f64>, r: usize, c: usize, v: f64| s[r * 10 + c] = v;
    set(&mut base, 0, 0, 70_000.0);
    set(&mut base, 0, 4, 60_000.0);
    set(&mut base, 4, 2, 25_000.0);
    set(&mut base, 4, 3, 25_000.0);
    set(&mut base, 0, 8, 45_000.0);
    set(&mut base, 9, 0, 40_000.0);
    set(&mut base, 9, 9, 35_000.0);
    set(&mut base, 4, 6, 30_000.0);

    let mut merged = base.clone();
    set(&mut merged, 4, 4, 2_000.0);
    set(&mut merged, 4, 5, 2_000.0);

    let mut split = merged.clone();
    set(&mut split, 4, 5, 500.0);

    let mut genesis = split.clone();
    set(&mut genesis, 7, 5, 12_000.0);

    (vec![2000, 2005, 2010, 2015], vec![base, merged, split, genesis])
}

/// Conservation fixture: seeded 100×100 raster with 30 cities, 11 training
/// epochs and a 20-epoch scenario with a slowly falling total.
pub fn conservation_fixture(seed: u64) -> (GridPanel, Scenario) {
    let spec = SynthSpec {
        seed,
        growth_rate: 0.01,
        concentration: 0.01,
        noise_sd: 0.03,
        ..SynthSpec::default()
    };
    let panel = gen_panel(&spec).expect("conservation fixture").panel;
    let scenario = falling_scenario(&panel, 20, 0.002);
    (panel, scenario)
}

/// Scenario continuing `panel` for `n` epochs, the total shrinking by
/// `rate` per epoch and the urban share left to extrapolation.
pub fn falling_scenario(panel: &GridPanel, n: usize, rate: f64) -> Scenario {
    let last = *panel.years().last().unwrap();
    let spacing = panel.spacing().unwrap();
    let total = panel.total(panel.n_epochs() - 1);
    let years = (1..=n as i32).map(|k| last + k * spacing).collect();
    let totals = (1..=n as i32).map(|k| total * (1.0 - rate).powi(k)).collect();
    Scenario::new("declining", years, totals, None).unwrap()
}

/// Reference declining country: 100 cities on a 200×200 raster, national
/// population falling 0.5% per epoch and mass concentrating toward large
/// cities, with 2% multiplicative noise.
pub fn declining_spec() -> SynthSpec {
    SynthSpec {
        seed: 1,
        n_rows: 200,
        n_cols: 200,
        n_cities: 100,
        rank_a: 12.8,
        rank_b: -0.7,
        decay_rate: 1.0,
        growth_rate: -0.005,
        concentration: 0.01,
        noise_sd: 0.02,
        ..SynthSpec::default()
    }
}

pub fn declining_fixture() -> (GridPanel, Scenario) {
    let panel = gen_panel(&declining_spec()).expect("declining fixture").panel;
    let scenario = falling_scenario(&panel, 20, 0.005);
    (panel, scenario)
}

/// Block cities of 3×3 cells on a rural background of 50, spaced six cells
/// apart. `cell_pop(city, epoch)` gives each member cell's population.
pub fn block_panel(n_cities: usize, n_epochs: usize, cell_pop: impl Fn(usize, usize) -> f64) -> GridPanel {
    let per_row = 6;
    let side = per_row * 6 + 2;
    let years: Vec<i32> = (0..n_epochs as i32).map(|e| 1995 + 5 * e).collect();
    let snaps = (0..n_epochs)
        .map(|e| {
            let mut s = vec![50.0; side * side];
            for c in 0..n_cities {
                let (r0, c0) = (2 + 6 * (c / per_row), 2 + 6 * (c % per_row));
                let v = cell_pop(c, e);
                for r in r0..r0 + 3 {
                    for cc in c0..c0 + 3 {
                        s[r * side + cc] = v;
                    }
                }
            }
            s
        })
        .collect();
    GridPanel::full(side, side, years, snaps).unwrap()
}

/// Six cities whose cells follow `a + b ln t` exactly; three grow and three
/// shrink.
pub fn loglinear_panel() -> GridPanel {
    let coef = [(2500.0, 300.0), (2200.0, -200.0), (1800.0, 150.0), (2600.0, -250.0), (2000.0, 100.0), (3000.0, -120.0)];
    block_panel(coef.len(), 6, |c, e| {
        let (a, b) = coef[c];
        a + b * ((e + 1) as f64).ln()
    })
}

/// Thirty cities whose cell populations follow independent Gaussian random
/// walks.
pub fn random_walk_panel(seed: u64) -> GridPanel {
    let mut rng = rng(seed);
    let n_epochs = 6;
    let paths: Vec<Vec<f64>> = (0..30)
        .map(|_| {
            let mut v = 5000.0;
            (0..n_epochs)
                .map(|_| {
                    let cur = v;
                    v += 200.0 * normal(&mut rng);
                    cur
                })
                .collect()
        })
        .collect();
    block_panel(30, n_epochs, |c, e| paths[c][e])
}

pub const LANDPRICE_C0: f64 = 9.60;
pub const LANDPRICE_C1: f64 = 0.0938;
pub const LANDPRICE_C2: f64 = 0.0000779;

/// Land-price rows drawn from the log-linear additive model with smooth
/// coordinate and elevation terms, 20 city offsets and Gaussian noise.
pub fn landprice_rows(n: usize, noise_sd: f64, seed: u64) -> Vec<LandPriceObs> {
    let mut rng = rng(seed);
    let effects: Vec<f64> = (0..20).map(|_| 0.2 * normal(&mut rng)).collect();
    (0..n)
        .map(|i| {
            let pop = (rng.random_range(2.0f64..9.0)).exp();
            let nb_pop = (rng.random_range(2.0f64..9.0)).exp();
            let (x, y): (f64, f64) = (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
            let elev = rng.random_range(0.0..800.0);
            let city = (rng.random::<f64>() < 0.5).then(|| rng.random_range(1..=20u64));
            let offset = city.map_or(0.0, |c| effects[c as usize - 1]);
            let smooth = 0.3 * (x * 1.2).sin() + 0.1 * x * y - 0.0004 * elev;
            let log_price = LANDPRICE_C0
                + offset
                + LANDPRICE_C1 * pop.ln()
                + LANDPRICE_C2 * nb_pop.ln()
                + smooth
                + noise_sd * normal(&mut rng);
            LandPriceObs {
                cell: CellId::new(i / 100, i % 100),
                year: 2020,
                price: log_price.exp(),
                pop,
                nb_pop,
                x,
                y,
                elev,
                lineage_id: city,
            }
        })
        .collect()
}

/// Largest relative gap between the urban and rural sums of each projected
/// snapshot and the scenario targets. The urban stratum is the union of the
/// cities detected at the preceding epoch.
pub fn conservation_gap(proj: &cityproj_core::engine::Projection, scenario: &Scenario) -> f64 {
    let out = &proj.panel;
    let mut worst = 0.0f64;
    for k in 0..proj.projected_years().len() {
        let e = proj.n_training + k;
        let mut urban = vec![false; out.n_cells()];
        for c in &proj.lineage.epochs()[e - 1].cities {
            for &cell in &c.cells {
                urban[out.index(cell)] = true;
            }
        }
        let snap = out.snapshot(e);
        let (mut u, mut r) = (0.0, 0.0);
        for i in (0..out.n_cells()).filter(|&i| out.valid_mask()[i]) {
            if urban[i] {
                u += snap[i];
            } else {
                r += snap[i];
            }
        }
        let total = scenario.total_pop[k];
        let share = proj.urban_share[k];
        let (ut, rt) = if urban.iter().any(|&b| b) {
            (total * share, total * (1.0 - share))
        } else {
            (0.0, total)
        };
        let rel = |a: f64, b: f64| if b == 0.0 { a.abs() } else { (a - b).abs() / b };
        worst = worst.max(rel(u, ut)).max(rel(r, rt));
    }
    worst
}
