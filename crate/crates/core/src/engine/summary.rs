use crate::detect::CityLineage;
use crate::grid::GridPanel;

/// City-size cutoffs reported by default: 100 thousand, 500 thousand, 1 million.
pub const DEFAULT_SIZE_THRESHOLDS: [f64; 3] = [1e5, 5e5, 1e6];

/// City-system statistics of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub year: i32,
    pub n_cities: usize,
    /// Number of cities at or above each size threshold.
    pub counts_above: Vec<usize>,
    /// Shares of the urban population held by the largest 1, 5 and 10 cities.
    pub top1_share: f64,
    pub top5_share: f64,
    pub top10_share: f64,
    /// Mean and maximum of the city mean densities.
    pub mean_density: f64,
    pub max_density: f64,
    /// Mean city area.
    pub mean_area: f64,
    pub total_pop: f64,
    pub urban_pop: f64,
}

/// Column suffix for a size threshold: `100k`, `1m`, or the plain number.
pub fn threshold_label(t: f64) -> String {
    if t >= 1e6 && t % 1e6 == 0.0 {
        format!("{}m", t / 1e6)
    } else if t >= 1e3 && t % 1e3 == 0.0 {
        format!("{}k", t / 1e3)
    } else {
        format!("{t}")
    }
}

/// One row per epoch of `lineage`; `panel` must cover the same years.
pub fn summarize(panel: &GridPanel, lineage: &CityLineage, thresholds: &[f64]) -> Vec<SummaryRow> {
    lineage
        .epochs()
        .iter()
        .map(|ep| {
            let e = panel.epoch_of_year(ep.year).expect("lineage year missing from panel");
            let pops: Vec<f64> = ep.cities.iter().map(|c| c.population).collect();
            let urban: f64 = pops.iter().sum();
            let top = |k: usize| {
                if urban > 0.0 {
                    pops.iter().take(k).sum::<f64>() / urban
                } else {
                    0.0
                }
            };
            let n = ep.cities.len();
            let (mean_density, max_density, mean_area) = if n == 0 {
                (0.0, 0.0, 0.0)
            } else {
                let d: Vec<f64> = ep.cities.iter().map(|c| c.mean_density).collect();
                let cells: usize = ep.cities.iter().map(|c| c.n_cells()).sum();
                (
                    d.iter().sum::<f64>() / n as f64,
                    d.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    cells as f64 * panel.cell_area() / n as f64,
                )
            };
            SummaryRow {
                year: ep.year,
                n_cities: n,
                counts_above: thresholds.iter().map(|&t| pops.iter().filter(|&&p| p >= t).count()).collect(),
                top1_share: top(1),
                top5_share: top(5),
                top10_share: top(10),
                mean_density,
                max_density,
                mean_area,
                total_pop: panel.total(e),
                urban_pop: urban,
            }
        })
        .collect()
}
