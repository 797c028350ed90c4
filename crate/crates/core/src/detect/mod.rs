//! Urban agglomeration detection and lineage tracking.

mod label;
mod track;

pub use label::{city_order, detect_cities, rank_cities, Contiguity, DetectParams, UrbanAgglomeration};
pub use track::{track_cities, Absorption, CityLineage, EpochCities};

use crate::error::Result;
use crate::grid::GridPanel;

/// Detects and tracks cities at every epoch of `panel`.
pub fn track_panel(panel: &GridPanel, params: &DetectParams) -> Result<CityLineage> {
    let mut lineage = CityLineage::new();
    for (e, &year) in panel.years().iter().enumerate() {
        let cities = rank_cities(detect_cities(panel, panel.snapshot(e), params)?);
        lineage.advance(year, cities)?;
    }
    Ok(lineage)
}
