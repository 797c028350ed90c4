//! CSV formats. Floats are written in Rust's shortest round-trip form, so
//! reading back a written file reproduces every value bit for bit.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use csv::{ReaderBuilder, StringRecord, Trim, WriterBuilder};
use serde::{Deserialize, Serialize};

use crate::detect::CityLineage;
use crate::engine::{
    threshold_label, CityForecast, FitRecord, HoldoutReport, RankSizeEpoch, Scenario, StratumTotals, SummaryRow,
};
use crate::error::{Error, Result};
use crate::grid::{CellId, GridPanel};
use crate::landprice::{LandPriceModel, LandPriceObs};
use crate::synth::SynthCity;

pub const PANEL_HEADER: [&str; 4] = ["row", "col", "year", "pop"];
pub const MASK_HEADER: [&str; 2] = ["row", "col"];
pub const LANDPRICE_HEADER: [&str; 10] = ["row", "col", "year", "price", "pop", "nb_pop", "x", "y", "elev", "lineage_id"];

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    ReaderBuilder::new().trim(Trim::All).from_reader(r)
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    WriterBuilder::new().from_writer(w)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, source: &Path, expected: &[&str], optional: &[&str]) -> Result<Vec<String>> {
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let n = header.len();
    let ok = n >= expected.len()
        && n <= expected.len() + optional.len()
        && header.iter().zip(expected.iter().chain(optional)).all(|(a, b)| a == b);
    if !ok {
        let mut want = expected.join(",");
        if !optional.is_empty() {
            want.push_str(&format!("[,{}]", optional.join(",")));
        }
        return Err(Error::schema(source, 1, format!("expected header {want}, found {}", header.join(","))));
    }
    Ok(header)
}

fn line_of(rec: &StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn field<T: FromStr>(rec: &StringRecord, idx: usize, name: &str, source: &Path) -> Result<T> {
    let raw = rec.get(idx).unwrap_or("");
    raw.parse()
        .map_err(|_| Error::schema(source, line_of(rec), format!("invalid {name} {raw:?}")))
}

fn records<R: Read>(rdr: &mut csv::Reader<R>, source: &Path) -> Result<Vec<StringRecord>> {
    rdr.records()
        .map(|r| {
            r.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                Error::schema(source, line, e.to_string())
            })
        })
        .collect()
}

/// Reads a mask file listing the valid cells.
pub fn read_mask(path: &Path) -> Result<Vec<(CellId, u64)>> {
    read_mask_from(open(path)?, path)
}

pub fn read_mask_from<R: Read>(r: R, source: &Path) -> Result<Vec<(CellId, u64)>> {
    let mut rdr = reader(r);
    check_header(&mut rdr, source, &MASK_HEADER, &[])?;
    records(&mut rdr, source)?
        .iter()
        .map(|rec| {
            let cell = CellId::new(field(rec, 0, "row", source)?, field(rec, 1, "col", source)?);
            Ok((cell, line_of(rec)))
        })
        .collect()
}

/// Reads a long-form panel, optionally restricted to the cells of a mask.
pub fn read_panel(path: &Path, mask: Option<&Path>) -> Result<GridPanel> {
    let mask = mask.map(|m| Ok::<_, Error>((read_mask(m)?, m.to_path_buf()))).transpose()?;
    read_panel_from(open(path)?, path, mask.as_ref().map(|(m, p)| (m.as_slice(), p.as_path())))
}

pub fn read_panel_from<R: Read>(r: R, source: &Path, mask: Option<(&[(CellId, u64)], &Path)>) -> Result<GridPanel> {
    let mut rdr = reader(r);
    check_header(&mut rdr, source, &PANEL_HEADER, &[])?;
    let mut values: HashMap<(CellId, i32), f64> = HashMap::new();
    let mut first_line: BTreeMap<CellId, u64> = BTreeMap::new();
    let mut years = BTreeSet::new();
    for rec in records(&mut rdr, source)? {
        let line = line_of(&rec);
        let cell = CellId::new(field(&rec, 0, "row", source)?, field(&rec, 1, "col", source)?);
        let year: i32 = field(&rec, 2, "year", source)?;
        let pop: f64 = field(&rec, 3, "pop", source)?;
        if !pop.is_finite() {
            return Err(Error::schema(source, line, format!("population {pop} is not finite")));
        }
        if pop < 0.0 {
            return Err(Error::schema(source, line, format!("negative population {pop}")));
        }
        if values.insert((cell, year), pop).is_some() {
            return Err(Error::schema(
                source,
                line,
                format!("duplicate row for cell ({}, {}) in {year}", cell.row, cell.col),
            ));
        }
        first_line.entry(cell).or_insert(line);
        years.insert(year);
    }
    if values.is_empty() {
        return Err(Error::schema(source, 1, "panel has no data rows"));
    }
    let years: Vec<i32> = years.into_iter().collect();
    for (&cell, &line) in &first_line {
        let n = years.iter().filter(|&&y| values.contains_key(&(cell, y))).count();
        if n != years.len() {
            return Err(Error::schema(
                source,
                line,
                format!("cell ({}, {}) has {n} of {} epochs", cell.row, cell.col, years.len()),
            ));
        }
    }
    let mut cells: Vec<CellId> = first_line.keys().copied().collect();
    if let Some((mask, mask_path)) = mask {
        let allowed: BTreeSet<CellId> = mask.iter().map(|m| m.0).collect();
        if let Some((cell, line)) = first_line.iter().find(|(c, _)| !allowed.contains(c)) {
            return Err(Error::schema(
                source,
                *line,
                format!("cell ({}, {}) is not in the mask", cell.row, cell.col),
            ));
        }
        if let Some((cell, line)) = mask.iter().find(|(c, _)| !first_line.contains_key(c)) {
            return Err(Error::schema(
                mask_path,
                *line,
                format!("masked cell ({}, {}) has no panel rows", cell.row, cell.col),
            ));
        }
        cells = allowed.into_iter().collect();
    }
    let n_rows = cells.iter().map(|c| c.row).max().unwrap() + 1;
    let n_cols = cells.iter().map(|c| c.col).max().unwrap() + 1;
    let mut valid = vec![false; n_rows * n_cols];
    for c in &cells {
        valid[c.row * n_cols + c.col] = true;
    }
    let snapshots = years
        .iter()
        .map(|&y| {
            let mut s = vec![0.0; n_rows * n_cols];
            for c in &cells {
                s[c.row * n_cols + c.col] = values[&(*c, y)];
            }
            s
        })
        .collect();
    GridPanel::new(n_rows, n_cols, years, snapshots, valid).map_err(|e| Error::schema(source, 1, e.to_string()))
}

/// Writes every valid cell of every epoch, ordered by year then cell.
pub fn write_panel<W: Write>(panel: &GridPanel, w: W) -> Result<()> {
    write_panel_years(panel, 0, w)
}

/// Like [`write_panel`] but starting at epoch `from`.
pub fn write_panel_years<W: Write>(panel: &GridPanel, from: usize, w: W) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(PANEL_HEADER)?;
    let cells: Vec<CellId> = panel.valid_cells().collect();
    for e in from..panel.n_epochs() {
        let year = panel.years()[e];
        for &c in &cells {
            wtr.write_record([
                c.row.to_string(),
                c.col.to_string(),
                year.to_string(),
                panel.pop(c, e).to_string(),
            ])?;
        }
    }
    flush(wtr)
}

fn flush<W: Write>(mut wtr: csv::Writer<W>) -> Result<()> {
    wtr.flush().map_err(|source| Error::Io {
        path: "<output>".into(),
        source,
    })
}

/// Row of the city table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityRow {
    pub year: i32,
    pub lineage_id: u64,
    pub rank: usize,
    pub population: f64,
    pub n_cells: usize,
    pub mean_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipRow {
    pub year: i32,
    pub lineage_id: u64,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionRow {
    pub year: i32,
    pub absorbed_id: u64,
    pub absorber_id: u64,
}

pub fn city_rows(lineage: &CityLineage) -> Vec<CityRow> {
    lineage
        .epochs()
        .iter()
        .flat_map(|ep| {
            ep.cities.iter().map(move |c| CityRow {
                year: ep.year,
                lineage_id: c.lineage_id,
                rank: c.rank,
                population: c.population,
                n_cells: c.n_cells(),
                mean_density: c.mean_density,
            })
        })
        .collect()
}

fn serialize_all<W: Write, T: Serialize>(rows: &[T], header: &[&str], w: W) -> Result<()> {
    let mut wtr = WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record(header)?;
    for r in rows {
        wtr.serialize(r)?;
    }
    flush(wtr)
}

pub fn write_city_table<W: Write>(lineage: &CityLineage, w: W) -> Result<()> {
    let header = ["year", "lineage_id", "rank", "population", "n_cells", "mean_density"];
    serialize_all(&city_rows(lineage), &header, w)
}

pub fn write_membership<W: Write>(lineage: &CityLineage, w: W) -> Result<()> {
    let rows: Vec<MembershipRow> = lineage
        .epochs()
        .iter()
        .flat_map(|ep| {
            ep.cities.iter().flat_map(move |c| {
                c.cells.iter().map(move |cell| MembershipRow {
                    year: ep.year,
                    lineage_id: c.lineage_id,
                    row: cell.row,
                    col: cell.col,
                })
            })
        })
        .collect();
    serialize_all(&rows, &["year", "lineage_id", "row", "col"], w)
}

pub fn write_absorptions<W: Write>(lineage: &CityLineage, w: W) -> Result<()> {
    let rows: Vec<AbsorptionRow> = lineage
        .absorptions()
        .iter()
        .map(|a| AbsorptionRow {
            year: a.year,
            absorbed_id: a.absorbed_id,
            absorber_id: a.absorber_id,
        })
        .collect();
    serialize_all(&rows, &["year", "absorbed_id", "absorber_id"], w)
}

/// `year,A,B,var_A,var_B,n_cities`, one row per fitted epoch.
pub fn write_coeff_path<W: Write>(fits: &[RankSizeEpoch], w: W) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(["year", "A", "B", "var_A", "var_B", "n_cities"])?;
    for r in fits {
        wtr.serialize((r.year, r.fit.intercept, r.fit.slope, r.fit.var_intercept, r.fit.var_slope, r.fit.n))?;
    }
    flush(wtr)
}

pub fn write_fit_dump<W: Write>(records: &[FitRecord], w: W) -> Result<()> {
    serialize_all(records, &["unit_id", "model", "param", "value"], w)
}

pub fn write_city_forecasts<W: Write>(rows: &[CityForecast], w: W) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record([
        "year", "lineage_id", "rank", "origin", "ts_mean", "ts_var", "pl_mean", "pl_var", "pl_clamped", "mean", "variance",
    ])?;
    for f in rows {
        wtr.serialize((
            f.year,
            f.lineage_id,
            f.rank,
            f.origin.mean,
            f.ts.mean,
            f.ts.variance,
            f.pl.mean,
            f.pl.variance,
            f.pl_clamped,
            f.combined.mean,
            f.combined.variance,
        ))?;
    }
    flush(wtr)
}

pub fn write_strata<W: Write>(rows: &[StratumTotals], w: W) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(["year", "urban_target", "urban_sum", "rural_target", "rural_sum"])?;
    for s in rows {
        wtr.serialize((s.year, s.urban_target, s.urban_sum, s.rural_target, s.rural_sum))?;
    }
    flush(wtr)
}

pub fn summary_header(thresholds: &[f64]) -> Vec<String> {
    let mut h = vec!["year".to_string(), "n_cities".to_string()];
    h.extend(thresholds.iter().map(|&t| format!("count_{}", threshold_label(t))));
    h.extend(
        [
            "top1_share",
            "top5_share",
            "top10_share",
            "mean_density",
            "max_density",
            "mean_area",
            "total_pop",
            "urban_pop",
        ]
        .map(String::from),
    );
    h
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], thresholds: &[f64], w: W) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(summary_header(thresholds))?;
    for r in rows {
        let mut rec = vec![r.year.to_string(), r.n_cities.to_string()];
        rec.extend(r.counts_above.iter().map(usize::to_string));
        rec.extend(
            [
                r.top1_share,
                r.top5_share,
                r.top10_share,
                r.mean_density,
                r.max_density,
                r.mean_area,
                r.total_pop,
                r.urban_pop,
            ]
            .map(|v| v.to_string()),
        );
        wtr.write_record(rec)?;
    }
    flush(wtr)
}

/// Reads `year,total_pop[,urban_share]`.
pub fn read_scenario(path: &Path, name: &str) -> Result<Scenario> {
    read_scenario_from(open(path)?, path, name)
}

pub fn read_scenario_from<R: Read>(r: R, source: &Path, name: &str) -> Result<Scenario> {
    let mut rdr = reader(r);
    let header = check_header(&mut rdr, source, &["year", "total_pop"], &["urban_share"])?;
    let with_share = header.len() == 3;
    let (mut years, mut totals, mut shares) = (Vec::new(), Vec::new(), Vec::new());
    for rec in records(&mut rdr, source)? {
        let line = line_of(&rec);
        let year: i32 = field(&rec, 0, "year", source)?;
        let total: f64 = field(&rec, 1, "total_pop", source)?;
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::schema(source, line, format!("total_pop {total} must be positive")));
        }
        if years.last().is_some_and(|&y| y >= year) {
            return Err(Error::schema(source, line, "years must be strictly increasing"));
        }
        if with_share {
            let s: f64 = field(&rec, 2, "urban_share", source)?;
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::schema(source, line, format!("urban_share {s} must lie in (0, 1)")));
            }
            shares.push(s);
        }
        years.push(year);
        totals.push(total);
    }
    if years.is_empty() {
        return Err(Error::schema(source, 1, "scenario has no data rows"));
    }
    Scenario::new(name, years, totals, with_share.then_some(shares))
}

pub fn read_landprice(path: &Path) -> Result<Vec<LandPriceObs>> {
    read_landprice_from(open(path)?, path)
}

pub fn read_landprice_from<R: Read>(r: R, source: &Path) -> Result<Vec<LandPriceObs>> {
    let mut rdr = reader(r);
    check_header(&mut rdr, source, &LANDPRICE_HEADER, &[])?;
    records(&mut rdr, source)?
        .iter()
        .map(|rec| {
            let num = |i: usize, name: &str| -> Result<f64> {
                let v: f64 = field(rec, i, name, source)?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::schema(source, line_of(rec), format!("{name} is not finite")))
                }
            };
            let id = rec.get(9).unwrap_or("");
            let lineage_id = if id.is_empty() {
                None
            } else {
                Some(field::<u64>(rec, 9, "lineage_id", source)?).filter(|&v| v != 0)
            };
            Ok(LandPriceObs {
                cell: CellId::new(field(rec, 0, "row", source)?, field(rec, 1, "col", source)?),
                year: field(rec, 2, "year", source)?,
                price: num(3, "price")?,
                pop: num(4, "pop")?,
                nb_pop: num(5, "nb_pop")?,
                x: num(6, "x")?,
                y: num(7, "y")?,
                elev: num(8, "elev")?,
                lineage_id,
            })
        })
        .collect()
}

pub fn write_landprice<W: Write>(obs: &[LandPriceObs], price_hat: Option<&[f64]>, w: W) -> Result<()> {
    let mut wtr = writer(w);
    let mut header: Vec<&str> = LANDPRICE_HEADER.to_vec();
    if price_hat.is_some() {
        header.push("price_hat");
    }
    wtr.write_record(&header)?;
    for (i, o) in obs.iter().enumerate() {
        let mut rec = vec![
            o.cell.row.to_string(),
            o.cell.col.to_string(),
            o.year.to_string(),
            o.price.to_string(),
            o.pop.to_string(),
            o.nb_pop.to_string(),
            o.x.to_string(),
            o.y.to_string(),
            o.elev.to_string(),
            o.lineage_id.map_or(String::new(), |v| v.to_string()),
        ];
        if let Some(p) = price_hat {
            rec.push(p[i].to_string());
        }
        wtr.write_record(rec)?;
    }
    flush(wtr)
}

/// `models,lineage_id,base,predicted,actual,signs_agree`, one row per city
/// and model variant.
pub fn write_holdout<W: Write>(report: &HoldoutReport, w: W) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(["models", "lineage_id", "base", "predicted", "actual", "signs_agree"])?;
    for v in &report.variants {
        for c in &v.cities {
            wtr.serialize((v.models.to_string(), c.lineage_id, c.base, c.predicted, c.actual, c.signs_agree()))?;
        }
    }
    flush(wtr)
}

/// Scalar summary of a land-price fit as `name,value` rows.
pub fn write_landprice_fit<W: Write>(model: &LandPriceModel, w: W) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(["name", "value"])?;
    let rows = [
        ("c0", model.c0),
        ("c1", model.c1),
        ("c2", model.c2),
        ("lambda_xy", model.lambda_xy),
        ("lambda_elev", model.lambda_elev),
        ("edf_xy", model.edf_xy),
        ("edf_elev", model.edf_elev),
        ("sigma2", model.sigma2_z),
        ("adj_r2", model.adj_r2),
        ("gcv", model.gcv),
        ("n_obs", model.n_obs as f64),
        ("n_dropped", model.n_dropped as f64),
    ];
    for (k, v) in rows {
        wtr.serialize((k, v))?;
    }
    for (id, e) in &model.city_effects {
        wtr.serialize((format!("city_{id}"), e))?;
    }
    flush(wtr)
}

/// `year,lineage_id,total_value`.
pub fn write_city_values<W: Write>(rows: &[(i32, u64, f64)], w: W) -> Result<()> {
    serialize_all(rows, &["year", "lineage_id", "total_value"], w)
}

/// Ground truth of a synthetic panel: `rank,row,col,population,peak_density,footprint_cells`.
pub fn write_synth_truth<W: Write>(cities: &[SynthCity], w: W) -> Result<()> {
    serialize_all(cities, &["rank", "row", "col", "population", "peak_density", "footprint_cells"], w)
}

/// Reads any headed CSV into typed rows.
pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = reader(open(path)?);
    rdr.deserialize()
        .map(|r| {
            r.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                Error::schema(path, line, e.to_string())
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn src() -> &'static Path {
        Path::new("panel.csv")
    }

    #[test]
    fn two_by_two_panel() {
        let data = "row,col,year,pop\n0,0,2000,1\n0,1,2000,2\n1,0,2000,3\n1,1,2000,4\n\
                    0,0,2005,5\n0,1,2005,6\n1,0,2005,7\n1,1,2005,8\n";
        let p = read_panel_from(data.as_bytes(), src(), None).unwrap();
        assert_eq!((p.n_rows(), p.n_cols(), p.n_epochs()), (2, 2, 2));
        assert_eq!(p.pop(CellId::new(1, 1), 1), 8.0);
        let mut out = Vec::new();
        write_panel(&p, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), data);
    }

    #[test]
    fn negative_population_names_row() {
        let data = "row,col,year,pop\n0,0,2000,1\n0,1,2000,-5\n";
        let err = read_panel_from(data.as_bytes(), src(), None).unwrap_err();
        assert!(matches!(err, Error::Schema { line: 3, .. }), "{err}");
    }

    #[test]
    fn duplicates_and_ragged_rows() {
        let dup = "row,col,year,pop\n0,0,2000,1\n0,0,2000,2\n";
        assert!(matches!(read_panel_from(dup.as_bytes(), src(), None), Err(Error::Schema { line: 3, .. })));
        let ragged = "row,col,year,pop\n0,0,2000,1\n0,1,2000,2\n0,0,2005,1\n";
        assert!(matches!(read_panel_from(ragged.as_bytes(), src(), None), Err(Error::Schema { line: 3, .. })));
        let text = "row,col,year,pop\n0,0,2000,abc\n";
        assert!(matches!(read_panel_from(text.as_bytes(), src(), None), Err(Error::Schema { line: 2, .. })));
        let header = "r,c,year,pop\n";
        assert!(matches!(read_panel_from(header.as_bytes(), src(), None), Err(Error::Schema { line: 1, .. })));
    }

    #[test]
    fn mask_marks_missing_cells_invalid() {
        let data = "row,col,year,pop\n0,0,2000,1\n1,1,2000,4\n";
        let p = read_panel_from(data.as_bytes(), src(), None).unwrap();
        assert!(!p.is_valid(CellId::new(0, 1)));
        let mask = vec![(CellId::new(0, 0), 2)];
        assert!(read_panel_from(data.as_bytes(), src(), Some((&mask, Path::new("mask.csv")))).is_err());
    }

    #[test]
    fn scenario_parsing() {
        let s = read_scenario_from("year,total_pop\n2025,100\n2030,90\n".as_bytes(), src(), "base").unwrap();
        assert_eq!(s.total_pop, vec![100.0, 90.0]);
        assert!(s.urban_share.is_none());
        let s = read_scenario_from("year,total_pop,urban_share\n2025,100,0.8\n".as_bytes(), src(), "b").unwrap();
        assert_eq!(s.urban_share, Some(vec![0.8]));
        assert!(read_scenario_from("year,total_pop,urban_share\n2025,100,1.2\n".as_bytes(), src(), "b").is_err());
    }
}
