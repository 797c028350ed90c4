use std::path::Path;

use cityproj_core::detect::{detect_cities as detect, rank_cities, Contiguity, DetectParams};
use cityproj_core::engine::{run_projection, EngineConfig};
use cityproj_core::powerlaw::{fit_rank_size as fit_rs, growth_factor};
use cityproj_core::synth::{gen_panel, SynthSpec};
use cityproj_core::ts::{ensemble as blend, Forecast};
use cityproj_core::{io, Error, GridPanel};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    if e.is_input_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// OLS rank-size fit: `(A, B, var_A, var_B, sigma2)`.
#[pyfunction]
fn fit_rank_size(populations: Vec<f64>) -> PyResult<(f64, f64, f64, f64, f64)> {
    let f = fit_rs(&populations).map_err(py_err)?;
    Ok((f.intercept, f.slope, f.var_intercept, f.var_slope, f.sigma2))
}

/// One-epoch rank-size projection of a city.
#[pyfunction]
fn pl_project(population: f64, rank: usize, t: f64, a1_a: f64, a1_b: f64) -> PyResult<f64> {
    if rank == 0 || t < 1.0 {
        return Err(PyValueError::new_err("rank and t must be at least 1"));
    }
    Ok((population * growth_factor(rank, t, a1_a, a1_b)).max(0.0))
}

/// Inverse-variance blend of forecasts: `(mean, variance)`.
#[pyfunction]
fn ensemble(means: Vec<f64>, variances: Vec<f64>) -> PyResult<(f64, f64)> {
    if means.len() != variances.len() {
        return Err(PyValueError::new_err("means and variances differ in length"));
    }
    let fs: Vec<Forecast> = means.iter().zip(&variances).map(|(&m, &v)| Forecast::new(m, v)).collect();
    let e = blend(&fs).map_err(py_err)?;
    Ok((e.mean, e.variance))
}

/// Cities on a row-major raster, largest first, as
/// `(population, [(row, col), ...])`.
#[pyfunction]
#[pyo3(signature = (snapshot, n_rows, n_cols, density_threshold=1000.0, min_pop=10000.0, contiguity="rook"))]
fn detect_cities(
    snapshot: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
    density_threshold: f64,
    min_pop: f64,
    contiguity: &str,
) -> PyResult<Vec<(f64, Vec<(usize, usize)>)>> {
    let contiguity: Contiguity = contiguity.parse().map_err(py_err)?;
    let panel = GridPanel::full(n_rows, n_cols, vec![0], vec![snapshot]).map_err(py_err)?;
    let params = DetectParams { density_threshold, min_pop, contiguity };
    let cities = rank_cities(detect(&panel, panel.snapshot(0), &params).map_err(py_err)?);
    Ok(cities
        .into_iter()
        .map(|c| (c.population, c.cells.iter().map(|x| (x.row, x.col)).collect()))
        .collect())
}

/// Synthetic panel: `(n_rows, n_cols, years, snapshots)`.
#[pyfunction]
#[pyo3(signature = (seed=0, n_cities=30, n_epochs=11, growth_rate=0.0, noise_sd=0.0))]
fn synth_panel(
    seed: u64,
    n_cities: usize,
    n_epochs: usize,
    growth_rate: f64,
    noise_sd: f64,
) -> PyResult<(usize, usize, Vec<i32>, Vec<Vec<f64>>)> {
    let spec = SynthSpec { seed, n_cities, n_epochs, growth_rate, noise_sd, ..SynthSpec::default() };
    let s = gen_panel(&spec).map_err(py_err)?;
    let p = s.panel;
    Ok((p.n_rows(), p.n_cols(), p.years().to_vec(), p.snapshots().to_vec()))
}

/// Runs a projection from CSV files and returns the per-epoch stratum
/// totals `(year, urban_target, urban_sum, rural_target, rural_sum)`.
#[pyfunction]
#[pyo3(signature = (panel_csv, scenario_csv, horizon=None, n_boot=200, seed=0))]
fn project(
    panel_csv: &str,
    scenario_csv: &str,
    horizon: Option<usize>,
    n_boot: usize,
    seed: u64,
) -> PyResult<Vec<(i32, f64, f64, f64, f64)>> {
    let panel = io::read_panel(Path::new(panel_csv), None).map_err(py_err)?;
    let scenario = io::read_scenario(Path::new(scenario_csv), "scenario").map_err(py_err)?;
    let config = EngineConfig { horizon, n_boot, seed, ..EngineConfig::default() };
    config.validate().map_err(py_err)?;
    let proj = run_projection(&panel, &scenario, &config).map_err(py_err)?;
    Ok(proj
        .strata
        .iter()
        .map(|s| (s.year, s.urban_target, s.urban_sum, s.rural_target, s.rural_sum))
        .collect())
}

#[pymodule]
fn cityproj(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(fit_rank_size, m)?)?;
    m.add_function(wrap_pyfunction!(pl_project, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(detect_cities, m)?)?;
    m.add_function(wrap_pyfunction!(synth_panel, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    Ok(())
}
