//! Gridded population projection: urban agglomeration detection and
//! tracking, short-panel time-series forecasters, a rank-size model for the
//! city system, and the engine that reconciles them with national totals.

pub mod detect;
pub mod engine;
pub mod error;
pub mod grid;
pub mod io;
pub mod landprice;
pub mod powerlaw;
pub mod synth;
pub mod ts;

pub use error::{Error, Result};
pub use grid::{CellId, GridPanel};
