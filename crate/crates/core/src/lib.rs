//! Historical rasterized map engine.
//!
//! Vectorized map predictions are rasterized into binary local masks
//! ([`raster`]), folded into a sparse 8-bit evidence map ([`mapstore`]) and
//! read back as priors for later frames. [`simulate`] drives that loop over
//! synthetic worlds and [`eval`] scores the results.

// NaN-rejecting range checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod geometry;
pub mod mapstore;
pub mod par;
pub mod raster;
pub mod render;
pub mod rng;
pub mod simulate;

pub use error::{Error, FormatError, Result};
pub use geometry::{CellIndex, GridSpec, Point2, Polyline, Pose2, WindowSpec};
pub use mapstore::{GlobalMap, MemoryStats, UpdateParams};
pub use par::Execution;
pub use raster::{Category, Frame, LocalMask, MapElement, RasterConfig, VectorMap};
