//! Building floorspace estimation core.
//!
//! Pure algorithms for estimating building footprint and per-pixel height from
//! stacked SAR + optical rasters: grid primitives and polygon burning,
//! temporal compositing, training tiles, a from-scratch multi-task
//! encoder-decoder, pixel metrics, multiscale aggregation and nightlight
//! comparison. The crate is `no_std` and only needs `alloc`; file formats and
//! the command line live in the `floorspace` crate.

#![no_std]
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod aggregate;
pub mod augment;
pub mod dataset;
pub mod error;
pub mod hash;
pub mod ingest;
pub mod metrics;
pub mod nn;
pub mod ntl;
pub mod polygon;
pub mod raster;

pub use error::{Error, Result};
pub use raster::{GeoTransform, LabelGrid, Raster, RasterData};
