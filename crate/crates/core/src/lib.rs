//! Changepoint-aware extreme precipitation analysis: seasonal GEV models with
//! location shifts, MDL-penalized genetic changepoint search, trend summaries,
//! return levels with bootstrap intervals and spatial smoothing.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geostat;
pub mod gev;
pub mod ingest;
pub mod optim;
pub mod changepoint;
pub mod returns;
pub mod trend;

pub use error::{Error, Result};
