//! Probabilistic short-term epidemic forecasting.
//!
//! The crate fits mechanistic renewal models and statistical time-series
//! models to daily case counts, produces 14-day-ahead sample forecasts on a
//! rolling weekly schedule, and scores them with proper scoring rules.

pub mod config;
pub mod corpus;
pub mod error;
pub mod forecast;
pub mod harness;
pub mod gp;
pub mod renewal;
pub mod samplers;
pub mod sarima;
pub mod scoring;
pub mod store;
pub mod trendcast;

pub use error::{Error, Result};
