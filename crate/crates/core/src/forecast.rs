//! Sample-based forecast representation shared by every model family.

use chrono::NaiveDate;

use crate::corpus::HORIZON;
use crate::error::{Error, Result};

/// Default number of forecast sample paths per (model, region, origin).
pub const DEFAULT_DRAWS: usize = 2000;

/// A sample forecast: `draws` holds one row per posterior sample path and one
/// column per day after the origin. Values are whole non-negative case
/// counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastDraws {
    pub model_id: String,
    pub region_id: String,
    pub origin: NaiveDate,
    pub population: u64,
    pub draws: Vec<Vec<f64>>,
}

impl ForecastDraws {
    pub fn new(
        model_id: impl Into<String>,
        region_id: impl Into<String>,
        origin: NaiveDate,
        population: u64,
        draws: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::data("forecast must contain at least one draw"));
        }
        for row in &draws {
            if row.len() != HORIZON {
                return Err(Error::data(format!(
                    "forecast rows must have {HORIZON} days, got {}",
                    row.len()
                )));
            }
            if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::data("forecast counts must be finite and non-negative"));
            }
        }
        Ok(ForecastDraws {
            model_id: model_id.into(),
            region_id: region_id.into(),
            origin,
            population,
            draws,
        })
    }

    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn horizon(&self) -> usize {
        HORIZON
    }

    /// Total cases in forecast week 1 (days 1..=7) or week 2 (days 8..=14)
    /// for one draw.
    pub fn weekly_count(&self, draw: usize, week: u8) -> f64 {
        let range = match week {
            1 => 0..7,
            2 => 7..14,
            _ => panic!("week must be 1 or 2"),
        };
        self.draws[draw][range].iter().sum()
    }

    /// Weekly totals across all draws.
    pub fn weekly_counts(&self, week: u8) -> Vec<f64> {
        (0..self.n_draws()).map(|d| self.weekly_count(d, week)).collect()
    }
}
