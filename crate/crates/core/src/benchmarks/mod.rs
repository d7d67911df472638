//! Benchmarks: naive forecast, LASSO on the LARS path, random forest.

pub mod forest;
pub mod lars;

use crate::preprocessing::Trajectory;

/// Last published price `P(m - 20)`.
pub fn naive_forecast(price: &Trajectory, m: i64) -> f64 {
    price.at(m - crate::features::PUBLICATION_DELAY)
}
