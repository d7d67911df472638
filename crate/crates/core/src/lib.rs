//! Corrected-kernel support vector regression for intraday electricity price
//! forecasting, with benchmarks, forecast combination and a study harness.

pub mod benchmarks;
pub mod evaluate;
pub mod features;
pub mod kernels;
pub mod market_data;
pub mod preprocessing;
pub mod rng;
pub mod scaling;
pub mod study;
pub mod svr;
pub mod synth;
