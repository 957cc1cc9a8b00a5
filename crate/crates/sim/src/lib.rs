//! Simulation designs, Monte Carlo summaries and pseudo out-of-sample
//! forecasting built on `selseg`.

pub mod dgp;
pub mod mc;
pub mod forecast;
