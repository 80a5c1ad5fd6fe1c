//! Price indices and return statistics for bundled virtual-land sales.
//!
//! The numeric core is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! money amounts stay exact as [`Decimal`] until they are logged. The aliases
//! below fix the scalar to `f64`.

pub mod error;
pub mod hedonic;
pub mod ingest;
pub mod market;
pub mod output;
pub mod regress;
pub mod repeat_sales;
pub mod scalar;
pub mod stats;
pub mod synth;

pub use rust_decimal::Decimal;

pub type Design = regress::DesignMatrix<f64>;
pub type Regression = regress::RegressionResult<f64>;
pub type Index = hedonic::PriceIndex<f64>;
pub type HedonicFit = hedonic::HedonicFit<f64>;
pub type CaseShillerFit = repeat_sales::CaseShillerFit<f64>;
pub type Summary = stats::SummaryStats<f64>;
pub type Series = stats::WeeklySeries<f64>;
