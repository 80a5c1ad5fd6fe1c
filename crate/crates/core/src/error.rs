//! Coarse classification of failures, used to pick process exit codes.

use crate::hedonic::HedonicError;
use crate::ingest::{ConvertError, IngestError};
use crate::market::MarketError;
use crate::regress::RegressError;
use crate::repeat_sales::RepeatSalesError;
use crate::stats::StatsError;
use crate::synth::SynthError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad or insufficient input data.
    Data,
    /// The data parsed but the estimation problem is ill-posed.
    Numerical,
}

pub trait Classify {
    fn class(&self) -> ErrorClass;
}

impl Classify for MarketError {
    fn class(&self) -> ErrorClass {
        ErrorClass::Data
    }
}

impl Classify for IngestError {
    fn class(&self) -> ErrorClass {
        ErrorClass::Data
    }
}

impl Classify for ConvertError {
    fn class(&self) -> ErrorClass {
        ErrorClass::Data
    }
}

impl Classify for RegressError {
    fn class(&self) -> ErrorClass {
        ErrorClass::Numerical
    }
}

impl Classify for HedonicError {
    fn class(&self) -> ErrorClass {
        match self {
            HedonicError::Regress(e) => e.class(),
            _ => ErrorClass::Data,
        }
    }
}

impl Classify for RepeatSalesError {
    fn class(&self) -> ErrorClass {
        match self {
            RepeatSalesError::DisconnectedWeeks { .. } | RepeatSalesError::Regress(_) => {
                ErrorClass::Numerical
            }
            _ => ErrorClass::Data,
        }
    }
}

impl Classify for StatsError {
    fn class(&self) -> ErrorClass {
        match self {
            StatsError::ConstantSeries => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }
}

impl Classify for SynthError {
    fn class(&self) -> ErrorClass {
        ErrorClass::Data
    }
}
