use alloc::string::String;
use alloc::vec::Vec;

use crate::network::EpochLog;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid bias point: {0}")]
    InvalidBias(&'static str),
    #[error("temperature {0} K outside the supported range [233, 300] K")]
    UnsupportedTemperature(f64),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("drain bias is zero, conductance undefined")]
    ZeroDrainBias,
    #[error("retention fit ill-conditioned: {0}")]
    IllConditionedFit(&'static str),
    #[error("noise spectrum has no components")]
    EmptySpectrum,
    #[error("no stable read voltage among {0} candidates")]
    NoStableRead(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("weight {0} is not in the codebook")]
    NotInCodebook(f32),
    #[error("dataset format: {0}")]
    Format(String),
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize, log: Vec<EpochLog> },
}

pub type Result<T> = core::result::Result<T, Error>;
