//! Kalman-filter maximum likelihood for multi-factor affine short-rate
//! models built from independent Vasicek and CIR factors.
//!
//! The crate covers closed-form bond loadings ([`factor`]), the linear
//! state-space form ([`term_structure`]), the filter and its likelihood
//! ([`kalman`]), analytic first and second likelihood derivatives
//! ([`sensitivities`]), box-constrained multi-start estimation
//! ([`calibration`]), Monte Carlo curve forecasts ([`scenario`]) and the file
//! formats used by the command-line tool ([`io`]).

pub mod calibration;
pub mod cli;
pub mod error;
mod expfn;
pub mod factor;
pub mod io;
pub mod kalman;
pub mod scenario;
pub mod sensitivities;
pub mod term_structure;

pub use error::{Error, Result};
pub use factor::{ConditionalMoments, Factor, FactorKind, FactorParams, Loadings};
pub use kalman::{FilterOutput, FilterStep, YieldPanel};
pub use term_structure::{ModelSpec, StateSpaceMatrices, DEFAULT_DT};
pub use calibration::{Bounds, CalibrationOptions, CalibrationResult};
pub use scenario::{ForecastRequest, ForecastResult};
pub use sensitivities::{ParamId, ParamVector, Symbol};
