//! Species sensitivity analysis from raw bioassay data.
//!
//! * [`bioassay`]: ingestion, log response ratios, control levels.
//! * [`dose_response`]: loglogistic fits, EC_x and bootstrap intervals.
//! * [`classical_ssd`]: lognormal SSD on point EC_x values, HC_p.
//! * [`posterior`]: hierarchical model and its MCMC sampler.
//! * [`community`]: posterior-predictive communities, global response,
//!   hierarchical SSD.
//! * [`pipeline`]: the command-line stages and their output files.
//!
//! The numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what the pipeline uses.

pub mod bioassay;
pub mod classical_ssd;
pub mod community;
pub mod dose_response;
pub mod error;
pub mod optim;
pub mod pipeline;
pub mod posterior;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ResponsePoint = bioassay::ResponsePoint<f64>;
pub type ControlSummary = bioassay::ControlSummary<f64>;
pub type CurveFit = dose_response::CurveFit<f64>;
pub type EcEstimate = dose_response::EcEstimate<f64>;
pub type LognormalSsd = classical_ssd::LognormalSsd<f64>;
pub type HcEstimate = classical_ssd::HcEstimate<f64>;
pub type HyperParams = posterior::HyperParams<f64>;
pub type SpeciesParams = posterior::SpeciesParams<f64>;
pub type PriorSpec = posterior::PriorSpec<f64>;
pub type HierData = posterior::HierData<f64>;
pub type PosteriorSample = posterior::PosteriorSample<f64>;
pub type CommunityDraw = community::CommunityDraw<f64>;
pub type CurveBand = community::CurveBand<f64>;
pub type GecEstimate = community::GecEstimate<f64>;
