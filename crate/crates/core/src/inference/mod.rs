//! Bayesian inversion of the reduced coordinates from state measurements:
//! posterior density, DE-MC and adaptive random-walk sampling, MAP
//! extraction and error metrics.

mod map;
mod posterior;
mod sampler;

pub use map::{map_estimate, relative_error, RelativeError};
pub use posterior::{LinearModel, ObservationModel, Posterior, UObservations, DEFAULT_NOISE};
pub use sampler::{
    gelman_rubin, sample_posterior, Diagnostics, PosteriorSamples, Proposal, SamplerConfig,
};
