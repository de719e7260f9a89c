//! GEV kernels and the seasonal changepoint GEV model.

mod dist;
mod fit;
mod model;

pub use dist::{gev_cdf, gev_mean, gev_quantile, gev_sd, GevPoint, EULER_GAMMA, GUMBEL_EPS};
pub use fit::{fit_mle, fit_mle_with, initial_params, CovarianceMethod, FitOptions, FitResult, XI_BOUND};
pub(crate) use fit::config_seed;
pub use model::{
    century, location_at, neg_log_likelihood, scale_at, ChangepointConfig, Design, SeasonalGevParams,
    BASE_PARAMS,
};
