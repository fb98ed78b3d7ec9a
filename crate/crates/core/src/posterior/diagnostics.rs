use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{HyperParams, PosteriorSample, PriorSpec, HYPER_NAMES};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::scalar::Scalar;
use crate::stats::{central_interval, mean, variance};

/// Posterior sd above this fraction of the prior sd marks a weakly
/// informed parameter.
const DATA_WEAK_RATIO: f64 = 0.75;

/// Potential scale reduction factor (Brooks & Gelman):
/// `sqrt(((n-1)/n W + (m+1)/(m n) B) / W)` with `W` the mean within-chain
/// variance and `B/n` the variance of the chain means.
pub fn gelman_rubin<T: Scalar>(chains: &[Vec<T>]) -> Result<T> {
    let m = chains.len();
    if m < 2 {
        return Err(Error::InsufficientData(format!("{m} chains, at least 2 required")));
    }
    let n = chains[0].len();
    if n < 10 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::InsufficientData(
            "chains must have equal lengths of at least 10 draws".into(),
        ));
    }
    let means: Vec<T> = chains.iter().map(|c| mean(c)).collect();
    let w = chains.iter().map(|c| variance(c, 1)).sum::<T>() / T::from_count(m);
    if !(w > T::zero()) {
        return Err(Error::UndefinedDiagnostic("zero within-chain variance".into()));
    }
    let nf = T::from_count(n);
    let mf = T::from_count(m);
    let b = nf * variance(&means, 1);
    let v = (nf - T::one()) / nf * w + (mf + T::one()) / (mf * nf) * b;
    Ok((v / w).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorPosteriorRow<T> {
    pub parameter: String,
    pub prior_sd: T,
    pub posterior_sd: T,
    pub sd_ratio: T,
    pub q025: T,
    pub median: T,
    pub q975: T,
    /// Posterior sd above 75% of the prior sd.
    pub data_weak: bool,
    /// `rho` lives on a bounded interval, so its sd ratio is not expected to
    /// be small; its flag is reported but not treated as a failure.
    pub exempt: bool,
}

pub fn prior_posterior_report<T: Scalar>(
    sample: &PosteriorSample<T>,
    priors: &PriorSpec<T>,
) -> Vec<PriorPosteriorRow<T>> {
    let prior_sds = priors.prior_sds();
    let draws = sample.pooled_hyper();
    HYPER_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let v: Vec<T> = draws.iter().map(|h| h.to_array()[k]).collect();
            let posterior_sd = if v.len() > 1 { variance(&v, 1).sqrt() } else { T::nan() };
            let (q025, median, q975) = if v.is_empty() {
                (T::nan(), T::nan(), T::nan())
            } else {
                central_interval(&v)
            };
            let ratio = posterior_sd / prior_sds[k];
            PriorPosteriorRow {
                parameter: name.to_string(),
                prior_sd: prior_sds[k],
                posterior_sd,
                sd_ratio: ratio,
                q025,
                median,
                q975,
                data_weak: ratio > T::lit(DATA_WEAK_RATIO),
                exempt: *name == "rho",
            }
        })
        .collect()
}

/// Independent draws from the hyperparameter priors.
pub fn sample_prior<T: Scalar>(priors: &PriorSpec<T>, n: usize, seed: u64) -> Vec<HyperParams<T>> {
    let mut rng = stream_rng(seed, 0);
    (0..n)
        .map(|_| {
            let mut z = || T::lit(rng.sample::<f64, _>(StandardNormal));
            let mu_logb = priors.mu_logb.mean + priors.mu_logb.sd * z();
            let sigma_logb = (priors.sigma_logb_sd * z()).abs();
            let mu_loge = priors.mu_loge.mean + priors.mu_loge.sd * z();
            let mut u = || T::lit(rng.random::<f64>());
            HyperParams {
                mu_logb,
                sigma_logb,
                mu_loge,
                sigma_loge: priors.sigma_loge_max * u(),
                rho: T::lit(2.0) * u() - T::one(),
                sigma_err: priors.sigma_err_max * u(),
            }
        })
        .collect()
}
