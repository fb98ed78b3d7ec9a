//! Hierarchical concentration-response model.
//!
//! Each species `j` has a curve `(b_j, e_j)` with `(log10 b_j, log10 e_j)`
//! bivariate normal around the community hyperparameters. Observations are
//! `y ~ N(ln(d_j / (1 + (C/e_j)^b_j)), sigma_err)`. Decimal logs are used for
//! the community distribution and natural logs for the residual model; the
//! two never appear in the same term.

mod diagnostics;
mod io;
mod sampler;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bioassay::{make_responses, BioassayDataset, ControlPooling, CurveKey, ResponsePoint};
use crate::error::{Error, Result};
use crate::scalar::{softplus, Scalar};
use crate::stats::normal_ln_pdf;

pub use diagnostics::{gelman_rubin, prior_posterior_report, sample_prior, PriorPosteriorRow};
pub use io::{read_posterior, write_diagnostics, write_posterior_csv, Diagnostics};
pub use sampler::{run_mcmc, AcceptanceRates, ChainTrace, McmcConfig, PosteriorSample};

pub const HYPER_NAMES: [&str; 6] = [
    "mu_logb",
    "sigma_logb",
    "mu_loge",
    "sigma_loge",
    "rho",
    "sigma_err",
];

/// Community-level parameters plus the residual standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams<T> {
    pub mu_logb: T,
    pub sigma_logb: T,
    pub mu_loge: T,
    pub sigma_loge: T,
    pub rho: T,
    pub sigma_err: T,
}

impl<T: Scalar> HyperParams<T> {
    pub fn to_array(&self) -> [T; 6] {
        [
            self.mu_logb,
            self.sigma_logb,
            self.mu_loge,
            self.sigma_loge,
            self.rho,
            self.sigma_err,
        ]
    }

    pub fn from_array(a: [T; 6]) -> Self {
        Self {
            mu_logb: a[0],
            sigma_logb: a[1],
            mu_loge: a[2],
            sigma_loge: a[3],
            rho: a[4],
            sigma_err: a[5],
        }
    }

    /// Positive spreads and `|rho| < 1`, i.e. a positive definite covariance.
    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
            && self.sigma_logb > T::zero()
            && self.sigma_loge > T::zero()
            && self.rho.abs() < T::one()
            && self.sigma_err > T::zero()
    }

    /// `(mu_logb, ln sigma_logb, mu_loge, ln sigma_loge, atanh rho, ln sigma_err)`.
    pub fn to_unconstrained(&self) -> [T; 6] {
        [
            self.mu_logb,
            self.sigma_logb.ln(),
            self.mu_loge,
            self.sigma_loge.ln(),
            self.rho.atanh(),
            self.sigma_err.ln(),
        ]
    }

    pub fn from_unconstrained(u: [T; 6]) -> Self {
        Self {
            mu_logb: u[0],
            sigma_logb: u[1].exp(),
            mu_loge: u[2],
            sigma_loge: u[3].exp(),
            rho: u[4].tanh(),
            sigma_err: u[5].exp(),
        }
    }

    /// Log-determinant of the map from unconstrained to natural parameters.
    pub fn ln_jacobian(&self) -> T {
        self.sigma_logb.ln() + self.sigma_loge.ln() + (T::one() - self.rho * self.rho).ln()
            + self.sigma_err.ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesParams<T> {
    pub species_id: String,
    pub log_b: T,
    pub log_e: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior<T> {
    pub mean: T,
    pub sd: T,
}

/// Hyperparameter priors. The families are fixed; their parameters are not.
///
/// * `mu_logb ~ N(mean, sd)`
/// * `sigma_logb ~ HalfNormal(sd)`
/// * `mu_loge ~ N(mu_logC, sigma_logC)`
/// * `sigma_loge ~ U(0, max)`
/// * `rho ~ U(-1, 1)`
/// * `sigma_err ~ U(0, max)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec<T> {
    pub mu_logb: NormalPrior<T>,
    pub sigma_logb_sd: T,
    pub mu_loge: NormalPrior<T>,
    pub sigma_loge_max: T,
    pub sigma_err_max: T,
}

impl<T: Scalar> PriorSpec<T> {
    /// Default priors with the `mu_loge` prior centred on the middle of the
    /// tested range (log10) and a spread of a quarter of that range, so the
    /// range holds ~95% of the prior mass.
    pub fn from_concentrations(concentrations: &[T]) -> Result<Self> {
        let positive = concentrations.iter().copied().filter(|&c| c > T::zero());
        let (lo, hi) = positive.fold((T::infinity(), T::neg_infinity()), |(lo, hi), c| {
            (lo.min(c), hi.max(c))
        });
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InsufficientData(
                "need at least two distinct positive concentrations to centre the priors".into(),
            ));
        }
        Ok(Self::with_range(lo, hi))
    }

    pub fn with_range(c_min: T, c_max: T) -> Self {
        let (l0, l1) = (c_min.log10(), c_max.log10());
        Self {
            mu_logb: NormalPrior {
                mean: T::lit(-6.0),
                sd: T::lit(6.0),
            },
            sigma_logb_sd: T::lit(10.0),
            mu_loge: NormalPrior {
                mean: (l0 + l1) / T::lit(2.0),
                sd: (l1 - l0) / T::lit(4.0),
            },
            sigma_loge_max: T::lit(10.0),
            sigma_err_max: T::lit(2.0),
        }
    }

    /// Sum of the hyperparameter prior log-densities; `-inf` outside support.
    pub fn ln_density(&self, h: &HyperParams<T>) -> T {
        let ninf = T::neg_infinity();
        if !(h.sigma_logb > T::zero()
            && h.sigma_loge > T::zero()
            && h.sigma_loge < self.sigma_loge_max
            && h.rho.abs() < T::one()
            && h.sigma_err > T::zero()
            && h.sigma_err < self.sigma_err_max)
        {
            return ninf;
        }
        normal_ln_pdf(h.mu_logb, self.mu_logb.mean, self.mu_logb.sd)
            + T::lit(2.0).ln()
            + normal_ln_pdf(h.sigma_logb, T::zero(), self.sigma_logb_sd)
            + normal_ln_pdf(h.mu_loge, self.mu_loge.mean, self.mu_loge.sd)
            - self.sigma_loge_max.ln()
            - T::lit(2.0).ln()
            - self.sigma_err_max.ln()
    }

    /// Prior standard deviation of each hyperparameter, in `HYPER_NAMES` order.
    pub fn prior_sds(&self) -> [T; 6] {
        let twelve = T::lit(12.0).sqrt();
        let half_normal = T::one() - T::lit(2.0 / std::f64::consts::PI);
        [
            self.mu_logb.sd,
            self.sigma_logb_sd * half_normal.sqrt(),
            self.mu_loge.sd,
            self.sigma_loge_max / twelve,
            T::lit(2.0) / twelve,
            self.sigma_err_max / twelve,
        ]
    }
}

/// Observations of one species for one contaminant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesData<T> {
    pub species_id: String,
    /// Control response level.
    pub d: T,
    pub points: Vec<ResponsePoint<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierData<T> {
    pub species: Vec<SpeciesData<T>>,
}

impl<T: Scalar> HierData<T> {
    /// Assembles one contaminant's data; `control` maps each curve to its `d`.
    pub fn from_groups(
        groups: &BTreeMap<CurveKey, Vec<ResponsePoint<T>>>,
        contaminant: &str,
        control: impl Fn(&CurveKey) -> Result<T>,
    ) -> Result<Self> {
        let species = groups
            .iter()
            .filter(|(k, _)| k.contaminant == contaminant)
            .map(|(k, pts)| {
                Ok(SpeciesData {
                    species_id: k.species.clone(),
                    d: control(k)?,
                    points: pts.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { species })
    }

    pub fn concentrations(&self) -> Vec<T> {
        self.species
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.concentration))
            .collect()
    }

    pub fn n_obs(&self) -> usize {
        self.species.iter().map(|s| s.points.len()).sum()
    }

    pub fn species_ids(&self) -> Vec<String> {
        self.species.iter().map(|s| s.species_id.clone()).collect()
    }
}

impl HierData<f64> {
    /// One contaminant's curves with control levels pooled as requested.
    pub fn from_dataset(ds: &BioassayDataset, contaminant: &str, pooling: ControlPooling) -> Result<Self> {
        Self::from_groups(&make_responses(ds), contaminant, |k| {
            Ok(pooling.estimate(ds, &k.species, &k.contaminant)?.d)
        })
    }
}

/// Bivariate normal log-density of `(log10 b, log10 e)` under `h`.
pub fn ln_species_density<T: Scalar>(log_b: T, log_e: T, h: &HyperParams<T>) -> T {
    let zb = (log_b - h.mu_logb) / h.sigma_logb;
    let ze = (log_e - h.mu_loge) / h.sigma_loge;
    let one_m_r2 = T::one() - h.rho * h.rho;
    let quad = (zb * zb - T::lit(2.0) * h.rho * zb * ze + ze * ze) / one_m_r2;
    -T::lit((2.0 * std::f64::consts::PI).ln())
        - h.sigma_logb.ln()
        - h.sigma_loge.ln()
        - T::lit(0.5) * one_m_r2.ln()
        - T::lit(0.5) * quad
}

/// Sum of squared log-scale residuals of one species' curve.
pub fn species_ssr<T: Scalar>(data: &SpeciesData<T>, log_b: T, log_e: T) -> T {
    let b = T::lit(10.0).powf(log_b);
    let ln_e = log_e * T::ln_10();
    let ln_d = data.d.ln();
    data.points
        .iter()
        .map(|p| {
            let r = p.y - (ln_d - softplus(b * (p.concentration.ln() - ln_e)));
            r * r
        })
        .sum()
}

/// Gaussian log-likelihood of `n` residuals with sum of squares `ssr`.
pub fn ln_likelihood_from_ssr<T: Scalar>(ssr: T, n: usize, sigma_err: T) -> T {
    let n = T::from_count(n);
    -n * (T::lit(0.5 * (2.0 * std::f64::consts::PI).ln()) + sigma_err.ln())
        - ssr / (T::lit(2.0) * sigma_err * sigma_err)
}

/// Unnormalized log-posterior in the natural parameterization: species
/// densities, observation likelihood and hyperparameter priors, all with
/// their normalizing constants. Returns `-inf` outside the prior support.
pub fn log_posterior<T: Scalar>(
    hyper: &HyperParams<T>,
    species: &[SpeciesParams<T>],
    data: &HierData<T>,
    priors: &PriorSpec<T>,
) -> T {
    let prior = priors.ln_density(hyper);
    if !prior.is_finite() || species.len() != data.species.len() {
        return T::neg_infinity();
    }
    let mut total = prior;
    for (s, sd) in species.iter().zip(&data.species) {
        total = total
            + ln_species_density(s.log_b, s.log_e, hyper)
            + ln_likelihood_from_ssr(species_ssr(sd, s.log_b, s.log_e), sd.points.len(), hyper.sigma_err);
    }
    if total.is_nan() {
        T::neg_infinity()
    } else {
        total
    }
}
