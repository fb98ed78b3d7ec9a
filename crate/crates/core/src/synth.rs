//! Synthetic bioassays drawn from the hierarchical model, with known truth.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bioassay::{BioassayDataset, ControlPooling, Observation};
use crate::dose_response::ln_loglogistic;
use crate::error::Result;
use crate::posterior::{HierData, HyperParams, PriorSpec};
use crate::rng::stream_rng;

/// Community parameters reported for diuron (posterior medians); the
/// residual sd is not part of that table and is supplied separately.
pub const DIURON_THETA: CommunityTheta = CommunityTheta {
    mu_logb: 0.16,
    sigma_logb: 0.46,
    mu_loge: 2.49,
    sigma_loge: 1.07,
    rho: 0.83,
};

/// Community hyperparameters without the residual sd.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommunityTheta {
    pub mu_logb: f64,
    pub sigma_logb: f64,
    pub mu_loge: f64,
    pub sigma_loge: f64,
    pub rho: f64,
}

impl CommunityTheta {
    pub fn with_sigma_err(self, sigma_err: f64) -> HyperParams<f64> {
        HyperParams {
            mu_logb: self.mu_logb,
            sigma_logb: self.sigma_logb,
            mu_loge: self.mu_loge,
            sigma_loge: self.sigma_loge,
            rho: self.rho,
            sigma_err,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDesign {
    pub contaminant: String,
    pub n_species: usize,
    /// Positive tested concentrations.
    pub concentrations: Vec<f64>,
    pub replicates: u32,
    /// Control replicates per species.
    pub n_controls: u32,
    /// Species control levels are `exp(N(mean, sd))`.
    pub ln_d_mean: f64,
    pub ln_d_sd: f64,
    pub fluo_initial: f64,
}

/// Eight log-spaced concentrations from 10^0.5 to 10^4.5, three replicates,
/// three controls per species.
pub fn paper_like_design(n_species: usize) -> SyntheticDesign {
    SyntheticDesign {
        contaminant: "diuron".into(),
        n_species,
        concentrations: (0..8).map(|k| 10f64.powf(0.5 + 4.0 * k as f64 / 7.0)).collect(),
        replicates: 3,
        n_controls: 3,
        ln_d_mean: 1.5,
        ln_d_sd: 0.2,
        fluo_initial: 100.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueSpecies {
    pub species_id: String,
    pub b: f64,
    pub e: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub theta: HyperParams<f64>,
    pub design: SyntheticDesign,
    pub seed: u64,
    pub species: Vec<TrueSpecies>,
}

/// Draws species from the community distribution and simulates every
/// observation as `ln R = ln(d / (1 + (C/e)^b)) + N(0, sigma_err)`.
pub fn synthesize(
    theta: &HyperParams<f64>,
    design: &SyntheticDesign,
    seed: u64,
) -> (BioassayDataset, GroundTruth) {
    let mut rng = stream_rng(seed, 0);
    let mut z = move || rng.sample::<f64, _>(StandardNormal);
    let width = design.n_species.to_string().len().max(2);
    let mut observations = Vec::new();
    let mut species = Vec::new();
    for j in 0..design.n_species {
        let (z1, z2) = (z(), z());
        let log_b = theta.mu_logb + theta.sigma_logb * z1;
        let log_e = theta.mu_loge
            + theta.sigma_loge * (theta.rho * z1 + (1.0 - theta.rho * theta.rho).sqrt() * z2);
        let d = (design.ln_d_mean + design.ln_d_sd * z()).exp();
        let truth = TrueSpecies {
            species_id: format!("sp{:0width$}", j + 1),
            b: 10f64.powf(log_b),
            e: 10f64.powf(log_e),
            d,
        };
        let mut push = |concentration: f64, replicate: u32, ln_r: f64| {
            observations.push(Observation {
                species_id: truth.species_id.clone(),
                contaminant_id: design.contaminant.clone(),
                concentration,
                replicate,
                fluo_initial: design.fluo_initial,
                fluo_final: design.fluo_initial * ln_r.exp(),
                is_control: concentration == 0.0,
            });
        };
        for r in 1..=design.n_controls {
            let eps = theta.sigma_err * z();
            push(0.0, r, d.ln() + eps);
        }
        for &c in &design.concentrations {
            for r in 1..=design.replicates {
                let eps = theta.sigma_err * z();
                push(c, r, ln_loglogistic(c, truth.b, truth.e, d) + eps);
            }
        }
        species.push(truth);
    }
    (
        BioassayDataset { observations },
        GroundTruth {
            theta: *theta,
            design: design.clone(),
            seed,
            species,
        },
    )
}

/// Hierarchical-model inputs and default priors for one contaminant, with
/// species-pooled control levels.
pub fn hier_data_for(ds: &BioassayDataset, contaminant: &str) -> Result<(HierData<f64>, PriorSpec<f64>)> {
    let data = HierData::from_dataset(ds, contaminant, ControlPooling::PerSpecies)?;
    let priors = PriorSpec::from_concentrations(&data.concentrations())?;
    Ok((data, priors))
}
