//! Posterior persistence: one CSV row per retained draw plus a JSON sidecar.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{
    prior_posterior_report, AcceptanceRates, ChainTrace, HyperParams, McmcConfig, PosteriorSample,
    PriorPosteriorRow, PriorSpec, HYPER_NAMES,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub contaminant: String,
    pub species_ids: Vec<String>,
    /// Run seed; `config.seed` holds the seed derived from it for the chains.
    pub seed: u64,
    pub config: McmcConfig,
    pub priors: PriorSpec<f64>,
    pub concentration_range: (f64, f64),
    pub draws_per_chain: Vec<usize>,
    /// Post-burn-in acceptance rates per chain; `null` where nothing was
    /// proposed.
    pub acceptance: Vec<AcceptanceRates<Option<f64>>>,
    pub gelman_rubin: BTreeMap<String, Option<f64>>,
    pub gate_threshold: f64,
    pub gate_passed: bool,
    pub prior_posterior: Vec<PriorPosteriorRow<f64>>,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    pub fn new(
        contaminant: &str,
        seed: u64,
        sample: &PosteriorSample<f64>,
        priors: &PriorSpec<f64>,
        gate_threshold: f64,
    ) -> Self {
        Self {
            contaminant: contaminant.to_string(),
            species_ids: sample.species_ids.clone(),
            seed,
            config: sample.config,
            priors: *priors,
            concentration_range: sample.concentration_range,
            draws_per_chain: sample.chains.iter().map(|c| c.hyper.len()).collect(),
            acceptance: sample
                .chains
                .iter()
                .map(|c| AcceptanceRates {
                    species: c.acceptance.species.iter().map(|&v| finite(v)).collect(),
                    hyper: c.acceptance.hyper.map(finite),
                })
                .collect(),
            gelman_rubin: HYPER_NAMES
                .iter()
                .zip(sample.gelman_rubin)
                .map(|(n, r)| (n.to_string(), r))
                .collect(),
            gate_threshold,
            gate_passed: sample.gate_failures(gate_threshold).is_empty(),
            prior_posterior: prior_posterior_report(sample, priors),
            warnings: sample.warnings(),
        }
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn write_posterior_csv<W: Write>(writer: W, sample: &PosteriorSample<f64>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = vec!["chain".into(), "iter".into()];
    header.extend(HYPER_NAMES.iter().map(|s| s.to_string()));
    for id in &sample.species_ids {
        header.push(format!("log_b_{id}"));
        header.push(format!("log_e_{id}"));
    }
    wtr.write_record(&header)?;
    for (c, chain) in sample.chains.iter().enumerate() {
        for (i, h) in chain.hyper.iter().enumerate() {
            let mut row: Vec<String> = vec![c.to_string(), chain.iterations[i].to_string()];
            row.extend(h.to_array().iter().map(f64::to_string));
            for s in &chain.species[i] {
                row.push(s[0].to_string());
                row.push(s[1].to_string());
            }
            wtr.write_record(&row)?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<posterior writer>", e))?;
    Ok(())
}

pub fn write_diagnostics<W: Write>(writer: W, diagnostics: &Diagnostics) -> Result<()> {
    serde_json::to_writer_pretty(writer, diagnostics)?;
    Ok(())
}

/// Reads draws back and checks them against the sidecar.
pub fn read_posterior<R: Read, S: Read>(
    draws: R,
    sidecar: S,
) -> Result<(PosteriorSample<f64>, Diagnostics)> {
    let diag: Diagnostics = serde_json::from_reader(sidecar)?;
    let mut rdr = csv::Reader::from_reader(draws);
    let header = rdr.headers()?.clone();
    let n_species = (header.len().saturating_sub(8)) / 2;
    if header.len() < 8 || header.len() % 2 != 0 || n_species != diag.species_ids.len() {
        return Err(Error::Schema(format!(
            "posterior has {} species columns but diagnostics list {} species",
            n_species,
            diag.species_ids.len()
        )));
    }
    for (j, id) in diag.species_ids.iter().enumerate() {
        let want = format!("log_b_{id}");
        if header.get(8 + 2 * j) != Some(want.as_str()) {
            return Err(Error::Schema(format!("expected column `{want}` at position {}", 9 + 2 * j)));
        }
    }
    let mut chains: Vec<ChainTrace<f64>> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let num = |i: usize| -> Result<f64> {
            let raw = record.get(i).unwrap_or("");
            raw.parse::<f64>().map_err(|_| Error::Parse {
                line,
                column: header.get(i).unwrap_or("?").to_string(),
                value: raw.to_string(),
            })
        };
        let c = num(0)? as usize;
        let iter = num(1)? as usize;
        if c > chains.len() {
            return Err(Error::Schema(format!("chain index {c} out of order at line {line}")));
        }
        if c == chains.len() {
            chains.push(ChainTrace {
                iterations: Vec::new(),
                hyper: Vec::new(),
                species: Vec::new(),
                acceptance: match diag.acceptance.get(c) {
                    Some(a) => AcceptanceRates {
                        species: a.species.iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
                        hyper: a.hyper.map(|v| v.unwrap_or(f64::NAN)),
                    },
                    None => AcceptanceRates {
                        species: Vec::new(),
                        hyper: [f64::NAN; 6],
                    },
                },
                warnings: Vec::new(),
            });
        }
        let mut h = [0.0; 6];
        for (k, slot) in h.iter_mut().enumerate() {
            *slot = num(2 + k)?;
        }
        let hyper = HyperParams::from_array(h);
        if !hyper.is_valid() {
            return Err(Error::Schema(format!("invalid hyperparameters at line {line}")));
        }
        let species = (0..n_species)
            .map(|j| Ok([num(8 + 2 * j)?, num(9 + 2 * j)?]))
            .collect::<Result<Vec<_>>>()?;
        let chain = &mut chains[c];
        chain.iterations.push(iter);
        chain.hyper.push(hyper);
        chain.species.push(species);
    }
    let lengths: Vec<usize> = chains.iter().map(|c| c.hyper.len()).collect();
    if lengths != diag.draws_per_chain {
        return Err(Error::Schema(format!(
            "draws per chain {lengths:?} do not match diagnostics {:?}",
            diag.draws_per_chain
        )));
    }
    let mut sample = PosteriorSample {
        species_ids: diag.species_ids.clone(),
        chains,
        gelman_rubin: [None; 6],
        concentration_range: diag.concentration_range,
        config: diag.config,
    };
    sample.update_gelman_rubin();
    Ok((sample, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::run_mcmc;
    use crate::synth::{hier_data_for, paper_like_design, synthesize, DIURON_THETA};

    fn written() -> (PosteriorSample<f64>, Vec<u8>, Vec<u8>) {
        let design = paper_like_design(4);
        let (ds, _) = synthesize(&DIURON_THETA.with_sigma_err(0.3), &design, 3);
        let (data, priors) = hier_data_for(&ds, &design.contaminant).unwrap();
        let cfg = McmcConfig { n_iter: 1000, thin: 10, seed: 4, ..McmcConfig::test_profile() };
        let sample = run_mcmc(&data, &priors, &cfg).unwrap();
        let mut draws = Vec::new();
        write_posterior_csv(&mut draws, &sample).unwrap();
        let mut sidecar = Vec::new();
        write_diagnostics(&mut sidecar, &Diagnostics::new("diuron", 9, &sample, &priors, 1.05)).unwrap();
        (sample, draws, sidecar)
    }

    #[test]
    fn round_trip_is_exact() {
        let (sample, draws, sidecar) = written();
        let (back, diag) = read_posterior(draws.as_slice(), sidecar.as_slice()).unwrap();
        assert_eq!(diag.seed, 9);
        assert_eq!(back.species_ids, sample.species_ids);
        assert_eq!(back.concentration_range, sample.concentration_range);
        assert_eq!(back.gelman_rubin, sample.gelman_rubin);
        for (a, b) in back.chains.iter().zip(&sample.chains) {
            assert_eq!(a.hyper, b.hyper);
            assert_eq!(a.species, b.species);
            assert_eq!(a.iterations, b.iterations);
        }
    }

    #[test]
    fn species_mismatch_is_a_schema_error() {
        let (_, draws, sidecar) = written();
        let mut diag: Diagnostics = serde_json::from_slice(&sidecar).unwrap();
        diag.species_ids[0] = "other".into();
        let sidecar = serde_json::to_vec(&diag).unwrap();
        assert!(matches!(read_posterior(draws.as_slice(), sidecar.as_slice()), Err(Error::Schema(_))));
        diag.species_ids.pop();
        let sidecar = serde_json::to_vec(&diag).unwrap();
        assert!(matches!(read_posterior(draws.as_slice(), sidecar.as_slice()), Err(Error::Schema(_))));
    }
}
