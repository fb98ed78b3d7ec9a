//! Run configuration: profile defaults, then a `key = value` file, then
//! command-line overrides.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bioassay::{ColumnMapping, ControlPooling};
use crate::error::{Error, Result};
use crate::posterior::{HyperParams, McmcConfig};
use crate::synth::{paper_like_design, DIURON_THETA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Run sizes of the original study.
    Paper,
    /// Reduced sizes for quick runs and automated checks.
    Test,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "test" => Ok(Profile::Test),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected paper or test)"))),
        }
    }
}

impl Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSizes {
    /// Posterior draws for the global response and GEC_x.
    pub n_theta_gec: usize,
    /// Species per simulated community for the global response.
    pub n_species_gec: usize,
    /// Posterior draws for the hierarchical SSD.
    pub n_theta_ssd: usize,
    /// Species per large community for the hierarchical SSD.
    pub n_species_large: usize,
    pub grid_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSettings {
    pub theta: HyperParams<f64>,
    pub n_species: usize,
    pub concentrations: Vec<f64>,
    pub replicates: u32,
    pub n_controls: u32,
    pub contaminant: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    pub input: Option<PathBuf>,
    /// Only this contaminant is analysed when set.
    pub contaminant: Option<String>,
    pub mapping: ColumnMapping,
    pub control_pooling: ControlPooling,
    pub mcmc: McmcConfig,
    pub n_boot_ec: usize,
    pub n_boot_hc: usize,
    /// Effect levels (percent) for EC_x, classical SSDs, GEC_x and HC_p.
    pub x_levels: Vec<f64>,
    /// Percent of species for HC_p.
    pub p: f64,
    /// Effect levels for the HC_p-versus-x curve.
    pub hc_x_grid: Vec<f64>,
    pub sim: SimulationSizes,
    pub gate_threshold: f64,
    pub allow_unconverged: bool,
    pub output: PathBuf,
    /// Posterior draws for `simulate`; defaults to the `fit-hier` outputs.
    pub posterior: Option<PathBuf>,
    pub seed: u64,
    pub synth: SynthSettings,
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let design = paper_like_design(10);
        let (mcmc, n_boot_ec, sim) = match profile {
            Profile::Paper => (
                McmcConfig::default(),
                1000,
                SimulationSizes {
                    n_theta_gec: 10_000,
                    n_species_gec: 30,
                    n_theta_ssd: 2000,
                    n_species_large: 4_000_000,
                    grid_points: 100,
                },
            ),
            Profile::Test => (
                McmcConfig::test_profile(),
                200,
                SimulationSizes {
                    n_theta_gec: 2000,
                    n_species_gec: 30,
                    n_theta_ssd: 200,
                    n_species_large: 100_000,
                    grid_points: 100,
                },
            ),
        };
        Self {
            profile,
            input: None,
            contaminant: None,
            mapping: ColumnMapping::default(),
            control_pooling: ControlPooling::default(),
            mcmc,
            n_boot_ec,
            n_boot_hc: 1000,
            x_levels: vec![10.0, 50.0],
            p: 5.0,
            hc_x_grid: vec![1.0, 2.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0],
            sim,
            gate_threshold: 1.05,
            allow_unconverged: false,
            output: PathBuf::from("out"),
            posterior: None,
            seed: 0,
            synth: SynthSettings {
                theta: DIURON_THETA.with_sigma_err(0.3),
                n_species: design.n_species,
                concentrations: design.concentrations,
                replicates: design.replicates,
                n_controls: design.n_controls,
                contaminant: design.contaminant,
            },
        }
    }

    /// Builds a configuration from `key = value` pairs, later pairs winning.
    /// The profile is resolved first so that it only supplies defaults.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let profile = pairs
            .iter()
            .rev()
            .find(|(k, _)| k == "profile")
            .map(|(_, v)| v.parse())
            .transpose()?
            .unwrap_or(Profile::Paper);
        let mut cfg = Self::for_profile(profile);
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "profile" => self.profile = parse(key, v)?,
            "input" => self.input = Some(PathBuf::from(v)),
            "contaminant" => self.contaminant = (!v.is_empty()).then(|| v.to_string()),
            "output" => self.output = PathBuf::from(v),
            "posterior" => self.posterior = Some(PathBuf::from(v)),
            "seed" => self.seed = parse(key, v)?,
            "col_species" => self.mapping.species = v.into(),
            "col_contaminant" => self.mapping.contaminant = v.into(),
            "col_concentration" => self.mapping.concentration = v.into(),
            "col_replicate" => self.mapping.replicate = v.into(),
            "col_fluo_initial" => self.mapping.fluo_initial = v.into(),
            "col_fluo_final" => self.mapping.fluo_final = v.into(),
            "col_control" => self.mapping.control = (!v.is_empty()).then(|| v.to_string()),
            "delimiter" => {
                self.mapping.delimiter = match v {
                    "tab" | "\\t" => b'\t',
                    s if s.len() == 1 => s.as_bytes()[0],
                    _ => return Err(bad(key, v)),
                }
            }
            "control_pooling" => {
                self.control_pooling = match v {
                    "species" => ControlPooling::PerSpecies,
                    "pair" => ControlPooling::PerPair,
                    _ => return Err(bad(key, v)),
                }
            }
            "n_iter" => self.mcmc.n_iter = parse(key, v)?,
            "thin" => self.mcmc.thin = parse(key, v)?,
            "n_chains" => self.mcmc.n_chains = parse(key, v)?,
            "burn_in_fraction" => self.mcmc.burn_in_fraction = parse(key, v)?,
            "adapt_window" => self.mcmc.adapt_window = parse(key, v)?,
            "n_boot_ec" => self.n_boot_ec = parse(key, v)?,
            "n_boot_hc" => self.n_boot_hc = parse(key, v)?,
            "x_levels" => self.x_levels = parse_list(key, v)?,
            "p" => self.p = parse(key, v)?,
            "hc_x_grid" => self.hc_x_grid = parse_list(key, v)?,
            "n_theta_gec" => self.sim.n_theta_gec = parse(key, v)?,
            "n_species_gec" => self.sim.n_species_gec = parse(key, v)?,
            "n_theta_ssd" => self.sim.n_theta_ssd = parse(key, v)?,
            "n_species_large" => self.sim.n_species_large = parse(key, v)?,
            "grid_points" => self.sim.grid_points = parse(key, v)?,
            "gate_threshold" => self.gate_threshold = parse(key, v)?,
            "allow_unconverged" => self.allow_unconverged = parse(key, v)?,
            "synth_theta" => {
                let t: Vec<f64> = parse_list(key, v)?;
                if t.len() != 5 {
                    return Err(Error::Config(format!(
                        "synth_theta needs 5 values (mu_logb, sigma_logb, mu_loge, sigma_loge, rho), got {}",
                        t.len()
                    )));
                }
                let s = self.synth.theta.sigma_err;
                self.synth.theta = HyperParams::from_array([t[0], t[1], t[2], t[3], t[4], s]);
            }
            "synth_sigma_err" => self.synth.theta.sigma_err = parse(key, v)?,
            "synth_n_species" => self.synth.n_species = parse(key, v)?,
            "synth_concentrations" => self.synth.concentrations = parse_list(key, v)?,
            "synth_replicates" => self.synth.replicates = parse(key, v)?,
            "synth_controls" => self.synth.n_controls = parse(key, v)?,
            "synth_contaminant" => self.synth.contaminant = v.into(),
            other => return Err(Error::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.mcmc.validate()?;
        let percent = |name: &str, x: f64| {
            if x > 0.0 && x < 100.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in (0, 100), got {x}")))
            }
        };
        if self.x_levels.is_empty() {
            return Err(Error::Config("x_levels must not be empty".into()));
        }
        for &x in self.x_levels.iter().chain(&self.hc_x_grid) {
            percent("effect level", x)?;
        }
        percent("p", self.p)?;
        if self.hc_x_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("hc_x_grid must be strictly increasing".into()));
        }
        let s = &self.sim;
        if [s.n_theta_gec, s.n_species_gec, s.n_theta_ssd, s.n_species_large]
            .contains(&0)
            || s.grid_points < 2
        {
            return Err(Error::Config("simulation sizes must be positive (grid_points >= 2)".into()));
        }
        if self.n_boot_ec < 200 {
            return Err(Error::Config(format!("n_boot_ec must be at least 200, got {}", self.n_boot_ec)));
        }
        if self.n_boot_hc < 1000 {
            return Err(Error::Config(format!("n_boot_hc must be at least 1000, got {}", self.n_boot_hc)));
        }
        if !(self.gate_threshold > 1.0) {
            return Err(Error::Config("gate_threshold must exceed 1".into()));
        }
        let t = &self.synth.theta;
        if !(t.is_valid() && self.synth.n_species > 0 && self.synth.replicates > 0) {
            return Err(Error::Config("invalid synthetic design".into()));
        }
        if self.synth.concentrations.iter().any(|&c| !(c > 0.0)) || self.synth.concentrations.len() < 3 {
            return Err(Error::Config("synth_concentrations needs at least 3 positive values".into()));
        }
        Ok(())
    }

    /// The effective configuration as `key = value` lines, accepted back by
    /// [`parse_config_text`].
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ");
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let m = &self.mapping;
        let t = &self.synth.theta;
        let mut pairs: Vec<(&str, String)> = vec![
            ("profile", self.profile.to_string()),
            ("input", opt(&self.input)),
            ("contaminant", self.contaminant.clone().unwrap_or_default()),
            ("output", self.output.display().to_string()),
            ("posterior", opt(&self.posterior)),
            ("seed", self.seed.to_string()),
            ("col_species", m.species.clone()),
            ("col_contaminant", m.contaminant.clone()),
            ("col_concentration", m.concentration.clone()),
            ("col_replicate", m.replicate.clone()),
            ("col_fluo_initial", m.fluo_initial.clone()),
            ("col_fluo_final", m.fluo_final.clone()),
            ("col_control", m.control.clone().unwrap_or_default()),
            (
                "delimiter",
                if m.delimiter == b'\t' { "tab".into() } else { (m.delimiter as char).to_string() },
            ),
            (
                "control_pooling",
                match self.control_pooling {
                    ControlPooling::PerSpecies => "species".into(),
                    ControlPooling::PerPair => "pair".into(),
                },
            ),
            ("n_iter", self.mcmc.n_iter.to_string()),
            ("thin", self.mcmc.thin.to_string()),
            ("n_chains", self.mcmc.n_chains.to_string()),
            ("burn_in_fraction", self.mcmc.burn_in_fraction.to_string()),
            ("adapt_window", self.mcmc.adapt_window.to_string()),
            ("n_boot_ec", self.n_boot_ec.to_string()),
            ("n_boot_hc", self.n_boot_hc.to_string()),
            ("x_levels", list(&self.x_levels)),
            ("p", self.p.to_string()),
            ("hc_x_grid", list(&self.hc_x_grid)),
            ("n_theta_gec", self.sim.n_theta_gec.to_string()),
            ("n_species_gec", self.sim.n_species_gec.to_string()),
            ("n_theta_ssd", self.sim.n_theta_ssd.to_string()),
            ("n_species_large", self.sim.n_species_large.to_string()),
            ("grid_points", self.sim.grid_points.to_string()),
            ("gate_threshold", self.gate_threshold.to_string()),
            ("allow_unconverged", self.allow_unconverged.to_string()),
            ("synth_theta", list(&t.to_array()[..5])),
            ("synth_sigma_err", t.sigma_err.to_string()),
            ("synth_n_species", self.synth.n_species.to_string()),
            ("synth_concentrations", list(&self.synth.concentrations)),
            ("synth_replicates", self.synth.replicates.to_string()),
            ("synth_controls", self.synth.n_controls.to_string()),
            ("synth_contaminant", self.synth.contaminant.clone()),
        ];
        pairs.retain(|(_, v)| !v.is_empty());
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("invalid value {value:?} for `{key}`"))
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// skipped; a repeated key keeps its last value.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {line:?}", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        pairs.push((k.to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(text: &str) -> Vec<(String, String)> {
        parse_config_text(text).unwrap()
    }

    #[test]
    fn profile_supplies_defaults_and_keys_override() {
        let cfg = RunConfig::from_pairs(&pairs("thin = 5\n# comment\nprofile = test\n")).unwrap();
        assert_eq!(cfg.profile, Profile::Test);
        assert_eq!(cfg.mcmc.n_iter, 20_000);
        assert_eq!(cfg.mcmc.thin, 5);
        assert_eq!(cfg.sim.n_species_large, 100_000);
        let paper = RunConfig::from_pairs(&[]).unwrap();
        assert_eq!(paper.mcmc.n_iter, 500_000);
        assert_eq!(paper.sim.n_species_large, 4_000_000);
        assert_eq!(paper.x_levels, vec![10.0, 50.0]);
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::for_profile(Profile::Test);
        cfg.contaminant = Some("diuron".into());
        cfg.mapping.delimiter = b';';
        cfg.seed = 17;
        let back = RunConfig::from_pairs(&pairs(&cfg.to_text())).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn errors() {
        assert!(parse_config_text("just words").is_err());
        assert!(RunConfig::from_pairs(&pairs("colour = blue")).is_err());
        assert!(RunConfig::from_pairs(&pairs("n_chains = 1")).is_err());
        assert!(RunConfig::from_pairs(&pairs("seed = -3")).is_err());
        assert!(RunConfig::from_pairs(&pairs("x_levels = 10, 100")).is_err());
        assert!(RunConfig::from_pairs(&pairs("profile = fast")).is_err());
    }
}
