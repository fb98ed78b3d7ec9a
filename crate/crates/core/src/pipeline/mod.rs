//! Command-line stages: each reads the run configuration, writes its files
//! into the output directory and returns a [`RunReport`].

mod config;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

pub use config::{parse_config_text, read_config_file, Profile, RunConfig, SimulationSizes, SynthSettings};

use crate::bioassay::{load_dataset, make_responses, write_dataset, BioassayDataset, CurveKey, ResponsePoint};
use crate::classical_ssd::{bootstrap_hc, fit_lognormal, hc_p, HcEstimate, LognormalSsd};
use crate::community::{
    gec_x, hc5_vs_x, hierarchical_ssd, log_grid, select_thetas, write_band, CurveBand, GecEstimate,
    SimulationOptions,
};
use crate::dose_response::{bootstrap_ec_levels, fit_curve, CurveFit, EcEstimate};
use crate::error::{Error, Result};
use crate::posterior::{
    prior_posterior_report, read_posterior, run_mcmc, write_diagnostics, write_posterior_csv, Diagnostics,
    HierData, McmcConfig, PosteriorSample, PriorPosteriorRow, PriorSpec, HYPER_NAMES,
};
use crate::rng::derive_seed;
use crate::synth::{synthesize, GroundTruth, SyntheticDesign};

pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub species_id: String,
    pub contaminant_id: String,
    pub fit: Option<CurveFit<f64>>,
    /// One estimate per configured effect level, when the bootstrap ran.
    pub ec: Vec<EcEstimate<f64>>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalResult {
    pub contaminant: String,
    pub x: f64,
    pub species: Vec<String>,
    pub ssd: LognormalSsd<f64>,
    pub hc: HcEstimate<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierSummary {
    pub contaminant: String,
    pub n_species: usize,
    pub n_draws: usize,
    pub gelman_rubin: BTreeMap<String, Option<f64>>,
    pub gate_passed: bool,
    pub hyperparameters: Vec<PriorPosteriorRow<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GecResult {
    pub contaminant: String,
    pub estimate: GecEstimate<f64>,
    pub n_species: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierHcResult {
    pub contaminant: String,
    pub x: f64,
    pub estimate: HcEstimate<f64>,
    pub n_species: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HcVsXRow {
    pub x: f64,
    pub lo: f64,
    pub median: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HcVsXResult {
    pub contaminant: String,
    pub p: f64,
    pub rows: Vec<HcVsXRow>,
}

/// Everything a run produced. Wall-clock timings are kept in a separate
/// file so that this report is byte-identical across reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config: RunConfig,
    /// Output files, relative to the output directory.
    pub files: Vec<String>,
    pub curve_fits: Vec<CurveRow>,
    pub classical_ssd: Vec<ClassicalResult>,
    pub hierarchical: Vec<HierSummary>,
    pub gec: Vec<GecResult>,
    pub hierarchical_hc: Vec<HierHcResult>,
    pub hc_vs_x: Vec<HcVsXResult>,
    pub synthetic: Option<GroundTruth>,
    pub notes: Vec<String>,
    pub warnings: Vec<String>,
}

impl RunReport {
    fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.into(),
            config: config.clone(),
            files: Vec::new(),
            curve_fits: Vec::new(),
            classical_ssd: Vec::new(),
            hierarchical: Vec::new(),
            gec: Vec::new(),
            hierarchical_hc: Vec::new(),
            hc_vs_x: Vec::new(),
            synthetic: None,
            notes: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn warn(&mut self, message: String) {
        log::warn!("{message}");
        self.warnings.push(message);
    }

    /// Rounded one-line summaries for the console.
    pub fn summary_lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.curve_fits.is_empty() {
            let ok = self
                .curve_fits
                .iter()
                .filter(|r| r.fit.as_ref().is_some_and(|f| f.converged))
                .count();
            out.push(format!("curves: {ok} of {} converged", self.curve_fits.len()));
        }
        for c in &self.classical_ssd {
            out.push(format!(
                "{} classical SSD on EC{}: HC{} = {:.4} [{:.4}, {:.4}] ({} species)",
                c.contaminant, c.x, c.hc.p, c.hc.point, c.hc.ci_low, c.hc.ci_high, c.ssd.n_species
            ));
        }
        for h in &self.hierarchical {
            let worst = h
                .gelman_rubin
                .values()
                .map(|v| v.unwrap_or(f64::INFINITY))
                .fold(0.0, f64::max);
            out.push(format!(
                "{} posterior: {} draws, max Gelman-Rubin {:.4} ({})",
                h.contaminant,
                h.n_draws,
                worst,
                if h.gate_passed { "converged" } else { "NOT converged" }
            ));
            for r in &h.hyperparameters {
                out.push(format!("  {:<10} {:.3} [{:.3}, {:.3}]", r.parameter, r.median, r.q025, r.q975));
            }
        }
        for g in &self.gec {
            let e = &g.estimate;
            out.push(format!(
                "{} GEC{} = {:.4} [{:.4}, {:.4}]",
                g.contaminant, e.x, e.point, e.ci_low, e.ci_high
            ));
        }
        for h in &self.hierarchical_hc {
            let e = &h.estimate;
            out.push(format!(
                "{} hierarchical HC{} on EC{} = {:.4} [{:.4}, {:.4}]",
                h.contaminant, e.p, h.x, e.point, e.ci_low, e.ci_high
            ));
        }
        if let Some(t) = &self.synthetic {
            out.push(format!(
                "synthetic dataset: {} species, seed {}",
                t.species.len(),
                t.seed
            ));
        }
        for w in &self.warnings {
            out.push(format!("warning: {w}"));
        }
        out
    }
}

/// Output directory plus the list of files written to it.
struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w).map_err(|e| Error::io(name, e))
        })
    }
}

/// File-name-safe form of an identifier.
fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// `10` for 10.0, `2p5` for 2.5.
fn level(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        x.to_string().replace('.', "p")
    }
}

struct Timer {
    stages: Vec<(String, f64)>,
}

impl Timer {
    fn time<R>(&mut self, stage: &str, f: impl FnOnce() -> Result<R>) -> Result<R> {
        let t0 = Instant::now();
        let r = f()?;
        self.stages.push((stage.into(), t0.elapsed().as_secs_f64()));
        Ok(r)
    }
}

fn load_input(cfg: &RunConfig) -> Result<BioassayDataset> {
    let path = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("no input dataset given (set `input`)".into()))?;
    load_dataset(path, &cfg.mapping)
}

/// Curves passing the contaminant filter; empty selection is an error.
fn select_curves(
    cfg: &RunConfig,
    ds: &BioassayDataset,
) -> Result<Vec<(CurveKey, Vec<ResponsePoint<f64>>)>> {
    let curves: Vec<_> = make_responses(ds)
        .into_iter()
        .filter(|(k, _)| cfg.contaminant.as_ref().is_none_or(|c| &k.contaminant == c))
        .collect();
    if curves.is_empty() {
        return Err(Error::InsufficientData(match &cfg.contaminant {
            Some(c) => format!("no dose-response data for contaminant `{c}`"),
            None => "no dose-response data in the dataset".into(),
        }));
    }
    Ok(curves)
}

fn contaminants_of(curves: &[(CurveKey, Vec<ResponsePoint<f64>>)]) -> Vec<String> {
    let mut c: Vec<String> = curves.iter().map(|(k, _)| k.contaminant.clone()).collect();
    c.dedup();
    c
}

fn fit_all(
    cfg: &RunConfig,
    ds: &BioassayDataset,
    curves: &[(CurveKey, Vec<ResponsePoint<f64>>)],
    bootstrap: bool,
) -> Vec<CurveRow> {
    curves
        .iter()
        .map(|(key, points)| {
            let mut row = CurveRow {
                species_id: key.species.clone(),
                contaminant_id: key.contaminant.clone(),
                fit: None,
                ec: Vec::new(),
                note: None,
            };
            let d = match cfg.control_pooling.estimate(ds, &key.species, &key.contaminant) {
                Ok(c) => c.d,
                Err(e) => {
                    row.note = Some(e.to_string());
                    return row;
                }
            };
            match fit_curve(points, d) {
                Ok(fit) => {
                    let converged = fit.converged;
                    row.fit = Some(fit);
                    if !converged {
                        row.note = Some("fit did not converge".into());
                    } else if bootstrap {
                        let seed = derive_seed(cfg.seed, &format!("ec-bootstrap/{}/{}", key.species, key.contaminant));
                        match bootstrap_ec_levels(points, d, &cfg.x_levels, cfg.n_boot_ec, seed) {
                            Ok(ec) => row.ec = ec,
                            Err(e) => row.note = Some(format!("bootstrap: {e}")),
                        }
                    }
                }
                Err(e) => row.note = Some(e.to_string()),
            }
            row
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_curve_csv<W: Write>(w: W, rows: &[CurveRow], x_levels: &[f64]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["species", "contaminant", "b", "e", "d", "sigma"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for &x in x_levels {
        let l = level(x);
        header.extend([format!("ec{l}"), format!("ec{l}_lo"), format!("ec{l}_hi")]);
    }
    header.push("converged".into());
    wtr.write_record(&header)?;
    for r in rows {
        let f = r.fit.as_ref();
        let mut rec = vec![
            r.species_id.clone(),
            r.contaminant_id.clone(),
            opt(f.map(|f| f.b)),
            opt(f.map(|f| f.e)),
            opt(f.map(|f| f.d)),
            opt(f.map(|f| f.sigma)),
        ];
        for (i, &x) in x_levels.iter().enumerate() {
            let point = f.filter(|f| f.converged).and_then(|f| f.ec_x(x).ok());
            let est = r.ec.get(i);
            rec.extend([opt(point), opt(est.map(|e| e.ci_low)), opt(est.map(|e| e.ci_high))]);
        }
        rec.push(f.is_some_and(|f| f.converged).to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<curve writer>", e))?;
    Ok(())
}

fn stage_fit_curves(cfg: &RunConfig, ds: &BioassayDataset, out: &mut Output, report: &mut RunReport) -> Result<()> {
    let curves = select_curves(cfg, ds)?;
    let rows = fit_all(cfg, ds, &curves, true);
    for r in &rows {
        if let Some(n) = &r.note {
            report.warn(format!("{}/{}: {n}", r.species_id, r.contaminant_id));
        }
    }
    out.write("curve_fits.csv", |w| write_curve_csv(w, &rows, &cfg.x_levels))?;
    report.curve_fits = rows;
    Ok(())
}

fn classical_json(r: &ClassicalResult) -> Value {
    let p = level(r.hc.p);
    let mut m = Map::new();
    m.insert("contaminant".into(), json!(r.contaminant));
    m.insert("x".into(), json!(r.x));
    m.insert("mu_log10".into(), json!(r.ssd.mu_log10));
    m.insert("sigma_log10".into(), json!(r.ssd.sigma_log10));
    m.insert("n".into(), json!(r.ssd.n_species));
    m.insert(format!("hc{p}"), json!(r.hc.point));
    m.insert(format!("hc{p}_lo"), json!(r.hc.ci_low));
    m.insert(format!("hc{p}_hi"), json!(r.hc.ci_high));
    m.insert("n_boot".into(), json!(r.hc.n_boot));
    m.insert("species".into(), json!(r.species));
    Value::Object(m)
}

fn write_ssd_curve<W: Write>(w: W, ssd: &LognormalSsd<f64>, n: usize) -> Result<()> {
    let (lo, hi) = (
        10f64.powf(ssd.mu_log10 - 4.0 * ssd.sigma_log10),
        10f64.powf(ssd.mu_log10 + 4.0 * ssd.sigma_log10),
    );
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["concentration", "fraction_affected"])?;
    for c in log_grid(lo, hi, n) {
        wtr.write_record(&[c.to_string(), ssd.fraction_affected(c).to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("<ssd writer>", e))?;
    Ok(())
}

fn stage_classical(cfg: &RunConfig, ds: &BioassayDataset, out: &mut Output, report: &mut RunReport) -> Result<()> {
    let curves = select_curves(cfg, ds)?;
    let rows = if report.curve_fits.is_empty() {
        fit_all(cfg, ds, &curves, false)
    } else {
        report.curve_fits.clone()
    };
    for contaminant in contaminants_of(&curves) {
        let fits: Vec<&CurveFit<f64>> = rows
            .iter()
            .filter(|r| r.contaminant_id == contaminant)
            .filter_map(|r| r.fit.as_ref().filter(|f| f.converged))
            .collect();
        if fits.len() < 3 {
            return Err(Error::InsufficientData(format!(
                "{} converged curves for `{contaminant}`, at least 3 required for an SSD",
                fits.len()
            )));
        }
        for &x in &cfg.x_levels {
            let ecs: Vec<f64> = fits.iter().map(|f| f.ec_x(x)).collect::<Result<_>>()?;
            let ssd = fit_lognormal(&ecs)?;
            let seed = derive_seed(cfg.seed, &format!("hc-bootstrap/{contaminant}/{x}"));
            let hc = bootstrap_hc(&ecs, cfg.p, cfg.n_boot_hc, seed)?;
            debug_assert_eq!(hc.point, hc_p(&ssd, cfg.p)?);
            let result = ClassicalResult {
                contaminant: contaminant.clone(),
                x,
                species: fits.iter().map(|f| f.species_id.clone()).collect(),
                ssd,
                hc,
            };
            let stem = format!("classical_ssd_{}_ec{}", slug(&contaminant), level(x));
            out.json(&format!("{stem}.json"), &classical_json(&result))?;
            out.write(&format!("{stem}.csv"), |w| write_ssd_curve(w, &ssd, cfg.sim.grid_points))?;
            report.classical_ssd.push(result);
        }
    }
    Ok(())
}

fn hier_summary(contaminant: &str, sample: &PosteriorSample<f64>, priors: &PriorSpec<f64>, cfg: &RunConfig) -> HierSummary {
    HierSummary {
        contaminant: contaminant.into(),
        n_species: sample.species_ids.len(),
        n_draws: sample.n_draws(),
        gelman_rubin: HYPER_NAMES
            .iter()
            .zip(sample.gelman_rubin)
            .map(|(n, r)| (n.to_string(), r))
            .collect(),
        gate_passed: sample.gate_failures(cfg.gate_threshold).is_empty(),
        hyperparameters: prior_posterior_report(sample, priors),
    }
}

fn posterior_names(contaminant: &str) -> (String, String) {
    let s = slug(contaminant);
    (format!("posterior_{s}.csv"), format!("posterior_{s}_diagnostics.json"))
}

fn stage_fit_hier(cfg: &RunConfig, ds: &BioassayDataset, out: &mut Output, report: &mut RunReport) -> Result<()> {
    let curves = select_curves(cfg, ds)?;
    for contaminant in contaminants_of(&curves) {
        let data = HierData::from_dataset(ds, &contaminant, cfg.control_pooling)?;
        let priors = PriorSpec::from_concentrations(&data.concentrations())?;
        let mcmc = McmcConfig {
            seed: derive_seed(cfg.seed, &format!("mcmc/{contaminant}")),
            ..cfg.mcmc
        };
        let sample = run_mcmc(&data, &priors, &mcmc)?;
        let diag = Diagnostics::new(&contaminant, cfg.seed, &sample, &priors, cfg.gate_threshold);
        let (csv_name, json_name) = posterior_names(&contaminant);
        out.write(&csv_name, |w| write_posterior_csv(w, &sample))?;
        out.write(&json_name, |w| write_diagnostics(w, &diag))?;
        for w in &diag.warnings {
            report.warn(format!("{contaminant}: {w}"));
        }
        let summary = hier_summary(&contaminant, &sample, &priors, cfg);
        if !summary.gate_passed {
            report.warn(format!(
                "{contaminant}: Gelman-Rubin not below {} for {}",
                cfg.gate_threshold,
                sample.gate_failures(cfg.gate_threshold).join(", ")
            ));
        }
        report.hierarchical.push(summary);
    }
    Ok(())
}

/// Posterior CSV / diagnostics pairs to simulate from.
fn posterior_inputs(cfg: &RunConfig) -> Result<Vec<(PathBuf, PathBuf)>> {
    if let Some(p) = &cfg.posterior {
        let stem = p.with_extension("");
        let diag = PathBuf::from(format!("{}_diagnostics.json", stem.display()));
        return Ok(vec![(p.clone(), diag)]);
    }
    let dir = &cfg.output;
    let mut found = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let name = entry.map_err(|e| Error::io(dir, e))?.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_prefix("posterior_").and_then(|n| n.strip_suffix("_diagnostics.json")) {
            found.push((dir.join(format!("posterior_{stem}.csv")), dir.join(&name)));
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(Error::Config(format!(
            "no posterior found in {} (run fit-hier or set `posterior`)",
            dir.display()
        )));
    }
    Ok(found)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn stage_simulate(
    cfg: &RunConfig,
    inputs: Vec<(PathBuf, PathBuf)>,
    out: &mut Output,
    report: &mut RunReport,
) -> Result<()> {
    for (csv_path, json_path) in inputs {
        let (sample, diag) = read_posterior(open(&csv_path)?, open(&json_path)?)?;
        let c = diag.contaminant.clone();
        if cfg.contaminant.as_ref().is_some_and(|f| f != &c) {
            continue;
        }
        let failures = sample.gate_failures(cfg.gate_threshold);
        if !failures.is_empty() {
            let msg = format!(
                "{c}: Gelman-Rubin not below {} for {}",
                cfg.gate_threshold,
                failures.join(", ")
            );
            if !cfg.allow_unconverged {
                return Err(Error::ConvergenceGate(msg));
            }
            report.warn(format!("{msg}; simulating anyway"));
        }
        if !report.hierarchical.iter().any(|h| h.contaminant == c) {
            report.hierarchical.push(hier_summary(&c, &sample, &diag.priors, cfg));
        }
        let s = slug(&c);

        let gec_sel = select_thetas(&sample, cfg.sim.n_theta_gec, derive_seed(cfg.seed, &format!("select-gec/{c}")))?;
        let ssd_sel = select_thetas(&sample, cfg.sim.n_theta_ssd, derive_seed(cfg.seed, &format!("select-ssd/{c}")))?;
        for (sel, what) in [(&gec_sel, "global response"), (&ssd_sel, "hierarchical SSD")] {
            if sel.with_replacement {
                report.notes.push(format!(
                    "{c}: {what} resampled {} posterior draws with replacement from {}",
                    sel.draws.len(),
                    sample.n_draws()
                ));
            }
        }
        let gec_opts = SimulationOptions {
            n_theta: cfg.sim.n_theta_gec,
            n_species: cfg.sim.n_species_gec,
            grid_points: cfg.sim.grid_points,
            seed: derive_seed(cfg.seed, &format!("gec/{c}")),
        };
        let mut band: Option<CurveBand<f64>> = None;
        for &x in &cfg.x_levels {
            let (est, b) = gec_x(&gec_sel, x, &gec_opts)?;
            report.gec.push(GecResult {
                contaminant: c.clone(),
                estimate: est,
                n_species: cfg.sim.n_species_gec,
            });
            band.get_or_insert(b);
        }
        if let Some(b) = &band {
            out.write(&format!("global_response_{s}.csv"), |w| write_band(w, b))?;
        }

        let ssd_opts = SimulationOptions {
            n_theta: cfg.sim.n_theta_ssd,
            n_species: cfg.sim.n_species_large,
            grid_points: cfg.sim.grid_points,
            seed: derive_seed(cfg.seed, &format!("ssd/{c}")),
        };
        for &x in &cfg.x_levels {
            let (b, hc) = hierarchical_ssd(&ssd_sel, x, cfg.p, &ssd_opts)?;
            out.write(&format!("hierarchical_ssd_{s}_ec{}.csv", level(x)), |w| write_band(w, &b))?;
            report.hierarchical_hc.push(HierHcResult {
                contaminant: c.clone(),
                x,
                estimate: hc,
                n_species: cfg.sim.n_species_large,
            });
        }
        let curve = hc5_vs_x(&ssd_sel, &cfg.hc_x_grid, cfg.p, &ssd_opts)?;
        out.write(&format!("hc_vs_x_{s}.csv"), |w| write_band(w, &curve))?;
        report.hc_vs_x.push(HcVsXResult {
            contaminant: c.clone(),
            p: cfg.p,
            rows: (0..curve.grid.len())
                .map(|i| HcVsXRow {
                    x: curve.grid[i],
                    lo: curve.lo[i],
                    median: curve.median[i],
                    hi: curve.hi[i],
                })
                .collect(),
        });
    }
    if report.gec.is_empty() {
        return Err(Error::InsufficientData(match &cfg.contaminant {
            Some(c) => format!("no posterior for contaminant `{c}`"),
            None => "no posterior to simulate from".into(),
        }));
    }
    Ok(())
}

pub const SYNTHETIC_DATASET: &str = "synthetic_dataset.csv";
pub const SYNTHETIC_TRUTH: &str = "synthetic_truth.json";

fn stage_synthesize(cfg: &RunConfig, out: &mut Output, report: &mut RunReport) -> Result<()> {
    let s = &cfg.synth;
    let design = SyntheticDesign {
        contaminant: s.contaminant.clone(),
        n_species: s.n_species,
        concentrations: s.concentrations.clone(),
        replicates: s.replicates,
        n_controls: s.n_controls,
        ..crate::synth::paper_like_design(s.n_species)
    };
    let (ds, truth) = synthesize(&s.theta, &design, cfg.seed);
    out.write(SYNTHETIC_DATASET, |w| write_dataset(w, &ds))?;
    out.json(SYNTHETIC_TRUTH, &truth)?;
    report.synthetic = Some(truth);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    FitCurves,
    ClassicalSsd,
    FitHier,
    Simulate,
    Synthesize,
    /// Every analysis stage in order.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::FitCurves => "fit-curves",
            Command::ClassicalSsd => "classical-ssd",
            Command::FitHier => "fit-hier",
            Command::Simulate => "simulate",
            Command::Synthesize => "synthesize",
            Command::Report => "report",
        }
    }
}

/// Runs a command and writes its report (and timings) to the output
/// directory.
pub fn run(command: Command, cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let mut out = Output::new(&cfg.output)?;
    let mut report = RunReport::new(command.name(), cfg);
    let mut timer = Timer { stages: Vec::new() };
    let needs_data = matches!(
        command,
        Command::FitCurves | Command::ClassicalSsd | Command::FitHier | Command::Report
    );
    let ds = if needs_data {
        Some(timer.time("load", || load_input(cfg))?)
    } else {
        None
    };
    let ds = ds.as_ref();
    let r = &mut report;
    match command {
        Command::FitCurves => timer.time("fit-curves", || stage_fit_curves(cfg, ds.unwrap(), &mut out, r))?,
        Command::ClassicalSsd => timer.time("classical-ssd", || stage_classical(cfg, ds.unwrap(), &mut out, r))?,
        Command::FitHier => timer.time("fit-hier", || stage_fit_hier(cfg, ds.unwrap(), &mut out, r))?,
        Command::Simulate => timer.time("simulate", || stage_simulate(cfg, posterior_inputs(cfg)?, &mut out, r))?,
        Command::Synthesize => timer.time("synthesize", || stage_synthesize(cfg, &mut out, r))?,
        Command::Report => {
            let ds = ds.unwrap();
            timer.time("fit-curves", || stage_fit_curves(cfg, ds, &mut out, r))?;
            timer.time("classical-ssd", || stage_classical(cfg, ds, &mut out, r))?;
            timer.time("fit-hier", || stage_fit_hier(cfg, ds, &mut out, r))?;
            // simulate exactly what this run fitted
            let inputs = r
                .hierarchical
                .iter()
                .map(|h| {
                    let (a, b) = posterior_names(&h.contaminant);
                    (cfg.output.join(a), cfg.output.join(b))
                })
                .collect();
            timer.time("simulate", || stage_simulate(cfg, inputs, &mut out, r))?;
        }
    }
    out.files.push(REPORT_FILE.into());
    out.files.push(TIMINGS_FILE.into());
    report.files = out.files.clone();
    out.json(REPORT_FILE, &report)?;
    let timings: BTreeMap<String, f64> = timer.stages.into_iter().collect();
    out.json(TIMINGS_FILE, &timings)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_name_pieces() {
        assert_eq!(slug("atrazine (technical)"), "atrazine__technical_");
        assert_eq!(level(10.0), "10");
        assert_eq!(level(2.5), "2p5");
    }
}
