//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fails.

use std::path::Path;
use std::time::{Duration, Instant};

use hssd::bioassay::ResponsePoint;
use hssd::classical_ssd::{hc_p, LognormalSsd};
use hssd::community::{hc5_vs_x, hierarchical_ssd, r_tot, select_thetas, CommunityDraw, SimulationOptions, ThetaSelection};
use hssd::dose_response::{bootstrap_ec_levels, ec_x, fit_curve, ln_loglogistic, loglogistic};
use hssd::pipeline::{run, Command, Profile, RunConfig};
use hssd::posterior::{run_mcmc, HierData, McmcConfig, PosteriorSample, HYPER_NAMES};
use hssd::rng::stream_rng;
use hssd::stats::central_interval;
use hssd::synth::{hier_data_for, paper_like_design, synthesize, DIURON_THETA};
use rand::Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: u32, name: &str, elapsed: Duration, limit: Duration, o: Outcome) -> bool {
    let in_time = elapsed <= limit;
    let pass = o.pass && in_time;
    println!(
        "[{}] AC{id} {name}: {} ({:.1} s, limit {:.0} s)",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        elapsed.as_secs_f64(),
        limit.as_secs_f64()
    );
    pass
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

/// Standard normal quantiles quoted to 17 digits.
const Z_01: f64 = -2.3263478740408408;
const Z_05: f64 = -1.6448536269514722;
const Z_10: f64 = -1.2815515655446004;

fn ac1() -> Outcome {
    let mut errs: Vec<(String, f64)> = Vec::new();
    // EC_x: the loglogistic evaluated at EC_x must sit at (1 - x/100) d.
    for &(b, e, x) in &[
        (1.0, 100.0, 50.0),
        (2.0, 100.0, 10.0),
        (1.0, 100.0, 10.0),
        (0.4, 3.0, 5.0),
        (5.0, 2e4, 90.0),
        (1.3, 0.02, 25.0),
    ] {
        let c = ec_x(b, e, x).unwrap();
        errs.push((format!("ec_x({b},{e},{x})"), rel(loglogistic(c, b, e, 1.7), 1.7 * (1.0 - x / 100.0))));
    }
    errs.push(("ec10 b=2".into(), rel(ec_x(2.0, 100.0, 10.0).unwrap(), 100.0 / 3.0)));
    errs.push(("ec10 b=1".into(), rel(ec_x(1.0, 100.0, 10.0).unwrap(), 100.0 / 9.0)));
    // loglogistic hand values
    errs.push(("R(C=e)".into(), rel(loglogistic(7.0, 3.3, 7.0, 2.0), 1.0)));
    errs.push(("R(C=2e,b=1)".into(), rel(loglogistic(2.0, 1.0, 1.0, 1.0), 1.0 / 3.0)));
    errs.push(("R(C=9e,b=1)".into(), rel(loglogistic(90.0, 1.0, 10.0, 5.0), 0.5)));
    errs.push(("R(C=e/4,b=2)".into(), rel(loglogistic(2.5, 2.0, 10.0, 1.0), 16.0 / 17.0)));
    errs.push(("R(C->0)".into(), rel(loglogistic(1e-300, 2.0, 10.0, 3.0), 3.0)));
    // HC_p against tabulated quantiles
    for &(mu, sigma, p, z) in &[
        (2.0, 0.5, 5.0, Z_05),
        (2.0, (2.0f64 / 3.0).sqrt(), 5.0, Z_05),
        (-1.0, 1.2, 10.0, Z_10),
        (3.5, 0.3, 1.0, Z_01),
        (0.0, 1.0, 50.0, 0.0),
        (1.0, 2.0, 95.0, -Z_05),
    ] {
        let ssd = LognormalSsd { mu_log10: mu, sigma_log10: sigma, n_species: 10 };
        errs.push((format!("hc{p}({mu},{sigma})"), rel(hc_p(&ssd, p).unwrap(), 10f64.powf(mu + z * sigma))));
    }
    // r_tot by direct arithmetic on response ratios
    let theta = DIURON_THETA.with_sigma_err(0.3);
    let community = |s: &[(f64, f64)]| CommunityDraw { theta, species: s.to_vec() };
    errs.push(("r_tot one species at e".into(), rel(r_tot(&community(&[(2.0, 5.0)]), 5.0), 0.5)));
    errs.push((
        "r_tot two species".into(),
        rel(r_tot(&community(&[(1.0, 10.0), (1.0, 1000.0)]), 10.0), (0.5 + 100.0 / 101.0) / 2.0),
    ));
    errs.push((
        "r_tot three species".into(),
        rel(
            r_tot(&community(&[(2.0, 1.0), (1.0, 4.0), (0.5, 16.0)]), 4.0),
            (1.0 / 17.0 + 0.5 + 1.0 / 1.5) / 3.0,
        ),
    ));
    errs.push(("r_tot C->0".into(), rel(r_tot(&community(&[(2.0, 1.0), (1.0, 4.0)]), 1e-12), 1.0)));

    let worst = errs.iter().cloned().fold(("".to_string(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    Outcome {
        pass: errs.len() >= 20 && worst.1 < 1e-6,
        detail: format!("{} cases, max relative error {:.1e} ({})", errs.len(), worst.1, worst.0),
    }
}

fn ac2() -> Outcome {
    let geometric = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
        (0..n).map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).collect()
    };
    let designs: Vec<(f64, f64, f64, Vec<f64>, usize)> = vec![
        (2.0, 50.0, 1.5, geometric(1.0, 1000.0, 8), 1),
        (0.5, 50.0, 1.5, geometric(1.0, 1000.0, 8), 3),
        (4.0, 300.0, 2.0, geometric(10.0, 3000.0, 8), 2),
        (1.0, 0.05, 0.8, geometric(1e-3, 10.0, 6), 3),
        (1.5, 2e4, 5.0, geometric(100.0, 1e6, 10), 1),
        (0.8, 5.0, 1.0, geometric(0.1, 1000.0, 5), 4),
        (3.0, 7.0, 3.0, geometric(1.0, 100.0, 12), 2),
        (1.2, 316.2, 1.2, paper_like_design(1).concentrations, 3),
        (0.3, 100.0, 1.0, geometric(0.01, 1e6, 9), 2),
    ];
    let mut worst: f64 = 0.0;
    let mut all_converged = true;
    for (b, e, d, conc, reps) in &designs {
        let pts: Vec<ResponsePoint<f64>> = conc
            .iter()
            .flat_map(|&c| {
                (0..*reps).map(move |_| ResponsePoint {
                    species_id: "s".into(),
                    contaminant_id: "c".into(),
                    concentration: c,
                    y: ln_loglogistic(c, *b, *e, *d),
                })
            })
            .collect();
        let fit = fit_curve(&pts, *d).unwrap();
        all_converged &= fit.converged;
        worst = worst.max(rel(fit.b, *b)).max(rel(fit.e, *e));
    }
    Outcome {
        pass: all_converged && worst < 1e-6,
        detail: format!("{} designs, max relative error {worst:.1e}, all converged: {all_converged}", designs.len()),
    }
}

struct RecoveryRun {
    posterior: PosteriorSample<f64>,
}

fn recovery_runs() -> Vec<RecoveryRun> {
    let truth = DIURON_THETA.with_sigma_err(0.3);
    let design = paper_like_design(10);
    (0..20u64)
        .map(|k| {
            let (ds, _) = synthesize(&truth, &design, 1000 + k);
            let (data, priors) = hier_data_for(&ds, &design.contaminant).unwrap();
            let cfg = McmcConfig { seed: k, ..McmcConfig::test_profile() };
            RecoveryRun { posterior: run_mcmc(&data, &priors, &cfg).unwrap() }
        })
        .collect()
}

fn ac3(runs: &[RecoveryRun]) -> Outcome {
    let truth = DIURON_THETA.with_sigma_err(0.3).to_array();
    let mut cover = [0usize; 5];
    let mut gr_ok = 0;
    for r in runs {
        for (k, c) in cover.iter_mut().enumerate() {
            let (lo, _, hi) = central_interval(&r.posterior.hyper_column(k).concat());
            if lo <= truth[k] && truth[k] <= hi {
                *c += 1;
            }
        }
        if r.posterior.gate_failures(1.05).is_empty() {
            gr_ok += 1;
        }
    }
    let n = runs.len();
    let coverage: Vec<String> = cover
        .iter()
        .enumerate()
        .map(|(k, c)| format!("{} {c}/{n}", HYPER_NAMES[k]))
        .collect();
    Outcome {
        pass: cover.iter().all(|&c| c * 5 >= n * 4) && gr_ok >= 18,
        detail: format!("coverage {}; Gelman-Rubin < 1.05 in {gr_ok}/{n}", coverage.join(", ")),
    }
}

fn ac4() -> Outcome {
    let theta = DIURON_THETA.with_sigma_err(0.3);
    let sim = RunConfig::for_profile(Profile::Test).sim;
    let sel = ThetaSelection {
        draws: vec![theta; sim.n_theta_ssd],
        with_replacement: false,
        concentration_range: (3.16, 31_623.0),
    };
    let opts = SimulationOptions {
        n_theta: sim.n_theta_ssd,
        n_species: sim.n_species_large,
        grid_points: sim.grid_points,
        seed: 2024,
    };
    let (_, hc) = hierarchical_ssd(&sel, 50.0, 5.0, &opts).unwrap();
    let want = 10f64.powf(theta.mu_loge - 1.644854 * theta.sigma_loge);
    let err = rel(hc.point, want);
    Outcome {
        pass: err < 0.005,
        detail: format!(
            "HC5 {:.4} vs closed form {want:.4}, relative error {:.2}% ({} draws x {} species)",
            hc.point,
            100.0 * err,
            opts.n_theta,
            opts.n_species
        ),
    }
}

fn ac5a() -> Outcome {
    let truth = DIURON_THETA.with_sigma_err(0.3);
    let design = paper_like_design(10);
    let (mut wider, mut total, mut skipped) = (0, 0, 0);
    for k in 0..20u64 {
        let (ds, _) = synthesize(&truth, &design, 1000 + k);
        let data = HierData::from_dataset(&ds, &design.contaminant, Default::default()).unwrap();
        for (j, s) in data.species.iter().enumerate() {
            match bootstrap_ec_levels(&s.points, s.d, &[10.0, 50.0], 200, 100 * k + j as u64) {
                Ok(est) => {
                    total += 1;
                    let w10 = (est[0].ci_high / est[0].ci_low).ln();
                    let w50 = (est[1].ci_high / est[1].ci_low).ln();
                    if w10 > w50 {
                        wider += 1;
                    }
                }
                Err(_) => skipped += 1,
            }
        }
    }
    Outcome {
        pass: total > 0 && wider * 5 >= total * 4,
        detail: format!("EC10 interval wider in {wider}/{total} curves ({skipped} without a stable fit)"),
    }
}

fn ac5b(run: &RecoveryRun) -> Outcome {
    let xs = [1.0, 2.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0];
    let sel = select_thetas(&run.posterior, 200, 7).unwrap();
    let opts = SimulationOptions { n_theta: 200, n_species: 100_000, grid_points: 50, seed: 7 };
    let band = hc5_vs_x(&sel, &xs, 5.0, &opts).unwrap();
    let monotone = band.median.windows(2).all(|w| w[1] >= w[0]);
    let width = |x: f64| {
        let i = xs.iter().position(|&v| v == x).unwrap();
        (band.hi[i] / band.lo[i]).ln()
    };
    let (w10, w50) = (width(10.0), width(50.0));
    Outcome {
        pass: monotone && w10 > w50,
        detail: format!(
            "median non-decreasing: {monotone}; ln(hi/lo) at x=10 {w10:.2} vs x=50 {w50:.2}"
        ),
    }
}

fn ac5c(runs: &[RecoveryRun]) -> Outcome {
    let excl = runs
        .iter()
        .filter(|r| central_interval(&r.posterior.hyper_column(4).concat()).0 > 0.0)
        .count();
    Outcome {
        pass: excl * 5 >= runs.len() * 4,
        detail: format!("rho interval excludes 0 in {excl}/{} runs (true rho 0.83)", runs.len()),
    }
}

fn ac6() -> Outcome {
    let (b, e, d, sigma) = (2.0, 50.0, 1.5, 0.2);
    let conc = paper_like_design(1).concentrations;
    let n = 200;
    let (mut covered, mut failed) = (0, 0);
    for r in 0..n {
        let mut rng = stream_rng(6000, r);
        let pts: Vec<ResponsePoint<f64>> = conc
            .iter()
            .flat_map(|&c| (0..3).map(move |_| c))
            .map(|c| ResponsePoint {
                species_id: "s".into(),
                contaminant_id: "c".into(),
                concentration: c,
                y: ln_loglogistic(c, b, e, d) + sigma * rng.sample::<f64, _>(StandardNormal),
            })
            .collect();
        match bootstrap_ec_levels(&pts, d, &[50.0], 1000, r) {
            Ok(est) if est[0].ci_low <= e && e <= est[0].ci_high => covered += 1,
            Ok(_) => {}
            Err(_) => failed += 1,
        }
    }
    let cov = covered as f64 / n as f64;
    Outcome {
        pass: (0.88..=0.99).contains(&cov),
        detail: format!(
            "EC50 coverage {covered}/{n} = {:.1}% ({failed} bootstrap failures; b=2, e=50, 8 concentrations x 3 replicates, 1000 resamples)",
            100.0 * cov
        ),
    }
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "timings.json")
        .collect();
    v.sort();
    v
}

fn ac7() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let go = |name: &str, threads: usize| -> hssd::Result<()> {
        let dir = tmp.path().join(name);
        let mut cfg = RunConfig::for_profile(Profile::Test);
        cfg.output = dir.clone();
        cfg.seed = 77;
        cfg.mcmc.n_iter = 4000;
        cfg.sim.n_theta_gec = 300;
        cfg.sim.n_theta_ssd = 30;
        cfg.sim.n_species_large = 20_000;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            run(Command::Synthesize, &cfg)?;
            cfg.input = Some(dir.join(hssd::pipeline::SYNTHETIC_DATASET));
            for c in [Command::FitCurves, Command::ClassicalSsd, Command::FitHier, Command::Simulate, Command::Report] {
                run(c, &cfg)?;
            }
            Ok(())
        })
    };
    let runs = [("serial", 1), ("parallel", 4), ("parallel_again", 4)];
    for (name, threads) in runs {
        if let Err(e) = go(name, threads) {
            return Outcome { pass: false, detail: format!("pipeline error: {e}") };
        }
    }
    let base = tmp.path().join("serial");
    let names = files(&base);
    let mut mismatched = Vec::new();
    for (other, _) in &runs[1..] {
        let dir = tmp.path().join(other);
        if files(&dir) != names {
            mismatched.push(format!("{other}: file sets differ"));
            continue;
        }
        for f in &names {
            let a = std::fs::read_to_string(base.join(f)).unwrap();
            let b = std::fs::read_to_string(dir.join(f)).unwrap();
            // reports echo their own output directory
            let b = b.replace(&dir.display().to_string(), &base.display().to_string());
            if a != b {
                mismatched.push(format!("{other}/{f}"));
            }
        }
    }
    Outcome {
        pass: mismatched.is_empty(),
        detail: if mismatched.is_empty() {
            format!("{} files from every stage byte-identical across 1-thread and 4-thread runs", names.len())
        } else {
            format!("differences: {}", mismatched.join(", "))
        },
    }
}

fn main() {
    let mut all = true;
    let t = Instant::now();
    all &= report(1, "closed-form oracles", t.elapsed(), Duration::from_secs(1), ac1());

    let t = Instant::now();
    all &= report(2, "noiseless recovery", t.elapsed(), Duration::from_secs(10), ac2());

    let t = Instant::now();
    let runs = recovery_runs();
    let o = ac3(&runs);
    all &= report(3, "posterior parameter recovery", t.elapsed(), Duration::from_secs(1200), o);

    let t = Instant::now();
    let o = ac4();
    all &= report(4, "degenerate-posterior HC5", t.elapsed(), Duration::from_secs(30), o);

    let t = Instant::now();
    let a = ac5a();
    let b = ac5b(&runs[0]);
    let c = ac5c(&runs);
    let elapsed = t.elapsed();
    let limit = Duration::from_secs(600);
    all &= report(5, "(a) EC10 vs EC50 intervals", elapsed, limit, a);
    all &= report(5, "(b) HC5 versus x", elapsed, limit, b);
    all &= report(5, "(c) positive rho detected", elapsed, limit, c);

    let t = Instant::now();
    let o = ac6();
    all &= report(6, "bootstrap coverage", t.elapsed(), Duration::from_secs(600), o);

    let t = Instant::now();
    let o = ac7();
    all &= report(7, "determinism", t.elapsed(), Duration::from_secs(600), o);

    if !all {
        std::process::exit(1);
    }
}
