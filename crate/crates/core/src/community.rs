//! Posterior-predictive communities: global response, GEC_x and the
//! hierarchical SSD.
//!
//! Every posterior draw used here gets its own random stream keyed by its
//! position in the selection, so results do not depend on thread scheduling.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classical_ssd::HcEstimate;
use crate::error::{Error, Result};
use crate::posterior::{HyperParams, PosteriorSample};
use crate::rng::{derive_seed, stream_rng, StreamRng};
use crate::scalar::{softplus, Scalar};
use crate::stats::{central_interval, quantile_sorted, sort_floats};

/// Bisection stops once the bracket is this narrow on the ln C scale.
const ROOT_TOL: f64 = 1e-10;
/// Bracket expansion gives up after this many decades either side.
const MAX_BRACKET_DECADES: usize = 20;

/// One simulated community: `(b, e)` per species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityDraw<T> {
    pub theta: HyperParams<T>,
    pub species: Vec<(T, T)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandKind {
    GlobalResponse,
    SsdFractionAffected,
    Hc5VsX,
}

impl BandKind {
    pub fn name(self) -> &'static str {
        match self {
            BandKind::GlobalResponse => "global_response",
            BandKind::SsdFractionAffected => "ssd_fraction_affected",
            BandKind::Hc5VsX => "hc5_vs_x",
        }
    }

    fn units(self) -> (&'static str, &'static str) {
        match self {
            BandKind::GlobalResponse => ("concentration", "r_tot (fraction of control)"),
            BandKind::SsdFractionAffected => ("concentration", "fraction of species affected"),
            BandKind::Hc5VsX => ("x (percent effect)", "concentration"),
        }
    }
}

/// Pointwise 2.5%, 50% and 97.5% posterior-predictive percentiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBand<T> {
    pub kind: BandKind,
    pub grid: Vec<T>,
    pub lo: Vec<T>,
    pub median: Vec<T>,
    pub hi: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GecEstimate<T> {
    pub x: T,
    pub point: T,
    pub ci_low: T,
    pub ci_high: T,
    pub n_theta: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    /// Posterior draws to simulate from.
    pub n_theta: usize,
    /// Species per community.
    pub n_species: usize,
    pub grid_points: usize,
    pub seed: u64,
}

/// Posterior draws selected for simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaSelection<T> {
    pub draws: Vec<HyperParams<T>>,
    /// Set when the posterior had fewer retained draws than requested.
    pub with_replacement: bool,
    /// Tested concentration range, used for the simulation grid.
    pub concentration_range: (T, T),
}

/// Picks `n_theta` draws from the pooled chains: evenly spaced when there
/// are enough, otherwise uniformly with replacement.
pub fn select_thetas<T: Scalar>(
    posterior: &PosteriorSample<T>,
    n_theta: usize,
    seed: u64,
) -> Result<ThetaSelection<T>> {
    let pooled = posterior.pooled_hyper();
    if pooled.is_empty() {
        return Err(Error::InsufficientData("posterior has no draws".into()));
    }
    if n_theta == 0 {
        return Err(Error::Config("number of posterior draws to simulate must be positive".into()));
    }
    let with_replacement = pooled.len() < n_theta;
    let draws = if with_replacement {
        let mut rng = stream_rng(derive_seed(seed, "theta-selection"), 0);
        (0..n_theta)
            .map(|_| pooled[rng.random_range(0..pooled.len())])
            .collect()
    } else {
        (0..n_theta).map(|k| pooled[k * pooled.len() / n_theta]).collect()
    };
    Ok(ThetaSelection {
        draws,
        with_replacement,
        concentration_range: posterior.concentration_range,
    })
}

fn normal<T: Scalar>(rng: &mut StreamRng) -> T {
    T::lit(rng.sample::<f64, _>(StandardNormal))
}

/// Decimal-log curve parameters of one species drawn from `theta`.
fn draw_log_pair<T: Scalar>(theta: &HyperParams<T>, rng: &mut StreamRng) -> (T, T) {
    let z1: T = normal(rng);
    let z2: T = normal(rng);
    let l21 = theta.rho * theta.sigma_loge;
    let l22 = theta.sigma_loge * (T::one() - theta.rho * theta.rho).sqrt();
    (theta.mu_logb + theta.sigma_logb * z1, theta.mu_loge + l21 * z1 + l22 * z2)
}

/// Draws `n_species` curves from the community distribution of `theta`.
pub fn draw_community<T: Scalar>(
    theta: &HyperParams<T>,
    n_species: usize,
    rng: &mut StreamRng,
) -> CommunityDraw<T> {
    let ten = T::lit(10.0);
    let species = (0..n_species)
        .map(|_| {
            let (lb, le) = draw_log_pair(theta, rng);
            (ten.powf(lb), ten.powf(le))
        })
        .collect();
    CommunityDraw {
        theta: *theta,
        species,
    }
}

/// Mean over species of `R_i(C) / R_i(0) = 1 / (1 + (C/e_i)^b_i)`.
pub fn r_tot<T: Scalar>(community: &CommunityDraw<T>, concentration: T) -> T {
    if concentration <= T::zero() {
        return T::one();
    }
    let ln_c = concentration.ln();
    let total: T = community
        .species
        .iter()
        .map(|&(b, e)| (-softplus(b * (ln_c - e.ln()))).exp())
        .sum();
    total / T::from_count(community.species.len())
}

/// Concentration at which `r_tot` has dropped by `x`% (bisection on ln C).
pub fn solve_gec<T: Scalar>(community: &CommunityDraw<T>, x: T) -> Result<T> {
    check_percent(x)?;
    if community.species.is_empty() {
        return Err(Error::InsufficientData("empty community".into()));
    }
    let target = T::one() - x / T::lit(100.0);
    let f = |ln_c: T| r_tot(community, ln_c.exp()) - target;
    let n = T::from_count(community.species.len());
    let centre = community.species.iter().map(|&(_, e)| e.ln()).sum::<T>() / n;
    let step = T::ln_10();
    let (mut lo, mut hi) = (centre, centre);
    let mut k = 0;
    while f(lo) <= T::zero() {
        k += 1;
        if k > MAX_BRACKET_DECADES {
            return Err(Error::Numerical(format!("GEC{x} lies below the bracket")));
        }
        lo = lo - step;
    }
    k = 0;
    while f(hi) >= T::zero() {
        k += 1;
        if k > MAX_BRACKET_DECADES {
            return Err(Error::Numerical(format!("GEC{x} lies above the bracket")));
        }
        hi = hi + step;
    }
    let tol = T::lit(ROOT_TOL);
    while hi - lo > tol {
        let mid = (lo + hi) / T::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(((lo + hi) / T::lit(2.0)).exp())
}

fn check_percent<T: Scalar>(x: T) -> Result<()> {
    if x > T::zero() && x < T::lit(100.0) {
        Ok(())
    } else {
        Err(Error::Domain(format!("effect level must lie in (0, 100), got {x}")))
    }
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid<T: Scalar>(lo: T, hi: T, n: usize) -> Vec<T> {
    let (a, b) = (lo.ln(), hi.ln());
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|k| (a + (b - a) * T::from_count(k) / T::from_count(n - 1)).exp())
        .collect()
}

/// Simulation grid: two decades beyond the tested range on each side.
pub fn concentration_grid<T: Scalar>(range: (T, T), n: usize) -> Vec<T> {
    let hundred = T::lit(100.0);
    log_grid(range.0 / hundred, range.1 * hundred, n)
}

fn band_from_rows<T: Scalar>(kind: BandKind, grid: Vec<T>, rows: &[Vec<T>]) -> CurveBand<T> {
    let mut band = CurveBand {
        kind,
        lo: Vec::with_capacity(grid.len()),
        median: Vec::with_capacity(grid.len()),
        hi: Vec::with_capacity(grid.len()),
        grid,
    };
    let mut column = Vec::with_capacity(rows.len());
    for g in 0..band.grid.len() {
        column.clear();
        column.extend(rows.iter().map(|r| r[g]));
        let (lo, med, hi) = central_interval(&column);
        band.lo.push(lo);
        band.median.push(med);
        band.hi.push(hi);
    }
    band
}

fn validate(sel_len: usize, opts: &SimulationOptions) -> Result<()> {
    if sel_len == 0 || opts.n_species == 0 || opts.grid_points < 2 {
        return Err(Error::Config(
            "simulation needs at least one draw, one species and two grid points".into(),
        ));
    }
    Ok(())
}

/// GEC_x from one simulated community per posterior draw, plus the
/// pointwise band of `r_tot` over the concentration grid.
pub fn gec_x<T: Scalar>(
    selection: &ThetaSelection<T>,
    x: T,
    opts: &SimulationOptions,
) -> Result<(GecEstimate<T>, CurveBand<T>)> {
    check_percent(x)?;
    validate(selection.draws.len(), opts)?;
    let grid = concentration_grid(selection.concentration_range, opts.grid_points);
    let seed = derive_seed(opts.seed, "global-response");
    let per_theta = selection
        .draws
        .par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let mut rng = stream_rng(seed, i as u64);
            let community = draw_community(theta, opts.n_species, &mut rng);
            let gec = solve_gec(&community, x)
                .map_err(|e| Error::Numerical(format!("posterior draw {i}: {e}")))?;
            let curve: Vec<T> = grid.iter().map(|&c| r_tot(&community, c)).collect();
            Ok((gec, curve))
        })
        .collect::<Result<Vec<_>>>()?;
    let gecs: Vec<T> = per_theta.iter().map(|(g, _)| *g).collect();
    let curves: Vec<Vec<T>> = per_theta.into_iter().map(|(_, c)| c).collect();
    let (ci_low, point, ci_high) = central_interval(&gecs);
    Ok((
        GecEstimate {
            x,
            point,
            ci_low,
            ci_high,
            n_theta: gecs.len(),
        },
        band_from_rows(BandKind::GlobalResponse, grid, &curves),
    ))
}

/// EC_x of every species in a large community, written into `buf`.
fn fill_ecx<T: Scalar>(log_pairs: &[(T, T)], x: T, buf: &mut Vec<T>) {
    let ln_odds = (x / (T::lit(100.0) - x)).ln();
    let ln10 = T::ln_10();
    buf.clear();
    buf.extend(
        log_pairs
            .iter()
            .map(|&(lb, le)| (le * ln10 + ln_odds / T::lit(10.0).powf(lb)).exp()),
    );
}

/// Same value as [`quantile_sorted`] on the sorted data, by selection.
fn quantile_select<T: Scalar>(v: &mut [T], q: T) -> T {
    let n = v.len();
    if n == 1 {
        return v[0];
    }
    let h = q * T::from_count(n - 1);
    let lo = h.floor().to_usize().unwrap_or(0).min(n - 1);
    let frac = h - T::from_count(lo);
    let (_, &mut v_lo, right) =
        v.select_nth_unstable_by(lo, |a, b| a.partial_cmp(b).expect("NaN in sample"));
    let v_hi = right.iter().copied().fold(T::infinity(), T::min);
    let v_hi = if v_hi.is_finite() { v_hi } else { v_lo };
    v_lo + frac * (v_hi - v_lo)
}

fn draw_log_pairs<T: Scalar>(theta: &HyperParams<T>, n: usize, seed: u64, index: usize) -> Vec<(T, T)> {
    let mut rng = stream_rng(seed, index as u64);
    (0..n).map(|_| draw_log_pair(theta, &mut rng)).collect()
}

/// Hierarchical SSD on EC_x: per posterior draw, a large community's EC_x
/// distribution, its `p`-th percentile (HC_p) and the fraction of species
/// affected along the concentration grid.
pub fn hierarchical_ssd<T: Scalar>(
    selection: &ThetaSelection<T>,
    x: T,
    p: T,
    opts: &SimulationOptions,
) -> Result<(CurveBand<T>, HcEstimate<T>)> {
    check_percent(x)?;
    check_percent(p)?;
    validate(selection.draws.len(), opts)?;
    let grid = concentration_grid(selection.concentration_range, opts.grid_points);
    let seed = derive_seed(opts.seed, "large-community");
    let q = p / T::lit(100.0);
    let per_theta: Vec<(T, Vec<T>)> = selection
        .draws
        .par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let pairs = draw_log_pairs(theta, opts.n_species, seed, i);
            let mut ecs = Vec::with_capacity(pairs.len());
            fill_ecx(&pairs, x, &mut ecs);
            sort_floats(&mut ecs);
            let n = T::from_count(ecs.len());
            let fraction: Vec<T> = grid
                .iter()
                .map(|&c| T::from_count(ecs.partition_point(|&v| v <= c)) / n)
                .collect();
            (quantile_sorted(&ecs, q), fraction)
        })
        .collect();
    let hcs: Vec<T> = per_theta.iter().map(|(h, _)| *h).collect();
    let rows: Vec<Vec<T>> = per_theta.into_iter().map(|(_, f)| f).collect();
    let (ci_low, point, ci_high) = central_interval(&hcs);
    Ok((
        band_from_rows(BandKind::SsdFractionAffected, grid, &rows),
        HcEstimate {
            p,
            point,
            ci_low,
            ci_high,
            n_boot: hcs.len(),
        },
    ))
}

/// HC_p as a function of the effect level, re-using each posterior draw's
/// community across all levels. With the same selection and options, the
/// value at any `x` equals [`hierarchical_ssd`] at that `x`.
pub fn hc5_vs_x<T: Scalar>(
    selection: &ThetaSelection<T>,
    x_grid: &[T],
    p: T,
    opts: &SimulationOptions,
) -> Result<CurveBand<T>> {
    check_percent(p)?;
    for &x in x_grid {
        check_percent(x)?;
    }
    if x_grid.windows(2).any(|w| w[1] <= w[0]) || x_grid.is_empty() {
        return Err(Error::Config("effect-level grid must be non-empty and strictly increasing".into()));
    }
    validate(selection.draws.len(), opts)?;
    let seed = derive_seed(opts.seed, "large-community");
    let q = p / T::lit(100.0);
    let rows: Vec<Vec<T>> = selection
        .draws
        .par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let pairs = draw_log_pairs(theta, opts.n_species, seed, i);
            let mut ecs = Vec::with_capacity(pairs.len());
            x_grid
                .iter()
                .map(|&x| {
                    fill_ecx(&pairs, x, &mut ecs);
                    quantile_select(&mut ecs, q)
                })
                .collect()
        })
        .collect();
    Ok(band_from_rows(BandKind::Hc5VsX, x_grid.to_vec(), &rows))
}

/// Writes a band as CSV preceded by a `#` line naming its kind and units.
pub fn write_band<W: Write>(writer: W, band: &CurveBand<f64>) -> Result<()> {
    let mut w = writer;
    let (grid_units, value_units) = band.kind.units();
    writeln!(
        w,
        "# kind={}; grid_value={}; lo,median,hi={}",
        band.kind.name(),
        grid_units,
        value_units
    )
    .map_err(|e| Error::io("<band writer>", e))?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["grid_value", "lo", "median", "hi"])?;
    for i in 0..band.grid.len() {
        wtr.write_record(&[
            band.grid[i].to_string(),
            band.lo[i].to_string(),
            band.median[i].to_string(),
            band.hi[i].to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<band writer>", e))?;
    Ok(())
}

pub fn read_band<R: Read>(reader: R, kind: BandKind) -> Result<CurveBand<f64>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let mut band = CurveBand {
        kind,
        grid: Vec::new(),
        lo: Vec::new(),
        median: Vec::new(),
        hi: Vec::new(),
    };
    for rec in rdr.deserialize::<(f64, f64, f64, f64)>() {
        let (g, lo, med, hi) = rec?;
        band.grid.push(g);
        band.lo.push(lo);
        band.median.push(med);
        band.hi.push(hi);
    }
    Ok(band)
}
