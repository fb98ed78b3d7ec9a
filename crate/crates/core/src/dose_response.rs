//! Three-parameter loglogistic concentration-response curves.
//!
//! The control level `d` is fixed from the control observations; `(b, e)` are
//! fitted by least squares on the natural-log scale. The optimizer works on
//! `(ln b, ln e)` so both stay positive.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bioassay::ResponsePoint;
use crate::error::{Error, Result};
use crate::optim::{coordinate_refine, nelder_mead, NelderMeadOptions};
use crate::rng::stream_rng;
use crate::scalar::{softplus, Scalar};
use crate::stats::{quantile_sorted, sort_floats};

/// Fitted slopes outside this range are treated as non-identified.
const B_RANGE: (f64, f64) = (1e-3, 1e3);
/// Fitted EC50s further than this factor outside the tested range are
/// treated as non-identified.
const E_RANGE_FACTOR: f64 = 1e3;
const B_STARTS: [f64; 3] = [0.3, 1.0, 3.0];
/// Smallest eigenvalue of the Gauss-Newton matrix, per point, below which
/// the optimum is a flat ridge rather than a minimum.
const MIN_CURVATURE_PER_POINT: f64 = 1e-6;

/// `d / (1 + (C/e)^b)`.
#[inline]
pub fn loglogistic<T: Scalar>(concentration: T, b: T, e: T, d: T) -> T {
    d / (T::one() + (concentration / e).powf(b))
}

/// `ln(d / (1 + (C/e)^b))` for `C > 0`, stable for extreme ratios.
#[inline]
pub fn ln_loglogistic<T: Scalar>(concentration: T, b: T, e: T, d: T) -> T {
    d.ln() - softplus(b * (concentration.ln() - e.ln()))
}

/// Concentration giving an `x`% reduction from control: `e (x/(100-x))^(1/b)`.
pub fn ec_x<T: Scalar>(b: T, e: T, x: T) -> Result<T> {
    let hundred = T::lit(100.0);
    if !(x > T::zero() && x < hundred) {
        return Err(Error::Domain(format!("effect level must lie in (0, 100), got {x}")));
    }
    Ok(e * (x / (hundred - x)).powf(b.recip()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveFit<T> {
    pub species_id: String,
    pub contaminant_id: String,
    pub b: T,
    pub e: T,
    pub d: T,
    /// Residual standard deviation on the ln scale, `sqrt(sse / (n - 2))`.
    pub sigma: T,
    pub sse: T,
    pub n_points: usize,
    pub converged: bool,
}

impl<T: Scalar> CurveFit<T> {
    pub fn ec_x(&self, x: T) -> Result<T> {
        ec_x(self.b, self.e, x)
    }

    pub fn predict(&self, concentration: T) -> T {
        loglogistic(concentration, self.b, self.e, self.d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcEstimate<T> {
    pub x: T,
    pub point: T,
    pub ci_low: T,
    pub ci_high: T,
    /// Resamples that produced a converged fit.
    pub n_boot: usize,
    pub n_failed: usize,
}

/// Residual sum of squares of the log-scale error model.
pub fn sse<T: Scalar>(points: &[ResponsePoint<T>], b: T, e: T, d: T) -> T {
    points
        .iter()
        .map(|p| {
            let r = p.y - ln_loglogistic(p.concentration, b, e, d);
            r * r
        })
        .sum()
}

fn distinct_concentrations<T: Scalar>(points: &[ResponsePoint<T>]) -> Vec<T> {
    let mut c: Vec<T> = points.iter().map(|p| p.concentration).collect();
    sort_floats(&mut c);
    c.dedup();
    c
}

/// Least-squares fit of `(b, e)` with `d` held fixed.
///
/// Nelder-Mead runs from a 3x3 grid of starts (`e` at the smallest, geometric
/// mean and largest tested concentration, `b` in {0.3, 1, 3}); the best
/// result is restarted once and polished by coordinate refinement.
/// `converged` is false when no start met the tolerance or when the optimum
/// drifted out of the identifiable region (flat or step-like data).
pub fn fit_curve<T: Scalar>(points: &[ResponsePoint<T>], d: T) -> Result<CurveFit<T>> {
    if !(d > T::zero()) {
        return Err(Error::Domain(format!("control level d must be positive, got {d}")));
    }
    if points.iter().any(|p| !(p.concentration > T::zero())) {
        return Err(Error::Domain("fit points need positive concentrations".into()));
    }
    let levels = distinct_concentrations(points);
    if levels.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} distinct concentrations, at least 3 required",
            levels.len()
        )));
    }

    let ln_c: Vec<T> = points.iter().map(|p| p.concentration.ln()).collect();
    let shifted: Vec<T> = points.iter().map(|p| p.y - d.ln()).collect();
    let objective = |theta: &[T]| -> T {
        let b = theta[0].exp();
        let ln_e = theta[1];
        ln_c.iter()
            .zip(&shifted)
            .map(|(&lc, &s)| {
                let r = s + softplus(b * (lc - ln_e));
                r * r
            })
            .sum()
    };

    let (c_min, c_max) = (levels[0], levels[levels.len() - 1]);
    let ln_gm = levels.iter().map(|c| c.ln()).sum::<T>() / T::from_count(levels.len());
    let opts = NelderMeadOptions::default();
    let mut best: Option<crate::optim::Minimum<T>> = None;
    for ln_e0 in [c_min.ln(), ln_gm, c_max.ln()] {
        for b0 in B_STARTS {
            let m = nelder_mead(&objective, &[T::lit(b0).ln(), ln_e0], &opts);
            let better = match &best {
                None => true,
                Some(cur) => m.f < cur.f,
            };
            if better {
                best = Some(m);
            }
        }
    }
    let first = best.expect("nine starts evaluated");
    let restart = nelder_mead(
        &objective,
        &first.x,
        &NelderMeadOptions {
            initial_step: T::lit(0.05),
            ..opts
        },
    );
    let polished_from = if restart.f <= first.f { &restart } else { &first };
    let polished = coordinate_refine(&objective, &polished_from.x, 500);
    let optimum = if polished.f <= polished_from.f {
        polished.x
    } else {
        polished_from.x.clone()
    };

    let (b, e) = (optimum[0].exp(), optimum[1].exp());
    let identified = b >= T::lit(B_RANGE.0)
        && b <= T::lit(B_RANGE.1)
        && e >= c_min / T::lit(E_RANGE_FACTOR)
        && e <= c_max * T::lit(E_RANGE_FACTOR);
    let curved = gauss_newton_min_eigenvalue(&ln_c, b, e.ln())
        >= T::lit(MIN_CURVATURE_PER_POINT) * T::from_count(points.len());
    let converged = first.converged && identified && curved && b.is_finite() && e.is_finite();
    let first_point = &points[0];
    if !converged {
        log::debug!(
            "loglogistic fit for {}/{} did not converge (b = {b}, e = {e})",
            first_point.species_id,
            first_point.contaminant_id
        );
    }
    let sse = sse(points, b, e, d);
    let n = points.len();
    Ok(CurveFit {
        species_id: first_point.species_id.clone(),
        contaminant_id: first_point.contaminant_id.clone(),
        b,
        e,
        d,
        sigma: (sse / T::from_count(n - 2)).sqrt(),
        sse,
        n_points: n,
        converged,
    })
}

/// Smallest eigenvalue of `J^T J`, `J` being the residual Jacobian with
/// respect to `(ln b, ln e)`.
fn gauss_newton_min_eigenvalue<T: Scalar>(ln_c: &[T], b: T, ln_e: T) -> T {
    let (mut aa, mut ab, mut bb) = (T::zero(), T::zero(), T::zero());
    for &lc in ln_c {
        let u = lc - ln_e;
        let z = b * u;
        let s = if z > T::zero() {
            T::one() / (T::one() + (-z).exp())
        } else {
            z.exp() / (T::one() + z.exp())
        };
        let j_lnb = b * u * s;
        let j_lne = -b * s;
        aa = aa + j_lnb * j_lnb;
        ab = ab + j_lnb * j_lne;
        bb = bb + j_lne * j_lne;
    }
    let half = T::lit(0.5);
    let mid = half * (aa + bb);
    let rad = ((half * (aa - bb)).powi(2) + ab * ab).sqrt();
    mid - rad
}

/// Indices of the points at each tested concentration.
fn strata<T: Scalar>(points: &[ResponsePoint<T>]) -> Vec<Vec<usize>> {
    let levels = distinct_concentrations(points);
    levels
        .iter()
        .map(|&c| {
            points
                .iter()
                .enumerate()
                .filter(|(_, p)| p.concentration == c)
                .map(|(i, _)| i)
                .collect()
        })
        .collect()
}

/// Bootstrap percentile intervals for EC_x at a single effect level.
pub fn bootstrap_ec<T: Scalar>(
    points: &[ResponsePoint<T>],
    d: T,
    x: T,
    n_boot: usize,
    seed: u64,
) -> Result<EcEstimate<T>> {
    Ok(bootstrap_ec_levels(points, d, &[x], n_boot, seed)?.remove(0))
}

/// Bootstrap percentile intervals for several effect levels from one set of
/// resamples.
///
/// Points are resampled with replacement within each concentration level
/// (each level keeps its replicate count) and refitted. Resamples whose fit
/// does not converge are dropped; more than half dropped is an error.
/// Resample `i` draws from stream `(seed, i)`, so the result is independent
/// of thread scheduling.
pub fn bootstrap_ec_levels<T: Scalar>(
    points: &[ResponsePoint<T>],
    d: T,
    xs: &[T],
    n_boot: usize,
    seed: u64,
) -> Result<Vec<EcEstimate<T>>> {
    if n_boot < 200 {
        return Err(Error::Config(format!("n_boot must be at least 200, got {n_boot}")));
    }
    let fit = fit_curve(points, d)?;
    if !fit.converged {
        return Err(Error::Numerical(format!(
            "original fit for {}/{} did not converge",
            fit.species_id, fit.contaminant_id
        )));
    }
    let points_ec: Vec<T> = xs.iter().map(|&x| fit.ec_x(x)).collect::<Result<_>>()?;
    let strata = strata(points);

    let replicates: Vec<Option<Vec<T>>> = (0..n_boot)
        .into_par_iter()
        .map(|i| {
            use rand::Rng;
            let mut rng = stream_rng(seed, i as u64);
            let resample: Vec<ResponsePoint<T>> = strata
                .iter()
                .flat_map(|idx| {
                    (0..idx.len())
                        .map(|_| points[idx[rng.random_range(0..idx.len())]].clone())
                        .collect::<Vec<_>>()
                })
                .collect();
            let refit = fit_curve(&resample, d).ok().filter(|f| f.converged)?;
            xs.iter().map(|&x| refit.ec_x(x).ok()).collect()
        })
        .collect();

    let n_failed = replicates.iter().filter(|r| r.is_none()).count();
    if 2 * n_failed > n_boot {
        return Err(Error::UnstableFit {
            failed: n_failed,
            total: n_boot,
        });
    }
    let ok: Vec<&Vec<T>> = replicates.iter().flatten().collect();
    Ok(xs
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let mut v: Vec<T> = ok.iter().map(|r| r[k]).collect();
            sort_floats(&mut v);
            let point = points_ec[k];
            EcEstimate {
                x,
                point,
                ci_low: quantile_sorted(&v, T::lit(0.025)).min(point),
                ci_high: quantile_sorted(&v, T::lit(0.975)).max(point),
                n_boot: ok.len(),
                n_failed,
            }
        })
        .collect())
}
