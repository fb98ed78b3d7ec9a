//! Classical species sensitivity distribution: a lognormal fitted by maximum
//! likelihood to one effect concentration per species.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::scalar::Scalar;
use crate::stats::{normal_cdf, normal_quantile, quantile_sorted, sort_floats};

/// Dropped degenerate resamples tolerated before the bootstrap fails.
const MAX_DROPPED_FRACTION: f64 = 0.2;

/// Lognormal SSD on the decimal-log scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LognormalSsd<T> {
    pub mu_log10: T,
    /// Maximum-likelihood (1/n) standard deviation of log10 values.
    pub sigma_log10: T,
    pub n_species: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HcEstimate<T> {
    pub p: T,
    pub point: T,
    pub ci_low: T,
    pub ci_high: T,
    pub n_boot: usize,
}

pub fn fit_lognormal<T: Scalar>(ecs: &[T]) -> Result<LognormalSsd<T>> {
    if ecs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} effect concentrations, at least 3 required",
            ecs.len()
        )));
    }
    if let Some(bad) = ecs.iter().find(|&&v| !(v > T::zero() && v.is_finite())) {
        return Err(Error::Domain(format!("effect concentrations must be positive, got {bad}")));
    }
    let logs: Vec<T> = ecs.iter().map(|v| v.log10()).collect();
    let n = T::from_count(logs.len());
    let mu = logs.iter().copied().sum::<T>() / n;
    let sigma = (logs.iter().map(|&l| (l - mu) * (l - mu)).sum::<T>() / n).sqrt();
    if !(sigma > T::zero()) {
        return Err(Error::Degenerate("all effect concentrations are equal".into()));
    }
    Ok(LognormalSsd {
        mu_log10: mu,
        sigma_log10: sigma,
        n_species: ecs.len(),
    })
}

/// Hazardous concentration for `p`% of species: `10^(mu + z_p sigma)`.
pub fn hc_p<T: Scalar>(ssd: &LognormalSsd<T>, p: T) -> Result<T> {
    let hundred = T::lit(100.0);
    if !(p > T::zero() && p < hundred) {
        return Err(Error::Domain(format!("p must lie in (0, 100), got {p}")));
    }
    let z = normal_quantile(p / hundred)?;
    Ok(T::lit(10.0).powf(ssd.mu_log10 + z * ssd.sigma_log10))
}

impl<T: Scalar> LognormalSsd<T> {
    /// Fraction of species with effect concentration at or below `c`.
    pub fn fraction_affected(&self, c: T) -> T {
        normal_cdf((c.log10() - self.mu_log10) / self.sigma_log10)
    }
}

/// Species-level case-resampling bootstrap of HC_p.
///
/// Zero-variance resamples are dropped; more than 20% dropped is an error.
pub fn bootstrap_hc<T: Scalar>(ecs: &[T], p: T, n_boot: usize, seed: u64) -> Result<HcEstimate<T>> {
    if n_boot < 1000 {
        return Err(Error::Config(format!("n_boot must be at least 1000, got {n_boot}")));
    }
    let point = hc_p(&fit_lognormal(ecs)?, p)?;
    let n = ecs.len();
    let draws: Vec<Option<T>> = (0..n_boot)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let resample: Vec<T> = (0..n).map(|_| ecs[rng.random_range(0..n)]).collect();
            fit_lognormal(&resample).ok().and_then(|s| hc_p(&s, p).ok())
        })
        .collect();
    let dropped = draws.iter().filter(|d| d.is_none()).count();
    if dropped as f64 > MAX_DROPPED_FRACTION * n_boot as f64 {
        return Err(Error::Degenerate(format!(
            "{dropped} of {n_boot} bootstrap resamples had zero variance"
        )));
    }
    let mut v: Vec<T> = draws.into_iter().flatten().collect();
    sort_floats(&mut v);
    Ok(HcEstimate {
        p,
        point,
        ci_low: quantile_sorted(&v, T::lit(0.025)).min(point),
        ci_high: quantile_sorted(&v, T::lit(0.975)).max(point),
        n_boot: v.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    // z_0.05 to 30 digits.
    const Z05: f64 = -1.644_853_626_951_472_714_863_848_907_99;

    #[test]
    fn symmetric_sample() {
        let s = fit_lognormal(&[10.0_f64, 100.0, 1000.0]).unwrap();
        assert!((s.mu_log10 - 2.0).abs() < 1e-12);
        assert!((s.sigma_log10 - (2.0_f64 / 3.0).sqrt()).abs() < 1e-12);
        let hc5 = hc_p(&s, 5.0).unwrap();
        assert!((hc5 - 10f64.powf(2.0 + Z05 * (2.0_f64 / 3.0).sqrt())).abs() / hc5 < 1e-12);
        assert!((hc5 - 4.53).abs() < 0.01);
    }

    #[test]
    fn errors() {
        assert!(matches!(fit_lognormal(&[100.0, 100.0, 100.0]), Err(Error::Degenerate(_))));
        assert!(matches!(fit_lognormal(&[1.0, 2.0]), Err(Error::InsufficientData(_))));
        assert!(matches!(fit_lognormal(&[1.0, -2.0, 3.0]), Err(Error::Domain(_))));
        let s = fit_lognormal(&[1.0, 2.0, 3.0]).unwrap();
        assert!(hc_p(&s, 0.0).is_err() && hc_p(&s, 100.0).is_err());
    }

    #[test]
    fn hc_values() {
        let s = LognormalSsd { mu_log10: 2.0, sigma_log10: 0.5, n_species: 10 };
        let hc5: f64 = hc_p(&s, 5.0).unwrap();
        assert!((hc5 - 10f64.powf(2.0 + Z05 * 0.5)).abs() / hc5 < 1e-12);
        assert!((hc5 - 15.051_271_387).abs() < 1e-6);
        assert!((hc_p(&s, 50.0).unwrap() - 100.0).abs() < 1e-12);
        let tight = LognormalSsd { sigma_log10: 1e-12, ..s };
        for p in [1.0, 5.0, 50.0, 95.0] {
            assert!((hc_p(&tight, p).unwrap() / 100.0 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn large_sample_recovers_parameters() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = Normal::new(2.0, 0.5).unwrap();
        let ecs: Vec<f64> = (0..10_000).map(|_| 10f64.powf(n.sample(&mut rng))).collect();
        let s = fit_lognormal(&ecs).unwrap();
        assert!((s.mu_log10 - 2.0).abs() < 0.02);
        assert!((s.sigma_log10 - 0.5).abs() < 0.02);
    }

    #[test]
    fn bootstrap_deterministic_and_ordered() {
        let ecs = [3.0, 12.0, 40.0, 55.0, 100.0, 230.0, 800.0];
        let a = bootstrap_hc(&ecs, 5.0, 1000, 7).unwrap();
        assert_eq!(a, bootstrap_hc(&ecs, 5.0, 1000, 7).unwrap());
        assert!(a.ci_low <= a.point && a.point <= a.ci_high && a.ci_low > 0.0);
    }

    #[test]
    fn bootstrap_degenerate_paths() {
        assert!(bootstrap_hc(&[5.0, 5.0, 5.0, 5.0], 5.0, 1000, 1).is_err());
        // Two distinct values among four: about 1/8 of resamples are constant.
        assert!(bootstrap_hc(&[5.0, 5.0, 5.0, 6.0], 5.0, 1000, 1).is_err());
        assert!(bootstrap_hc(&[1.0, 2.0, 3.0], 5.0, 999, 1).is_err());
    }

    #[test]
    fn fraction_affected_at_median() {
        let s = LognormalSsd { mu_log10: 1.0, sigma_log10: 0.3, n_species: 5 };
        assert!((s.fraction_affected(10.0_f64) - 0.5).abs() < 1e-14);
        assert!((s.fraction_affected(10f64.powf(1.0 + 0.3 * Z05)) - 0.05).abs() < 1e-11);
    }

    proptest! {
        #[test]
        fn hc_monotone(mu in -2.0..4.0f64, sigma in 0.05..2.0f64, p in 1.0..49.0f64) {
            let s = LognormalSsd { mu_log10: mu, sigma_log10: sigma, n_species: 5 };
            prop_assert!(hc_p(&s, p).unwrap() < hc_p(&s, p + 0.5).unwrap());
            let up = LognormalSsd { mu_log10: mu + 0.01, ..s };
            prop_assert!(hc_p(&s, p).unwrap() < hc_p(&up, p).unwrap());
            let wide = LognormalSsd { sigma_log10: sigma + 0.01, ..s };
            prop_assert!(hc_p(&wide, p).unwrap() < hc_p(&s, p).unwrap());
        }

        #[test]
        fn scale_and_permutation(ecs in prop::collection::vec(1e-2..1e4f64, 3..30), k in 1e-3..1e3f64) {
            prop_assume!(fit_lognormal(&ecs).is_ok());
            let base = hc_p(&fit_lognormal(&ecs).unwrap(), 5.0).unwrap();
            let scaled: Vec<f64> = ecs.iter().map(|v| v * k).collect();
            let hs = hc_p(&fit_lognormal(&scaled).unwrap(), 5.0).unwrap();
            prop_assert!((hs / (k * base) - 1.0).abs() < 1e-9);
            let mut rev = ecs.clone();
            rev.reverse();
            let r = fit_lognormal(&rev).unwrap();
            let f = fit_lognormal(&ecs).unwrap();
            prop_assert!((r.mu_log10 - f.mu_log10).abs() < 1e-12);
            prop_assert!((r.sigma_log10 - f.sigma_log10).abs() < 1e-12);
        }
    }
}
