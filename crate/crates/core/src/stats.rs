//! Small descriptive-statistics and normal-distribution helpers.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn mean<T: Scalar>(xs: &[T]) -> T {
    xs.iter().copied().sum::<T>() / T::from_count(xs.len())
}

/// Variance with divisor `n - ddof`.
pub fn variance<T: Scalar>(xs: &[T], ddof: usize) -> T {
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / T::from_count(xs.len() - ddof)
}

/// Percentile of already-sorted data by linear interpolation between order
/// statistics (`q` in `[0, 1]`).
pub fn quantile_sorted<T: Scalar>(sorted: &[T], q: T) -> T {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * T::from_count(n - 1);
    let lo = h.floor().to_usize().unwrap_or(0).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    let frac = h - T::from_count(lo);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Sorts a copy and returns the requested quantile.
pub fn quantile<T: Scalar>(xs: &[T], q: T) -> T {
    let mut v = xs.to_vec();
    sort_floats(&mut v);
    quantile_sorted(&v, q)
}

pub fn sort_floats<T: Scalar>(v: &mut [T]) {
    v.sort_unstable_by(|a, b| a.partial_cmp(b).expect("NaN in sample"));
}

/// (2.5%, 50%, 97.5%) summary of a sample.
pub fn central_interval<T: Scalar>(xs: &[T]) -> (T, T, T) {
    let mut v = xs.to_vec();
    sort_floats(&mut v);
    (
        quantile_sorted(&v, T::lit(0.025)),
        quantile_sorted(&v, T::lit(0.5)),
        quantile_sorted(&v, T::lit(0.975)),
    )
}

/// Standard normal quantile, Wichura's AS 241 (PPND16) rational approximation.
pub fn normal_quantile<T: Scalar>(p: T) -> Result<T> {
    if !(p > T::zero() && p < T::one()) {
        return Err(Error::Domain(format!("normal quantile needs 0 < p < 1, got {p}")));
    }
    Ok(T::lit(ppnd16(p.as_f64())))
}

#[allow(clippy::excessive_precision)]
fn ppnd16(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_608,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_9,
        5.769_497_221_460_691_405_5,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        2.417_807_251_774_506_117_7e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_4,
        6.897_673_349_851_000_045_5e-1,
        1.481_039_764_274_800_745_9e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2,
        5.463_784_911_164_114_369_9,
        1.784_826_539_917_291_335_8,
        2.965_605_718_285_048_912_3e-1,
        2.653_218_952_657_612_309_3e-2,
        1.242_660_947_388_078_438_6e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_9e-1,
        1.369_298_809_227_358_053_1e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];
    fn poly(c: &[f64; 8], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let z = if r <= 5.0 {
        r -= 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        r -= 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -z
    } else {
        z
    }
}

/// Standard normal CDF.
pub fn normal_cdf<T: Scalar>(z: T) -> T {
    T::lit(0.5 * statrs::function::erf::erfc(-z.as_f64() / std::f64::consts::SQRT_2))
}

/// Log-density of N(mean, sd) at `x`.
#[inline]
pub fn normal_ln_pdf<T: Scalar>(x: T, mean: T, sd: T) -> T {
    let z = (x - mean) / sd;
    -T::lit(0.5 * (2.0 * std::f64::consts::PI).ln()) - sd.ln() - T::lit(0.5) * z * z
}

#[cfg(test)]
mod tests {
    use super::*;

    // 30-digit reference values of the standard normal quantile.
    const REFERENCE: [(f64, f64); 9] = [
        (1e-10, -6.36134090240405620469535501582),
        (0.001, -3.09023230616781354154039983011),
        (0.01, -2.32634787404084110088560616335),
        (0.025, -1.95996398454005423552459443052),
        (0.05, -1.64485362695147271486384890799),
        (0.1, -1.28155156554460046696510332945),
        (0.5, 0.0),
        (0.9, 1.28155156554460046696510332945),
        (0.975, 1.95996398454005423552459443052),
    ];

    #[test]
    fn quantile_matches_high_precision_reference() {
        for (p, z) in REFERENCE {
            let got: f64 = normal_quantile(p).unwrap();
            assert!((got - z).abs() < 1e-12, "p={p}: {got} vs {z}");
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        for i in 1..200 {
            let p = i as f64 / 200.0;
            let z: f64 = normal_quantile(p).unwrap();
            // erfc from statrs is good to about 1e-11 absolute.
            assert!((normal_cdf(z) - p).abs() < 1e-10);
        }
    }

    #[test]
    fn quantile_rejects_boundaries() {
        assert!(normal_quantile(0.0_f64).is_err());
        assert!(normal_quantile(1.0_f64).is_err());
        assert!(normal_quantile(f64::NAN).is_err());
    }

    #[test]
    fn quantile_in_single_precision() {
        let z: f32 = normal_quantile(0.05_f32).unwrap();
        assert!((z + 1.644_853_6).abs() < 1e-5);
    }

    #[test]
    fn interpolated_percentiles() {
        let v = [1.0_f64, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 5.0);
        assert!((quantile_sorted(&v, 0.1) - 1.4).abs() < 1e-15);
    }

    #[test]
    fn variance_divisors() {
        let v = [1.0_f64, 2.0, 3.0, 4.0];
        assert!((variance(&v, 0) - 1.25).abs() < 1e-15);
        assert!((variance(&v, 1) - 5.0 / 3.0).abs() < 1e-15);
    }
}
