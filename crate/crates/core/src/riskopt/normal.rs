//! Standard normal CDF, its inverse, and the logistic upper bound used to
//! linearise chance constraints.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// `sqrt(pi / 8)`, the logistic scale that dominates the probit on [0.5, 1).
pub fn logit_scale() -> f64 {
    (PI / 8.0).sqrt()
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Upper tail `1 - Phi(x)` without cancellation.
pub fn std_normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

// Acklam's rational approximation, relative error below 1.2e-9.
const A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];
const P_LOW: f64 = 0.024_25;

fn acklam(p: f64) -> f64 {
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Inverse standard normal CDF on `(0, 1)`.
///
/// Rational approximation followed by one Newton step against the
/// erfc-based CDF. The residual is formed on the tail nearest to `p`.
pub fn inv_std_normal_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("probability {p} outside (0, 1)")));
    }
    let x = acklam(p);
    let resid = if p > 0.5 {
        (1.0 - p) - std_normal_sf(x)
    } else {
        std_normal_cdf(x) - p
    };
    let pdf = std_normal_pdf(x);
    if pdf == 0.0 {
        return Ok(x);
    }
    Ok(x - resid / pdf)
}

/// `sqrt(pi/8) * log(p / (1 - p))` on `[0.5, 1)`; never below the probit.
pub fn logit_bound(p: f64) -> Result<f64> {
    if !(p >= 0.5 && p < 1.0) {
        return Err(Error::Domain(format!(
            "logit bound needs p in [0.5, 1), got {p}"
        )));
    }
    Ok(logit_bound_unchecked(p))
}

pub(crate) fn logit_bound_unchecked(p: f64) -> f64 {
    logit_scale() * (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bisection on statrs' erfc, independent of this module. Upper
    /// quantiles bisect the survival function against `1 - p` so the
    /// comparison keeps full precision in the tail.
    fn bisect_quantile(p: f64) -> f64 {
        use statrs::function::erf::erfc;
        let upper = p > 0.5;
        let target = if upper { 1.0 - p } else { p };
        let lower_tail = |x: f64| 0.5 * erfc(-x / SQRT_2);
        let (mut lo, mut hi) = (-40.0, 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if lower_tail(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x = 0.5 * (lo + hi);
        if upper {
            -x
        } else {
            x
        }
    }

    #[test]
    fn median_is_zero() {
        assert_eq!(inv_std_normal_cdf(0.5).unwrap(), 0.0);
    }

    #[test]
    fn quantile_975() {
        let oracle = bisect_quantile(0.975);
        assert_close!(oracle, 1.959_96, 1e-5);
        assert_close!(inv_std_normal_cdf(0.975).unwrap(), oracle, 1e-9);
    }

    #[test]
    fn round_trip_on_grid() {
        for i in 1..10_000 {
            let p = i as f64 / 10_000.0;
            let x = inv_std_normal_cdf(p).unwrap();
            assert!((std_normal_cdf(x) - p).abs() <= 1e-9, "p = {p}");
        }
    }

    #[test]
    fn matches_bisection_in_tails() {
        for p in [1e-12, 1e-8, 1e-4, 0.01, 0.3, 0.7, 0.99, 1.0 - 1e-6, 1.0 - 1e-10] {
            assert_close!(inv_std_normal_cdf(p).unwrap(), bisect_quantile(p), 1e-9);
        }
    }

    #[test]
    fn rejects_out_of_domain() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(inv_std_normal_cdf(p), Err(Error::Domain(_))));
        }
        assert!(matches!(logit_bound(0.49), Err(Error::Domain(_))));
        assert!(matches!(logit_bound(1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn logit_bound_values() {
        assert_eq!(logit_bound(0.5).unwrap(), 0.0);
        let b = logit_bound(0.9).unwrap();
        assert_close!(b, 0.626_657 * 9f64.ln(), 1e-5);
        assert_close!(b, 1.377, 1e-3);
        assert!(b >= inv_std_normal_cdf(0.9).unwrap());
        assert_close!(inv_std_normal_cdf(0.9).unwrap(), 1.281_55, 1e-5);
    }
}
