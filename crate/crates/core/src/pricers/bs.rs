use super::{OptionKind, OptionSpec};
use crate::error::{Error, Result};
use crate::stats::{norm_cdf, norm_pdf};

fn d1_d2(spot: f64, opt: &OptionSpec, sigma: f64) -> (f64, f64) {
    let sd = sigma * opt.ttm.sqrt();
    let d1 = ((spot / opt.strike).ln() + (opt.rate + 0.5 * sigma * sigma) * opt.ttm) / sd;
    (d1, d1 - sd)
}

/// Black–Scholes price. At expiry this is the payoff; with `sigma <= 0` the
/// deterministic limit, the discounted intrinsic value `max(S − K e^{−rτ}, 0)`.
pub fn bs_price(spot: f64, opt: &OptionSpec, sigma: f64) -> Result<f64> {
    opt.check("bs_price", spot)?;
    if sigma.is_nan() {
        return Err(Error::domain("bs_price", "sigma is NaN"));
    }
    let df = opt.discount();
    if opt.ttm == 0.0 {
        return Ok(opt.kind.payoff(spot, opt.strike));
    }
    if sigma <= 0.0 {
        return Ok(opt.kind.payoff(spot, opt.strike * df));
    }
    let (d1, d2) = d1_d2(spot, opt, sigma);
    let k = opt.strike * df;
    Ok(match opt.kind {
        OptionKind::Call => spot * norm_cdf(d1) - k * norm_cdf(d2),
        OptionKind::Put => k * norm_cdf(-d2) - spot * norm_cdf(-d1),
    })
}

/// `(delta, gamma)` in currency units. Undefined at expiry.
pub fn bs_greeks(spot: f64, opt: &OptionSpec, sigma: f64) -> Result<(f64, f64)> {
    opt.check("bs_greeks", spot)?;
    if opt.ttm == 0.0 {
        return Err(Error::domain("bs_greeks", "ttm = 0: Greeks undefined at the payoff kink"));
    }
    if sigma.is_nan() {
        return Err(Error::domain("bs_greeks", "sigma is NaN"));
    }
    if sigma <= 0.0 {
        let itm = spot > opt.strike * opt.discount();
        let delta = match opt.kind {
            OptionKind::Call => f64::from(u8::from(itm)),
            OptionKind::Put => f64::from(u8::from(itm)) - 1.0,
        };
        return Ok((delta, 0.0));
    }
    let (d1, _) = d1_d2(spot, opt, sigma);
    let gamma = norm_pdf(d1) / (spot * sigma * opt.ttm.sqrt());
    let delta = match opt.kind {
        OptionKind::Call => norm_cdf(d1),
        OptionKind::Put => -norm_cdf(-d1),
    };
    Ok((delta, gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example_anchor() {
        let opt = OptionSpec::call(100.0, 0.36, 0.0);
        let p = bs_price(110.0, &opt, 0.125).unwrap();
        let (d, _) = bs_greeks(110.0, &opt, 0.125).unwrap();
        assert!((p - 10.38).abs() <= 0.01, "{p}");
        assert!((d - 0.90).abs() <= 0.005, "{d}");
    }

    #[test]
    fn expiry_and_degenerate_branches() {
        let at_expiry = OptionSpec::call(100.0, 0.0, 0.05);
        assert_eq!(bs_price(107.5, &at_expiry, 0.2).unwrap(), 7.5);
        assert_eq!(bs_price(90.0, &at_expiry, 0.2).unwrap(), 0.0);
        let opt = OptionSpec::call(100.0, 0.24, 0.0);
        assert_eq!(bs_price(120.0, &opt, 0.0).unwrap(), 20.0);
        assert!((bs_price(120.0, &opt, 1e-12).unwrap() - 20.0).abs() < 1e-12);
        assert!(bs_greeks(100.0, &at_expiry, 0.2).is_err());
    }

    #[test]
    fn deep_itm_delta() {
        let opt = OptionSpec::call(100.0, 0.25, 0.0);
        let (d, _) = bs_greeks(300.0, &opt, 0.1).unwrap();
        assert!((d - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let opt = OptionSpec::call(100.0, 0.25, 0.0);
        assert!(bs_price(-1.0, &opt, 0.2).is_err());
        assert!(bs_price(100.0, &OptionSpec::call(0.0, 0.25, 0.0), 0.2).is_err());
        assert!(bs_price(100.0, &OptionSpec::call(100.0, -0.1, 0.0), 0.2).is_err());
    }

    proptest! {
        #[test]
        fn put_call_parity(s in 50.0..150.0f64, k in 80.0..120.0f64, t in 0.01..2.0f64,
                           r in -0.02..0.1f64, sigma in 0.05..0.6f64) {
            let c = bs_price(s, &OptionSpec::call(k, t, r), sigma).unwrap();
            let p = bs_price(s, &OptionSpec::put(k, t, r), sigma).unwrap();
            prop_assert!((c - p - (s - k * (-r * t).exp())).abs() < 1e-10);
        }

        #[test]
        fn greeks_match_finite_differences(s in 70.0..130.0f64, k in 90.0..110.0f64,
                                           t in 0.1..1.0f64, sigma in 0.1..0.4f64,
                                           put in any::<bool>()) {
            let opt = if put { OptionSpec::put(k, t, 0.01) } else { OptionSpec::call(k, t, 0.01) };
            let h = 1e-4 * s;
            let p = |x: f64| bs_price(x, &opt, sigma).unwrap();
            // Central differences at h and h/2, Richardson-combined so the
            // O(h²) truncation term does not swamp the tolerance.
            let fd_d1 = |h: f64| (p(s + h) - p(s - h)) / (2.0 * h);
            let fd_d2 = |h: f64| (p(s + h) - 2.0 * p(s) + p(s - h)) / (h * h);
            let fd_d = (4.0 * fd_d1(0.5 * h) - fd_d1(h)) / 3.0;
            let fd_g = (4.0 * fd_d2(0.5 * h) - fd_d2(h)) / 3.0;
            let (d, g) = bs_greeks(s, &opt, sigma).unwrap();
            prop_assert!((d - fd_d).abs() <= 1e-6 * d.abs().max(0.05));
            prop_assert!((g - fd_g).abs() <= 1e-4 * g.abs().max(1e-3));
            if !put {
                prop_assert!(d > 0.0 && d < 1.0 && g > 0.0);
            }
        }

        #[test]
        fn call_monotone_convex_in_spot(k in 90.0..110.0f64, t in 0.05..1.0f64, sigma in 0.05..0.5f64) {
            let opt = OptionSpec::call(k, t, 0.0);
            let prices: Vec<f64> = (0..60).map(|i| bs_price(75.0 + i as f64, &opt, sigma).unwrap()).collect();
            for w in prices.windows(3) {
                prop_assert!(w[1] >= w[0] && w[2] >= w[1]);
                prop_assert!(w[2] - 2.0 * w[1] + w[0] >= -1e-10);
            }
        }
    }
}
