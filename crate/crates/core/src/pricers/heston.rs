use num_complex::Complex64;

use super::{OptionKind, OptionSpec, QuadratureConfig};
use crate::error::{Error, Result};
use crate::market_sim::{validate_heston, HestonParams};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// ln(1 + z) without losing digits for tiny |z|.
fn ln_1p(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        z * (1.0 - z * (0.5 - z * (1.0 / 3.0 - z * 0.25)))
    } else {
        (1.0 + z).ln()
    }
}

/// `C(T, u)·θ + D(T, u)·ν₀` for complex `u`, stable branch. `β − d` is formed
/// as `−ξ²(iu + u²)/(β + d)` so the ξ → 0 limit stays accurate.
fn cd_exponent(p: &HestonParams, t: f64, u: Complex64) -> Complex64 {
    let xi2 = p.xi * p.xi;
    let beta = p.kappa - p.rho * p.xi * I * u;
    let q = I * u + u * u;
    let d = (beta * beta + xi2 * q).sqrt();
    let bpd = beta + d;
    let neg = -q / bpd; // (β − d)/ξ²
    let g = neg * xi2 / bpd;
    let e = (-d * t).exp();
    let one_minus_e = 1.0 - e;
    let dd = neg * one_minus_e / (1.0 - g * e);
    // ln((1 − g e)/(1 − g)) = ln(1 + g(1 − e)/(1 − g)); with (β − d) = ξ²·neg
    // this gives C = κ[neg·T − 2/ξ² · ln(...)], and g/ξ² = neg/(β + d).
    let z = g * one_minus_e / (1.0 - g);
    let log_term = if xi2 > 0.0 {
        if z.norm() < 1e-4 {
            // ln(1+z)/ξ² with z = ξ²·w
            let w = neg / bpd * one_minus_e / (1.0 - g);
            w * (1.0 - z * (0.5 - z * (1.0 / 3.0 - z * 0.25)))
        } else {
            ln_1p(z) / xi2
        }
    } else {
        neg / bpd * one_minus_e
    };
    let cc = p.kappa * (neg * t - 2.0 * log_term);
    cc * p.theta + dd * p.v0
}

/// Heston call/put engine at a fixed maturity and rate, with the
/// spot-independent part of the characteristic function cached at the
/// quadrature nodes.
#[derive(Debug, Clone)]
pub struct HestonCf {
    ttm: f64,
    rate: f64,
    omegas: Vec<f64>,
    /// Weighted Π₁ and Π₂ integrand coefficients; Π_j = ½ + Σ Re[e^{iωx}·a_j].
    a1: Vec<Complex64>,
    a2: Vec<Complex64>,
}

impl HestonCf {
    pub fn new(p: &HestonParams, ttm: f64, rate: f64, q: &QuadratureConfig) -> Result<Self> {
        validate_heston(p)?;
        if !(ttm > 0.0 && ttm.is_finite()) {
            return Err(Error::domain("heston_price_cf", format!("ttm = {ttm} must be positive")));
        }
        if !rate.is_finite() {
            return Err(Error::domain("heston_price_cf", "rate is not finite"));
        }
        let nodes = q.nodes()?;
        let mut omegas = Vec::with_capacity(nodes.len());
        let mut a1 = Vec::with_capacity(nodes.len());
        let mut a2 = Vec::with_capacity(nodes.len());
        let pi = std::f64::consts::PI;
        for (w_node, weight) in nodes {
            let u = Complex64::new(w_node, 0.0);
            // ψ(u) = Ψ(u)·e^{−iu ln S}; Ψ(−i) = S e^{rT}.
            let psi2 = (cd_exponent(p, ttm, u) + I * u * rate * ttm).exp();
            let u1 = u - I;
            let psi1 = (cd_exponent(p, ttm, u1) + I * u1 * rate * ttm - rate * ttm).exp();
            let scale = weight / (pi * I * w_node);
            omegas.push(w_node);
            a1.push(psi1 * scale);
            a2.push(psi2 * scale);
        }
        Ok(HestonCf {
            ttm,
            rate,
            omegas,
            a1,
            a2,
        })
    }

    pub fn ttm(&self) -> f64 {
        self.ttm
    }

    /// `(Π₁, Π₂)` at log-moneyness `x = ln(S/K)`.
    pub fn probabilities(&self, x: f64) -> Result<(f64, f64)> {
        let (mut s1, mut s2) = (0.0, 0.0);
        for ((&w, a1), a2) in self.omegas.iter().zip(&self.a1).zip(&self.a2) {
            let (sn, cs) = (w * x).sin_cos();
            s1 += cs * a1.re - sn * a1.im;
            s2 += cs * a2.re - sn * a2.im;
        }
        let (p1, p2) = (0.5 + s1, 0.5 + s2);
        for (name, v) in [("Π₁", p1), ("Π₂", p2)] {
            if !(-0.01..=1.01).contains(&v) {
                return Err(Error::Integration(format!("{name} = {v} outside [−0.01, 1.01] at x = {x}")));
            }
        }
        Ok((p1, p2))
    }

    pub fn price(&self, spot: f64, strike: f64, kind: OptionKind) -> Result<f64> {
        let opt = OptionSpec {
            strike,
            ttm: self.ttm,
            rate: self.rate,
            kind,
        };
        opt.check("heston_price_cf", spot)?;
        let (p1, p2) = self.probabilities((spot / strike).ln())?;
        let k = strike * opt.discount();
        let call = spot * p1 - k * p2;
        Ok(match kind {
            OptionKind::Call => call,
            OptionKind::Put => call - spot + k,
        })
    }

    /// `(price, delta, gamma)` by central differences with `h = bump_rel·spot`.
    pub fn greeks_bump(&self, spot: f64, strike: f64, kind: OptionKind, bump_rel: f64) -> Result<(f64, f64, f64)> {
        if !(1e-5..=1e-2).contains(&bump_rel) {
            return Err(Error::domain("heston_greeks_bump", format!("bump_rel = {bump_rel} outside [1e-5, 1e-2]")));
        }
        let h = bump_rel * spot;
        let c0 = self.price(spot, strike, kind)?;
        let up = self.price(spot + h, strike, kind)?;
        let dn = self.price(spot - h, strike, kind)?;
        Ok((c0, (up - dn) / (2.0 * h), (up - 2.0 * c0 + dn) / (h * h)))
    }
}

/// Heston price from the Π₁/Π₂ characteristic-function integrals.
pub fn heston_price_cf(spot: f64, opt: &OptionSpec, p: &HestonParams, q: &QuadratureConfig) -> Result<f64> {
    opt.check("heston_price_cf", spot)?;
    HestonCf::new(p, opt.ttm, opt.rate, q)?.price(spot, opt.strike, opt.kind)
}

/// `(delta, gamma)` by central spot bumps of [`heston_price_cf`].
pub fn heston_greeks_bump(
    spot: f64,
    opt: &OptionSpec,
    p: &HestonParams,
    q: &QuadratureConfig,
    bump_rel: f64,
) -> Result<(f64, f64)> {
    opt.check("heston_greeks_bump", spot)?;
    let (_, d, g) = HestonCf::new(p, opt.ttm, opt.rate, q)?.greeks_bump(spot, opt.strike, opt.kind, bump_rel)?;
    Ok((d, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricers::{bs_greeks, bs_price};
    use proptest::prelude::*;

    fn paper() -> HestonParams {
        HestonParams::default()
    }

    fn near_bs() -> HestonParams {
        HestonParams {
            xi: 1e-6,
            ..paper()
        }
    }

    #[test]
    fn cf_is_normalised() {
        // Ψ(0) = 1 and the martingale point Ψ(−i) = S e^{rT} (here without the S part).
        for p in [paper(), near_bs()] {
            let z0 = cd_exponent(&p, 0.3, Complex64::new(0.0, 0.0));
            let zi = cd_exponent(&p, 0.3, -I);
            assert!(z0.norm() < 1e-14 && zi.norm() < 1e-14);
        }
    }

    #[test]
    fn reduces_to_black_scholes() {
        let q = QuadratureConfig::default();
        for &k in &[80.0, 90.0, 100.0, 110.0, 125.0] {
            for &t in &[0.12, 0.24, 0.48] {
                let opt = OptionSpec::call(k, t, 0.0);
                let h = heston_price_cf(100.0, &opt, &near_bs(), &q).unwrap();
                let b = bs_price(100.0, &opt, 0.15).unwrap();
                assert!((h - b).abs() < 1e-3, "K={k} T={t}: {h} vs {b}");
                let (hd, hg) = heston_greeks_bump(100.0, &opt, &near_bs(), &q, 1e-3).unwrap();
                let (bd, bg) = bs_greeks(100.0, &opt, 0.15).unwrap();
                assert!((hd - bd).abs() < 1e-4, "delta {hd} vs {bd}");
                assert!((hg - bg).abs() < 1e-2 * bg.max(1e-3), "gamma {hg} vs {bg}");
            }
        }
    }

    #[test]
    fn stable_under_refinement() {
        let base = QuadratureConfig::default();
        let fine = QuadratureConfig {
            upper_limit: 400.0,
            n_nodes: 512,
            ..base
        };
        for xi in [0.125, 0.15, 0.175] {
            let p = HestonParams { xi, ..paper() };
            for &k in &[90.0, 100.0, 110.0] {
                for &t in &[0.24, 0.36, 0.48] {
                    let opt = OptionSpec::call(k, t, 0.0);
                    let a = heston_price_cf(100.0, &opt, &p, &base).unwrap();
                    let b = heston_price_cf(100.0, &opt, &p, &fine).unwrap();
                    assert!((a - b).abs() < 1e-6, "xi={xi} K={k} T={t}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn greeks_sane_on_paper_grid() {
        let q = QuadratureConfig::default();
        for xi in [0.125, 0.15, 0.175] {
            let p = HestonParams { xi, ..paper() };
            for k in 90..=110 {
                let opt = OptionSpec::call(k as f64, 0.24, 0.0);
                let (d, g) = heston_greeks_bump(100.0, &opt, &p, &q, 1e-3).unwrap();
                assert!(d > 0.0 && d < 1.0, "delta {d}");
                assert!(g > 0.0, "gamma {g}");
            }
        }
    }

    #[test]
    fn bump_outside_range_rejected() {
        let opt = OptionSpec::call(100.0, 0.24, 0.0);
        let q = QuadratureConfig::default();
        assert!(heston_greeks_bump(100.0, &opt, &paper(), &q, 0.1).is_err());
        assert!(heston_greeks_bump(100.0, &opt, &paper(), &q, 1e-6).is_err());
    }

    #[test]
    fn coarse_quadrature_flags_integration_failure() {
        let q = QuadratureConfig {
            upper_limit: 1e4,
            n_nodes: 32,
            small_omega_offset: 1e-8,
        };
        let opt = OptionSpec::call(100.0, 0.01, 0.0);
        for s in [120.0, 150.0] {
            let err = heston_price_cf(s, &opt, &near_bs(), &q);
            assert!(matches!(err, Err(Error::Integration(_))), "{err:?}");
        }
    }

    #[test]
    fn feller_violation_propagates() {
        let p = HestonParams { xi: 0.3, ..paper() };
        let opt = OptionSpec::call(100.0, 0.24, 0.0);
        assert!(matches!(
            heston_price_cf(100.0, &opt, &p, &QuadratureConfig::default()),
            Err(Error::Heston(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn put_call_parity(s in 80.0..120.0f64, k in 90.0..110.0f64, t in 0.1..1.0f64,
                           r in 0.0..0.05f64, kappa in 0.8..3.0f64, theta in 0.01..0.06f64,
                           rho in -0.9..0.3f64, v0 in 0.01..0.06f64, frac in 0.05..0.9f64) {
            let xi = (2.0 * kappa * theta * frac).sqrt();
            let p = HestonParams { mu: 0.0, kappa, theta, xi, rho, v0, s0: 100.0 };
            let q = QuadratureConfig::default();
            let c = heston_price_cf(s, &OptionSpec::call(k, t, r), &p, &q).unwrap();
            let pp = heston_price_cf(s, &OptionSpec::put(k, t, r), &p, &q).unwrap();
            prop_assert!((c - pp - (s - k * (-r * t).exp())).abs() < 1e-6);
            prop_assert!(c >= (s - k * (-r * t).exp()).max(0.0) - 1e-6);
        }

        #[test]
        fn convex_and_monotone_in_spot(k in 90.0..110.0f64, xi in 0.1..0.2f64) {
            let p = HestonParams { xi, ..paper() };
            let cf = HestonCf::new(&p, 0.36, 0.0, &QuadratureConfig::default()).unwrap();
            let prices: Vec<f64> = (0..26).map(|i| cf.price(75.0 + 2.0 * i as f64, k, OptionKind::Call).unwrap()).collect();
            for w in prices.windows(3) {
                prop_assert!(w[1] >= w[0] - 1e-9);
                prop_assert!(w[2] - 2.0 * w[1] + w[0] >= -1e-8);
            }
        }
    }
}
