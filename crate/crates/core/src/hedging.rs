//! Self-supervised hedging losses: the one-step delta-hedge replication
//! residual and the delta-gamma portfolio difference against an ATM option.

use crate::error::{Error, Result};
use crate::model::clamp_greeks;
use crate::pricers::{Engine, OptionKind, OptionSpec, PriceModel, Prepared};

/// Floor on the hedging option's gamma below which β would blow up.
pub const EPSILON_GAMMA: f64 = 1e-6;

/// Remaining maturities within this distance of zero count as expiry.
const EXPIRY_TOL: f64 = 1e-12;

/// Quote of the ATM hedging option over one step; strike fixed at `s_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtmQuote {
    pub price_t: f64,
    pub price_next: f64,
    pub delta_atm: f64,
    pub gamma_atm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HedgeSample {
    pub s_t: f64,
    pub s_next: f64,
    pub ttm_t: f64,
    pub dt: f64,
    pub rate: f64,
    pub strike: f64,
    pub kind: OptionKind,
    pub atm: Option<AtmQuote>,
}

/// Maturity left after one step: `Some(τ − dt)` while alive, `None` at expiry.
pub fn ttm_next(ttm_t: f64, dt: f64) -> Result<Option<f64>> {
    let rest = ttm_t - dt;
    if rest < -EXPIRY_TOL {
        return Err(Error::Rejected(format!("ttm {ttm_t} crosses expiry within dt = {dt}")));
    }
    Ok(if rest <= EXPIRY_TOL { None } else { Some(rest) })
}

impl HedgeSample {
    pub fn option_t(&self) -> OptionSpec {
        OptionSpec {
            strike: self.strike,
            ttm: self.ttm_t,
            rate: self.rate,
            kind: self.kind,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.s_t > 0.0 && self.s_next > 0.0 && self.s_t.is_finite() && self.s_next.is_finite()) {
            return Err(Error::Rejected(format!("non-positive spot pair ({}, {})", self.s_t, self.s_next)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Rejected(format!("dt = {} must be positive", self.dt)));
        }
        Ok(())
    }

    /// Value at `t + dt`: the model's price, or the payoff when the step lands on expiry.
    fn price_next(&self, model: &impl PriceModel) -> Result<f64> {
        match ttm_next(self.ttm_t, self.dt)? {
            None => Ok(self.kind.payoff(self.s_next, self.strike)),
            Some(ttm) => {
                let opt = OptionSpec { ttm, ..self.option_t() };
                Ok(model.price_delta_gamma(self.s_next, &opt)?.0)
            }
        }
    }
}

/// Residual of the delta hedge with its partials in the model outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaTerms {
    pub residual: f64,
    pub d_price_t: f64,
    pub d_delta: f64,
    pub d_price_next: f64,
}

/// `Δ·dS + r·(C_t − Δ·S_t)·dt − (C_next − C_t)`.
pub fn delta_terms(s_t: f64, s_next: f64, rate: f64, dt: f64, price_t: f64, delta: f64, price_next: f64) -> DeltaTerms {
    DeltaTerms {
        residual: delta * (s_next - s_t) + rate * (price_t - delta * s_t) * dt - (price_next - price_t),
        d_price_t: 1.0 + rate * dt,
        d_delta: (s_next - s_t) - rate * s_t * dt,
        d_price_next: -1.0,
    }
}

/// Delta-gamma portfolio values with partials of `v_t − v_next`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaTerms {
    pub v_t: f64,
    pub v_next: f64,
    pub d_price_t: f64,
    pub d_delta: f64,
    pub d_gamma: f64,
    pub d_price_next: f64,
}

/// β = Γ/Γ_ATM, α = Δ − β·Δ_ATM, V = −C + α·S + β·C_ATM at both ends of the step.
pub fn gamma_terms(s_t: f64, s_next: f64, price_t: f64, delta: f64, gamma: f64, price_next: f64, atm: &AtmQuote) -> GammaTerms {
    let beta = gamma / atm.gamma_atm;
    let alpha = delta - beta * atm.delta_atm;
    let ds = s_t - s_next;
    let d_atm = atm.price_t - atm.price_next;
    GammaTerms {
        v_t: -price_t + alpha * s_t + beta * atm.price_t,
        v_next: -price_next + alpha * s_next + beta * atm.price_next,
        d_price_t: -1.0,
        d_delta: ds,
        d_gamma: (d_atm - atm.delta_atm * ds) / atm.gamma_atm,
        d_price_next: 1.0,
    }
}

/// Signed one-step delta-hedge residual with the model's clamped delta.
/// The loss is its square.
pub fn delta_hedge_residual(model: &impl PriceModel, sample: &HedgeSample) -> Result<f64> {
    sample.validate()?;
    let (price_t, delta, gamma) = model.price_delta_gamma(sample.s_t, &sample.option_t())?;
    let delta = clamp_greeks(delta, gamma, sample.kind).delta;
    let price_next = sample.price_next(model)?;
    Ok(delta_terms(sample.s_t, sample.s_next, sample.rate, sample.dt, price_t, delta, price_next).residual)
}

/// `(v_t, v_next)` of the delta-gamma hedged portfolio; the loss is `(v_t − v_next)²`.
pub fn delta_gamma_portfolio_pair(model: &impl PriceModel, sample: &HedgeSample) -> Result<(f64, f64)> {
    sample.validate()?;
    let atm = sample
        .atm
        .ok_or_else(|| Error::Rejected("delta-gamma sample without an ATM quote".into()))?;
    if !(atm.gamma_atm > EPSILON_GAMMA) {
        return Err(Error::Rejected(format!(
            "ATM gamma {} ≤ {EPSILON_GAMMA}: hedge ratio undefined",
            atm.gamma_atm
        )));
    }
    let (price_t, delta, gamma) = model.price_delta_gamma(sample.s_t, &sample.option_t())?;
    let c = clamp_greeks(delta, gamma, sample.kind);
    let price_next = sample.price_next(model)?;
    let t = gamma_terms(sample.s_t, sample.s_next, price_t, c.delta, c.gamma, price_next, &atm);
    Ok((t.v_t, t.v_next))
}

/// ATM call quotes for a fixed hedge maturity, reused across samples.
#[derive(Debug, Clone)]
pub struct AtmQuoter {
    now: Prepared,
    next: Prepared,
}

impl AtmQuoter {
    pub fn new(engine: &Engine, rate: f64, atm_ttm: f64, dt: f64) -> Result<Self> {
        if !(atm_ttm > dt) {
            return Err(Error::Config(format!("atm_ttm = {atm_ttm} must exceed dt = {dt}")));
        }
        Ok(AtmQuoter {
            now: engine.prepare(atm_ttm, rate)?,
            next: engine.prepare(atm_ttm - dt, rate)?,
        })
    }

    pub fn quote(&self, s_t: f64, s_next: f64) -> Result<AtmQuote> {
        let (price_t, delta_atm, gamma_atm) = self.now.greeks(s_t, s_t, OptionKind::Call)?;
        let price_next = self.next.price(s_next, s_t, OptionKind::Call)?;
        Ok(AtmQuote {
            price_t,
            price_next,
            delta_atm,
            gamma_atm,
        })
    }
}

/// Quote the at-the-money hedging call struck at `s_t`: price and Greeks at
/// `(s_t, atm_ttm)`, and the price of the same contract at `(s_next, atm_ttm − dt)`.
pub fn make_atm_quote(engine: &Engine, s_t: f64, s_next: f64, rate: f64, atm_ttm: f64, dt: f64) -> Result<AtmQuote> {
    AtmQuoter::new(engine, rate, atm_ttm, dt)?.quote(s_t, s_next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_sim::{simulate_gbm, GbmParams, DEFAULT_DT};
    use crate::pricers::bs_price;

    /// Price table keyed by spot, constant Greeks.
    struct Stub {
        delta: f64,
        gamma: f64,
        price: fn(f64) -> f64,
    }

    impl PriceModel for Stub {
        fn price_delta_gamma(&self, spot: f64, _: &OptionSpec) -> Result<(f64, f64, f64)> {
            Ok(((self.price)(spot), self.delta, self.gamma))
        }
    }

    fn sample(s_t: f64, s_next: f64) -> HedgeSample {
        HedgeSample {
            s_t,
            s_next,
            ttm_t: 0.36,
            dt: DEFAULT_DT,
            rate: 0.0,
            strike: 100.0,
            kind: OptionKind::Call,
            atm: None,
        }
    }

    #[test]
    fn worked_example() {
        let m = Stub {
            delta: 0.5,
            gamma: 0.0,
            price: |s| if s < 120.5 { 10.0 } else { 11.0 },
        };
        let r = delta_hedge_residual(&m, &sample(120.0, 121.0)).unwrap();
        assert_eq!(r, -0.5);
        assert_eq!(r * r, 0.25);
    }

    #[test]
    fn constant_model_has_zero_loss() {
        let m = Stub {
            delta: 0.0,
            gamma: 0.0,
            price: |_| 4.2,
        };
        assert_eq!(delta_hedge_residual(&m, &sample(99.0, 103.7)).unwrap(), 0.0);
    }

    #[test]
    fn expiry_crossing_rejected_and_landing_uses_payoff() {
        let m = Stub {
            delta: 1.0,
            gamma: 0.0,
            price: |s| s - 100.0,
        };
        let mut s = sample(104.0, 106.0);
        s.ttm_t = 0.5 * DEFAULT_DT;
        assert!(matches!(delta_hedge_residual(&m, &s), Err(Error::Rejected(_))));
        s.ttm_t = DEFAULT_DT;
        // C_t = 4, payoff 6, Δ·dS = 2.
        assert_eq!(delta_hedge_residual(&m, &s).unwrap(), 0.0);
    }

    #[test]
    fn delta_is_clamped() {
        let m = Stub {
            delta: 1.7,
            gamma: 0.0,
            price: |_| 5.0,
        };
        assert_eq!(delta_hedge_residual(&m, &sample(100.0, 102.0)).unwrap(), 2.0);
    }

    #[test]
    fn perfect_replication_of_atm_instrument() {
        let engine = Engine::BlackScholes { sigma: 0.15 };
        let atm_ttm = 30.0 / 250.0;
        let q = make_atm_quote(&engine, 100.0, 101.3, 0.0, atm_ttm, DEFAULT_DT).unwrap();
        let mut s = sample(100.0, 101.3);
        s.ttm_t = atm_ttm;
        s.atm = Some(q);
        let (v_t, v_next) = delta_gamma_portfolio_pair(&engine, &s).unwrap();
        assert!(v_t.abs() < 1e-12 && v_next.abs() < 1e-12, "{v_t} {v_next}");
    }

    #[test]
    fn zero_gamma_reduces_to_delta_portfolio() {
        let m = Stub {
            delta: 0.6,
            gamma: 0.0,
            price: |s| 0.6 * s - 50.0,
        };
        let mut s = sample(100.0, 98.0);
        s.atm = Some(AtmQuote {
            price_t: 2.5,
            price_next: 1.6,
            delta_atm: 0.52,
            gamma_atm: 0.07,
        });
        let (v_t, v_next) = delta_gamma_portfolio_pair(&m, &s).unwrap();
        assert_eq!(v_t, -(0.6 * 100.0 - 50.0) + 0.6 * 100.0);
        assert_eq!(v_next, -(0.6 * 98.0 - 50.0) + 0.6 * 98.0);
    }

    #[test]
    fn tiny_atm_gamma_rejected() {
        let m = Stub {
            delta: 0.5,
            gamma: 0.01,
            price: |_| 3.0,
        };
        let mut s = sample(100.0, 100.5);
        s.atm = Some(AtmQuote {
            price_t: 1.0,
            price_next: 1.0,
            delta_atm: 0.5,
            gamma_atm: 1e-7,
        });
        assert!(matches!(delta_gamma_portfolio_pair(&m, &s), Err(Error::Rejected(_))));
    }

    #[test]
    fn atm_quote_properties() {
        let engine = Engine::BlackScholes { sigma: 0.15 };
        let q = make_atm_quote(&engine, 100.0, 100.0, 0.0, 30.0 / 250.0, DEFAULT_DT).unwrap();
        assert!(q.delta_atm > 0.5 && q.delta_atm < 0.56, "{}", q.delta_atm);
        for atm_ttm in [0.12, 0.36] {
            assert!(make_atm_quote(&engine, 100.0, 101.0, 0.0, atm_ttm, DEFAULT_DT).is_ok());
        }
        let q = make_atm_quote(&engine, 100.0, 100.0, 0.0, 0.12, 1e-9).unwrap();
        assert!((q.price_next - q.price_t).abs() < 1e-6);
        assert!(make_atm_quote(&engine, 100.0, 100.0, 0.0, 0.003, DEFAULT_DT).is_err());
    }

    /// Mean squared one-step residuals of the analytic price on risk-neutral GBM paths.
    fn oracle_losses(dt: f64, n_paths: usize, with_gamma: bool) -> (f64, f64) {
        let sigma = 0.15;
        let p = GbmParams {
            mu: 0.0,
            sigma,
            s0: 100.0,
        };
        let steps = (0.06 / dt).round() as usize;
        let paths = simulate_gbm(&p, n_paths, steps, dt, 21).unwrap();
        let engine = Engine::BlackScholes { sigma };
        let quoter = AtmQuoter::new(&engine, 0.0, 30.0 / 250.0, dt).unwrap();
        let (mut delta_sum, mut gamma_sum, mut n) = (0.0, 0.0, 0);
        for i in 0..n_paths {
            for k in 0..steps {
                let mut s = sample(paths.spot(i, k), paths.spot(i, k + 1));
                s.dt = dt;
                s.strike = 90.0 + (i % 21) as f64;
                s.ttm_t = 0.24 + 0.04 * (k % 7) as f64;
                let r = delta_hedge_residual(&engine, &s).unwrap();
                delta_sum += r * r;
                if with_gamma {
                    s.atm = Some(quoter.quote(s.s_t, s.s_next).unwrap());
                    let (a, b) = delta_gamma_portfolio_pair(&engine, &s).unwrap();
                    gamma_sum += (a - b) * (a - b);
                }
                n += 1;
            }
        }
        (delta_sum / n as f64, gamma_sum / n as f64)
    }

    #[test]
    fn analytic_price_has_small_loss_scaling_with_dt_squared() {
        let (coarse, _) = oracle_losses(DEFAULT_DT, 400, false);
        let (fine, _) = oracle_losses(0.5 * DEFAULT_DT, 400, false);
        assert!(coarse <= 1e-3, "{coarse}");
        let ratio = coarse / fine;
        assert!((ratio - 4.0).abs() <= 1.2, "ratio {ratio}");
        // Black–Scholes price is not trivially zero.
        assert!(bs_price(100.0, &OptionSpec::call(100.0, 0.3, 0.0), 0.15).unwrap() > 1.0);
    }

    #[test]
    fn gamma_hedge_beats_delta_hedge_on_same_paths() {
        let (delta_mse, gamma_mse) = oracle_losses(DEFAULT_DT, 700, true);
        assert!(gamma_mse < delta_mse, "{gamma_mse} vs {delta_mse}");
    }
}
