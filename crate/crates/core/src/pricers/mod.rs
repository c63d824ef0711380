//! Reference pricers: Black–Scholes closed forms, the Heston
//! characteristic-function engine and a Monte-Carlo cross-check.

mod bs;
mod heston;
mod mc;
mod quadrature;

pub use bs::{bs_greeks, bs_price};
pub use heston::{heston_greeks_bump, heston_price_cf, HestonCf};
pub use mc::{mc_price, McAccumulator};
pub use quadrature::{gauss_legendre, QuadratureConfig};

use crate::error::{Error, Result};
use crate::market_sim::HestonParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptionKind {
    Call,
    Put,
}

impl OptionKind {
    pub fn payoff(self, spot: f64, strike: f64) -> f64 {
        match self {
            OptionKind::Call => (spot - strike).max(0.0),
            OptionKind::Put => (strike - spot).max(0.0),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            OptionKind::Call => "call",
            OptionKind::Put => "put",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "call" => Some(OptionKind::Call),
            "put" => Some(OptionKind::Put),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptionSpec {
    pub strike: f64,
    /// Time to maturity in years.
    pub ttm: f64,
    pub rate: f64,
    pub kind: OptionKind,
}

impl OptionSpec {
    pub fn call(strike: f64, ttm: f64, rate: f64) -> Self {
        OptionSpec {
            strike,
            ttm,
            rate,
            kind: OptionKind::Call,
        }
    }

    pub fn put(strike: f64, ttm: f64, rate: f64) -> Self {
        OptionSpec {
            kind: OptionKind::Put,
            ..Self::call(strike, ttm, rate)
        }
    }

    pub fn discount(&self) -> f64 {
        (-self.rate * self.ttm).exp()
    }

    pub(crate) fn check(&self, op: &'static str, spot: f64) -> Result<()> {
        if !(spot > 0.0 && spot.is_finite()) {
            return Err(Error::domain(op, format!("spot = {spot} must be positive")));
        }
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(Error::domain(op, format!("strike = {} must be positive", self.strike)));
        }
        if !(self.ttm >= 0.0 && self.ttm.is_finite()) {
            return Err(Error::domain(op, format!("ttm = {} must be non-negative", self.ttm)));
        }
        if !self.rate.is_finite() {
            return Err(Error::domain(op, "rate is not finite"));
        }
        Ok(())
    }
}

/// Anything that quotes `(price, delta, gamma)` for a European option.
pub trait PriceModel {
    fn price_delta_gamma(&self, spot: f64, opt: &OptionSpec) -> Result<(f64, f64, f64)>;
}

impl PriceModel for Engine {
    fn price_delta_gamma(&self, spot: f64, opt: &OptionSpec) -> Result<(f64, f64, f64)> {
        self.prepare(opt.ttm, opt.rate)?.greeks(spot, opt.strike, opt.kind)
    }
}

/// An analytic engine matched to a simulated process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Engine {
    BlackScholes { sigma: f64 },
    HestonCf {
        params: HestonParams,
        quad: QuadratureConfig,
        /// Relative spot bump for the finite-difference Greeks.
        bump_rel: f64,
    },
}

impl Engine {
    pub fn heston(params: HestonParams) -> Self {
        Engine::HestonCf {
            params,
            quad: QuadratureConfig::default(),
            bump_rel: 1e-3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Engine::BlackScholes { .. } => "bs",
            Engine::HestonCf { .. } => "heston-cf",
        }
    }

    /// Fix maturity and rate; Heston caches its characteristic function here.
    pub fn prepare(&self, ttm: f64, rate: f64) -> Result<Prepared> {
        Ok(match *self {
            Engine::BlackScholes { sigma } => Prepared::Bs { sigma, ttm, rate },
            Engine::HestonCf {
                params,
                quad,
                bump_rel,
            } => Prepared::Heston {
                cf: Box::new(HestonCf::new(&params, ttm, rate, &quad)?),
                bump_rel,
            },
        })
    }
}

/// An [`Engine`] at a fixed maturity and rate.
#[derive(Debug, Clone)]
pub enum Prepared {
    Bs { sigma: f64, ttm: f64, rate: f64 },
    Heston { cf: Box<HestonCf>, bump_rel: f64 },
}

impl Prepared {
    pub fn ttm(&self) -> f64 {
        match self {
            Prepared::Bs { ttm, .. } => *ttm,
            Prepared::Heston { cf, .. } => cf.ttm(),
        }
    }

    pub fn price(&self, spot: f64, strike: f64, kind: OptionKind) -> Result<f64> {
        match self {
            Prepared::Bs { sigma, ttm, rate } => bs_price(
                spot,
                &OptionSpec {
                    strike,
                    ttm: *ttm,
                    rate: *rate,
                    kind,
                },
                *sigma,
            ),
            Prepared::Heston { cf, .. } => cf.price(spot, strike, kind),
        }
    }

    /// `(price, delta, gamma)`.
    pub fn greeks(&self, spot: f64, strike: f64, kind: OptionKind) -> Result<(f64, f64, f64)> {
        match self {
            Prepared::Bs { sigma, ttm, rate } => {
                let opt = OptionSpec {
                    strike,
                    ttm: *ttm,
                    rate: *rate,
                    kind,
                };
                let (d, g) = bs_greeks(spot, &opt, *sigma)?;
                Ok((bs_price(spot, &opt, *sigma)?, d, g))
            }
            Prepared::Heston { cf, bump_rel } => cf.greeks_bump(spot, strike, kind, *bump_rel),
        }
    }
}
