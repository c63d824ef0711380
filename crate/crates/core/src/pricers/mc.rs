use super::OptionSpec;
use crate::error::{Error, Result};
use crate::market_sim::PathSet;

/// Streaming Monte-Carlo estimator; paths may arrive in chunks.
///
/// Antithetic sets contribute one sample per (2i, 2i+1) pair, the pair mean,
/// so the standard error reflects the pairing.
#[derive(Debug, Clone, Default)]
pub struct McAccumulator {
    n: u64,
    mean: f64,
    m2: f64,
    discount: f64,
}

impl McAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn add_paths(&mut self, paths: &PathSet, opt: &OptionSpec) -> Result<()> {
        opt.check("mc_price", paths.spots[0])?;
        if (paths.drift - opt.rate).abs() > 1e-12 {
            return Err(Error::domain(
                "mc_price",
                format!("paths have drift {} but rate is {}: not risk-neutral", paths.drift, opt.rate),
            ));
        }
        let step = (opt.ttm / paths.dt).round() as usize;
        if step > paths.n_steps || opt.ttm > paths.horizon() + 0.5 * paths.dt {
            return Err(Error::domain(
                "mc_price",
                format!("ttm = {} beyond path horizon {}", opt.ttm, paths.horizon()),
            ));
        }
        if paths.antithetic && (paths.first_path % 2 != 0 || paths.n_paths % 2 != 0) {
            return Err(Error::domain("mc_price", "antithetic chunk splits a pair"));
        }
        self.discount = opt.discount();
        let pay = |i: usize| opt.kind.payoff(paths.spot(i, step), opt.strike);
        if paths.antithetic {
            for i in (0..paths.n_paths).step_by(2) {
                self.push(0.5 * (pay(i) + pay(i + 1)));
            }
        } else {
            for i in 0..paths.n_paths {
                self.push(pay(i));
            }
        }
        Ok(())
    }

    /// `(price, standard_error)`.
    pub fn finish(&self) -> Result<(f64, f64)> {
        if self.n == 0 {
            return Err(Error::domain("mc_price", "no paths"));
        }
        let se = if self.n > 1 {
            (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
        } else {
            0.0
        };
        Ok((self.discount * self.mean, self.discount * se))
    }
}

/// Discounted mean payoff at the grid time nearest `opt.ttm`, with its
/// standard error. Paths must be risk-neutral (drift equal to the rate).
pub fn mc_price(paths: &PathSet, opt: &OptionSpec) -> Result<(f64, f64)> {
    let mut acc = McAccumulator::new();
    acc.add_paths(paths, opt)?;
    acc.finish()
}
