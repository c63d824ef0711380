use crate::error::{Error, Result};

/// Fixed-node quadrature for the Π₁/Π₂ integrals over `(small_omega_offset, upper_limit]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    pub upper_limit: f64,
    pub n_nodes: usize,
    /// Lower end of the integration range; the integrands are finite but
    /// evaluated as 0/0 at ω = 0.
    pub small_omega_offset: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            upper_limit: 200.0,
            n_nodes: 256,
            small_omega_offset: 1e-8,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.upper_limit > 0.0 && self.upper_limit.is_finite()) {
            return Err(Error::Config(format!("upper_limit = {} must be positive", self.upper_limit)));
        }
        if self.n_nodes < 32 {
            return Err(Error::Config(format!("n_nodes = {} must be at least 32", self.n_nodes)));
        }
        if !(self.small_omega_offset > 0.0 && self.small_omega_offset < self.upper_limit) {
            return Err(Error::Config(format!(
                "small_omega_offset = {} must lie in (0, upper_limit)",
                self.small_omega_offset
            )));
        }
        Ok(())
    }

    /// Nodes and weights mapped onto the integration range.
    pub fn nodes(&self) -> Result<Vec<(f64, f64)>> {
        self.validate()?;
        let (a, b) = (self.small_omega_offset, self.upper_limit);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        Ok(gauss_legendre(self.n_nodes)
            .into_iter()
            .map(|(x, w)| (mid + half * x, half * w))
            .collect())
    }
}

/// Gauss–Legendre nodes and weights on [−1, 1], by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = vec![(0.0, 0.0); n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out[i] = (-x, w);
        out[n - 1 - i] = (x, w);
    }
    out
}
