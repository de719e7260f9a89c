//! Generalized extreme value distribution kernels.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

/// Shape magnitudes below this use the Gumbel limit.
pub const GUMBEL_EPS: f64 = 1e-6;

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// A single GEV distribution: location, scale and shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevPoint {
    pub mu: f64,
    pub sigma: f64,
    pub xi: f64,
}

impl GevPoint {
    pub fn new(mu: f64, sigma: f64, xi: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Domain(format!("scale must be positive, got {sigma}")));
        }
        if !mu.is_finite() || !xi.is_finite() {
            return Err(Error::Domain("location and shape must be finite".into()));
        }
        Ok(Self { mu, sigma, xi })
    }

    #[inline]
    fn is_gumbel(&self) -> bool {
        self.xi.abs() < GUMBEL_EPS
    }

    pub fn cdf(&self, x: f64) -> f64 {
        gev_cdf(x, self)
    }

    /// Upper tail probability `1 - F(x)`, computed without cancellation.
    pub fn sf(&self, x: f64) -> f64 {
        let y = reduced_exceedance(x, self);
        if y.is_infinite() {
            1.0
        } else {
            -(-y).exp_m1()
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        gev_quantile(p, self)
    }

    /// Draws one variate by inversion.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                break u;
            }
        };
        self.quantile_unchecked(u)
    }

    fn quantile_unchecked(&self, p: f64) -> f64 {
        let y = -p.ln();
        if self.is_gumbel() {
            self.mu - self.sigma * y.ln()
        } else {
            self.mu + self.sigma / self.xi * ((-self.xi * y.ln()).exp_m1())
        }
    }
}

/// `[1 + xi (x - mu)/sigma]_+^{-1/xi}`, i.e. `-ln F(x)`; infinite below the lower
/// support edge and zero above the upper one.
fn reduced_exceedance(x: f64, p: &GevPoint) -> f64 {
    let z = (x - p.mu) / p.sigma;
    if p.is_gumbel() {
        return (-z).exp();
    }
    let w = 1.0 + p.xi * z;
    if w <= 0.0 {
        return if p.xi > 0.0 { f64::INFINITY } else { 0.0 };
    }
    (-(p.xi * z).ln_1p() / p.xi).exp()
}

/// Cumulative distribution function of the GEV family.
pub fn gev_cdf(x: f64, p: &GevPoint) -> f64 {
    let y = reduced_exceedance(x, p);
    (-y).exp()
}

/// Inverse of [`gev_cdf`].
pub fn gev_quantile(prob: f64, p: &GevPoint) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::Domain(format!("probability must lie in (0, 1), got {prob}")));
    }
    Ok(p.quantile_unchecked(prob))
}

/// Mean of the GEV distribution, defined for `xi < 1`.
pub fn gev_mean(p: &GevPoint) -> Result<f64> {
    if p.xi >= 1.0 {
        return Err(Error::UndefinedMean(p.xi));
    }
    if p.is_gumbel() {
        return Ok(p.mu + EULER_GAMMA * p.sigma);
    }
    Ok(p.mu + p.sigma / p.xi * (gamma(1.0 - p.xi) - 1.0))
}

/// Standard deviation of the GEV distribution, defined for `xi < 1/2`.
pub fn gev_sd(p: &GevPoint) -> Result<f64> {
    if p.xi >= 0.5 {
        return Err(Error::UndefinedVariance(p.xi));
    }
    if p.is_gumbel() {
        return Ok(p.sigma * std::f64::consts::PI / 6f64.sqrt());
    }
    let g1 = gamma(1.0 - p.xi);
    let g2 = gamma(1.0 - 2.0 * p.xi);
    Ok(p.sigma * (g2 - g1 * g1).sqrt() / p.xi.abs())
}
