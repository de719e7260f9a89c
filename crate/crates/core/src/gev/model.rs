//! Seasonal nonstationary GEV model with location shifts at changepoints.
//!
//! Location: `mu_t = beta0[s] + delta_t + beta1[s] * t / (100 T)`, where
//! `delta_t = Delta_j` for `tau_j <= t < tau_{j+1}` and zero before `tau_1`.
//! Scale: `ln sigma_t = lambda0[s] + lambda1[s] * t / (100 T)`. Shape is shared.
//!
//! The parameter vector is ordered `beta0 x4, beta1 x4, Delta x c, lambda0 x4,
//! lambda1 x4, xi`.

use serde::{Deserialize, Serialize};

use super::dist::GevPoint;
use crate::error::{Error, Result};
use crate::ingest::{SeasonalMaximaSeries, SEASONS_PER_YEAR};

/// Number of parameters that do not depend on the changepoint count.
pub const BASE_PARAMS: usize = 17;

/// Trend covariate `t / (100 T)`: time in centuries.
#[inline]
pub fn century(t: usize) -> f64 {
    t as f64 / (100.0 * SEASONS_PER_YEAR as f64)
}

#[inline]
fn season_index(t: usize) -> usize {
    (t - 1) % SEASONS_PER_YEAR
}

/// Changepoint times as strictly increasing season indices in `[2, n]`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChangepointConfig {
    taus: Vec<usize>,
}

impl ChangepointConfig {
    /// Validates ordering and bounds for a series of length `n`.
    pub fn new(taus: Vec<usize>, n: usize) -> Result<Self> {
        if let Some(&t) = taus.iter().find(|&&t| t < 2 || t > n) {
            return Err(Error::InvalidConfig(format!("changepoint {t} outside [2, {n}]")));
        }
        if taus.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("changepoints must be strictly increasing".into()));
        }
        Ok(Self { taus })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds from already-validated times.
    pub(crate) fn from_sorted_unchecked(taus: Vec<usize>) -> Self {
        debug_assert!(taus.windows(2).all(|w| w[0] < w[1]));
        Self { taus }
    }

    pub fn taus(&self) -> &[usize] {
        &self.taus
    }

    /// Number of changepoints `c`.
    pub fn count(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    /// Segment of index `t`: 0 before the first changepoint, `j` on `[tau_j, tau_{j+1})`.
    pub fn segment_of(&self, t: usize) -> usize {
        self.taus.partition_point(|&tau| tau <= t)
    }

    /// Non-missing observation counts of the `c + 1` segments.
    pub fn segment_counts(&self, series: &SeasonalMaximaSeries) -> Vec<usize> {
        let mut bounds = Vec::with_capacity(self.taus.len() + 2);
        bounds.push(1);
        bounds.extend_from_slice(&self.taus);
        bounds.push(series.n() + 1);
        bounds.windows(2).map(|w| series.observed_between(w[0], w[1])).collect()
    }

    /// True when every segment holds at least `min_segment` observations.
    pub fn respects_min_segment(&self, series: &SeasonalMaximaSeries, min_segment: usize) -> bool {
        self.segment_counts(series).iter().all(|&m| m >= min_segment)
    }

    pub fn label(&self, series: &SeasonalMaximaSeries) -> Vec<String> {
        self.taus
            .iter()
            .map(|&t| format!("{} {}", SeasonalMaximaSeries::season_of(t), series.year_of(t)))
            .collect()
    }
}

/// Full parameter set of the seasonal GEV model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalGevParams {
    pub beta0: [f64; 4],
    /// mm/day per century
    pub beta1: [f64; 4],
    pub deltas: Vec<f64>,
    pub lambda0: [f64; 4],
    /// per century
    pub lambda1: [f64; 4],
    pub xi: f64,
}

impl SeasonalGevParams {
    pub fn len(&self) -> usize {
        BASE_PARAMS + self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.beta0);
        v.extend_from_slice(&self.beta1);
        v.extend_from_slice(&self.deltas);
        v.extend_from_slice(&self.lambda0);
        v.extend_from_slice(&self.lambda1);
        v.push(self.xi);
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() < BASE_PARAMS {
            return Err(Error::InvalidInput(format!("parameter vector too short: {}", v.len())));
        }
        let c = v.len() - BASE_PARAMS;
        let arr = |o: usize| [v[o], v[o + 1], v[o + 2], v[o + 3]];
        Ok(Self {
            beta0: arr(0),
            beta1: arr(4),
            deltas: v[8..8 + c].to_vec(),
            lambda0: arr(8 + c),
            lambda1: arr(12 + c),
            xi: v[16 + c],
        })
    }

    /// Parameter names in vector order.
    pub fn names(c: usize) -> Vec<String> {
        let seasons = ["spring", "summer", "fall", "winter"];
        let mut out = Vec::with_capacity(BASE_PARAMS + c);
        out.extend(seasons.iter().map(|s| format!("beta0_{s}")));
        out.extend(seasons.iter().map(|s| format!("beta1_{s}")));
        out.extend((1..=c).map(|j| format!("delta_{j}")));
        out.extend(seasons.iter().map(|s| format!("lambda0_{s}")));
        out.extend(seasons.iter().map(|s| format!("lambda1_{s}")));
        out.push("xi".into());
        out
    }

    /// Index of `beta1[s]` in the parameter vector.
    pub fn beta1_index(s: usize) -> usize {
        4 + s
    }

    pub fn lambda1_index(s: usize, c: usize) -> usize {
        12 + c + s
    }

    pub fn xi_index(c: usize) -> usize {
        16 + c
    }

    /// Shift `delta_t` at index `t`; beyond the record the last regime persists.
    pub fn shift_at(&self, t: usize, cps: &ChangepointConfig) -> f64 {
        match cps.segment_of(t) {
            0 => 0.0,
            j => self.deltas[j - 1],
        }
    }

    pub fn point_at(&self, t: usize, cps: &ChangepointConfig) -> GevPoint {
        GevPoint { mu: location_at(t, self, cps), sigma: scale_at(t, self), xi: self.xi }
    }
}

/// Location `mu_t`.
pub fn location_at(t: usize, params: &SeasonalGevParams, cps: &ChangepointConfig) -> f64 {
    let s = season_index(t);
    params.beta0[s] + params.shift_at(t, cps) + params.beta1[s] * century(t)
}

/// Scale `sigma_t`.
pub fn scale_at(t: usize, params: &SeasonalGevParams) -> f64 {
    let s = season_index(t);
    (params.lambda0[s] + params.lambda1[s] * century(t)).exp()
}

/// Negative log-likelihood over the non-missing seasons; `+inf` when any
/// observation falls outside the support.
pub fn neg_log_likelihood(
    series: &SeasonalMaximaSeries,
    params: &SeasonalGevParams,
    cps: &ChangepointConfig,
) -> f64 {
    if params.deltas.len() != cps.count() {
        return f64::INFINITY;
    }
    Design::new(series, cps).nll(&params.to_vec())
}

/// One non-missing observation with its design coordinates.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Obs {
    pub t: usize,
    pub x: f64,
    pub season: usize,
    pub cov: f64,
    pub segment: usize,
}

/// Precomputed likelihood layout for one series and changepoint configuration.
#[derive(Debug, Clone)]
pub struct Design {
    pub(crate) obs: Vec<Obs>,
    c: usize,
}

/// Derivatives of one observation's contribution with respect to
/// `(mu, eta = ln sigma, xi)`; Hessian packed as `[mm, me, mx, ee, ex, xx]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ObsDerivs {
    pub f: f64,
    pub g: [f64; 3],
    pub h: [f64; 6],
}

/// Series expansion is used when `|xi z|` is below this.
const SERIES_CUTOFF: f64 = 0.05;
const SERIES_TERMS: usize = 24;

/// `A(xi, z) = ln(1 + xi z) / xi`, smooth through `xi = 0`.
#[inline]
fn a_value(xi: f64, z: f64) -> Option<f64> {
    let u = xi * z;
    if u <= -1.0 {
        return None;
    }
    if u.abs() < SERIES_CUTOFF {
        let mut sum = 0.0;
        let mut p = 1.0;
        for k in 0..SERIES_TERMS {
            sum += p / (k + 1) as f64;
            p *= -u;
        }
        Some(z * sum)
    } else {
        Some(u.ln_1p() / xi)
    }
}

/// Contribution `eta + (1 + xi) A + exp(-A)` of one observation.
#[inline]
pub(crate) fn obs_nll(x: f64, mu: f64, eta: f64, xi: f64) -> f64 {
    let z = (x - mu) * (-eta).exp();
    match a_value(xi, z) {
        Some(a) => eta + (1.0 + xi) * a + (-a).exp(),
        None => f64::INFINITY,
    }
}

pub(crate) fn obs_derivs(x: f64, mu: f64, eta: f64, xi: f64) -> Option<ObsDerivs> {
    let inv_sigma = (-eta).exp();
    let z = (x - mu) * inv_sigma;
    let u = xi * z;
    if !(u > -1.0) || !z.is_finite() {
        return None;
    }
    let w = 1.0 + u;
    let a_z = 1.0 / w;
    let a_zz = -xi / (w * w);
    let a_zx = -z / (w * w);
    let (a, a_x, a_xx) = if u.abs() < SERIES_CUTOFF {
        // A = z sum_k (-u)^k/(k+1), differentiated termwise in xi
        let mut s0 = 0.0;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        let mut q = 1.0; // (-u)^k
        let mut q1 = 0.0; // (-u)^(k-1)
        let mut q2 = 0.0; // (-u)^(k-2)
        for k in 0..SERIES_TERMS {
            let kf = k as f64;
            s0 += q / (kf + 1.0);
            s1 -= kf * q1 / (kf + 1.0);
            s2 += kf * (kf - 1.0) * q2 / (kf + 1.0);
            q2 = q1;
            q1 = q;
            q *= -u;
        }
        (z * s0, z * z * s1, z * z * z * s2)
    } else {
        let l = u.ln_1p();
        let xi2 = xi * xi;
        let a = l / xi;
        let a_x = (u / w - l) / xi2;
        let a_xx = -z * (w + u) / (xi2 * w * w) - z / (xi2 * w) + 2.0 * l / (xi2 * xi);
        (a, a_x, a_xx)
    };

    // chain through z(mu, eta)
    let z_m = -inv_sigma;
    let z_e = -z;
    let z_me = inv_sigma;
    let z_ee = z;
    let am = a_z * z_m;
    let ae = a_z * z_e;
    let ax = a_x;
    let amm = a_zz * z_m * z_m;
    let ame = a_zz * z_m * z_e + a_z * z_me;
    let aee = a_zz * z_e * z_e + a_z * z_ee;
    let amx = a_zx * z_m;
    let aex = a_zx * z_e;
    let axx = a_xx;

    let e = (-a).exp();
    let ga = (1.0 + xi) - e; // dG/dA
    let gaa = e;
    let f = eta + (1.0 + xi) * a + e;
    let g = [ga * am, 1.0 + ga * ae, ga * ax + a];
    let h = [
        gaa * am * am + ga * amm,
        gaa * am * ae + ga * ame,
        gaa * am * ax + ga * amx + am,
        gaa * ae * ae + ga * aee,
        gaa * ae * ax + ga * aex + ae,
        gaa * ax * ax + ga * axx + 2.0 * ax,
    ];
    if !f.is_finite() {
        return None;
    }
    Some(ObsDerivs { f, g, h })
}

impl Design {
    pub fn new(series: &SeasonalMaximaSeries, cps: &ChangepointConfig) -> Self {
        let obs = series
            .entries()
            .filter_map(|e| {
                e.value.map(|x| Obs {
                    t: e.t,
                    x,
                    season: e.season.index(),
                    cov: century(e.t),
                    segment: cps.segment_of(e.t),
                })
            })
            .collect();
        Self { obs, c: cps.count() }
    }

    pub fn changepoints(&self) -> usize {
        self.c
    }

    pub fn n_params(&self) -> usize {
        BASE_PARAMS + self.c
    }

    pub fn n_obs(&self) -> usize {
        self.obs.len()
    }

    #[inline]
    fn mu_eta(&self, o: &Obs, th: &[f64]) -> (f64, f64) {
        let c = self.c;
        let s = o.season;
        let mut mu = th[s] + th[4 + s] * o.cov;
        if o.segment > 0 {
            mu += th[8 + o.segment - 1];
        }
        let eta = th[8 + c + s] + th[12 + c + s] * o.cov;
        (mu, eta)
    }

    /// Negative log-likelihood at a parameter vector.
    pub fn nll(&self, th: &[f64]) -> f64 {
        debug_assert_eq!(th.len(), self.n_params());
        let xi = th[16 + self.c];
        let mut total = 0.0;
        for o in &self.obs {
            let (mu, eta) = self.mu_eta(o, th);
            let v = obs_nll(o.x, mu, eta, xi);
            if !v.is_finite() {
                return f64::INFINITY;
            }
            total += v;
        }
        total
    }

    /// Value, gradient and Hessian of the negative log-likelihood.
    pub fn nll_derivatives(&self, th: &[f64]) -> Option<(f64, Vec<f64>, Vec<Vec<f64>>)> {
        let p = self.n_params();
        let c = self.c;
        let xi = th[16 + c];
        let mut f = 0.0;
        let mut g = vec![0.0; p];
        let mut h = vec![vec![0.0; p]; p];
        // (param index, which of mu/eta/xi, coefficient)
        let mut idx: [(usize, usize, f64); 6] = [(0, 0, 0.0); 6];
        for o in &self.obs {
            let (mu, eta) = self.mu_eta(o, th);
            let d = obs_derivs(o.x, mu, eta, xi)?;
            f += d.f;
            let s = o.season;
            let mut k = 0;
            idx[k] = (s, 0, 1.0);
            k += 1;
            idx[k] = (4 + s, 0, o.cov);
            k += 1;
            if o.segment > 0 {
                idx[k] = (8 + o.segment - 1, 0, 1.0);
                k += 1;
            }
            idx[k] = (8 + c + s, 1, 1.0);
            k += 1;
            idx[k] = (12 + c + s, 1, o.cov);
            k += 1;
            idx[k] = (16 + c, 2, 1.0);
            k += 1;
            for a in 0..k {
                let (ia, va, ca) = idx[a];
                g[ia] += ca * d.g[va];
                for &(ib, vb, cb) in &idx[..k] {
                    h[ia][ib] += ca * cb * packed(&d.h, va, vb);
                }
            }
        }
        if !f.is_finite() {
            return None;
        }
        Some((f, g, h))
    }

    /// Location and log-scale of every observation.
    pub(crate) fn fitted(&self, th: &[f64]) -> Vec<(f64, f64)> {
        self.obs.iter().map(|o| self.mu_eta(o, th)).collect()
    }
}

#[inline]
fn packed(h: &[f64; 6], a: usize, b: usize) -> f64 {
    match (a.min(b), a.max(b)) {
        (0, 0) => h[0],
        (0, 1) => h[1],
        (0, 2) => h[2],
        (1, 1) => h[3],
        (1, 2) => h[4],
        _ => h[5],
    }
}
