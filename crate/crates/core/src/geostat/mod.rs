//! Gaussian-process smoothing of station estimates with a Matérn covariance
//! and nugget.

mod bessel;

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

pub use bessel::bessel_k;

use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};

pub const EARTH_RADIUS_KM: f64 = 6371.0;
/// Fewest sites accepted by [`fit_gp`].
pub const MIN_SITES: usize = 10;

/// Smoothness choices per smoothed quantity.
pub mod smoothness {
    /// Seasonal trends: spring, summer, fall, winter.
    pub const TRENDS: [f64; 4] = [1.01, 1.01, 1.01, 1.10];
    /// Variability multipliers: spring, summer, fall, winter.
    pub const VARIABILITY: [f64; 4] = [1.01, 1.30, 1.10, 1.10];
    pub const LONG_TERM: f64 = 1.01;
    pub const RETURN_LEVELS: f64 = 1.11;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub lon: f64,
    pub lat: f64,
}

impl Site {
    pub fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }
}

/// Great-circle distance in km.
pub fn haversine_km(a: Site, b: Site) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub psi2: f64,
    /// per km
    pub kappa: f64,
    pub nu: f64,
}

impl MaternParams {
    pub fn new(psi2: f64, kappa: f64, nu: f64) -> Result<Self> {
        if !(psi2 > 0.0 && kappa > 0.0 && nu > 0.0) {
            return Err(Error::InvalidInput(format!("Matern parameters must be positive: {psi2}, {kappa}, {nu}")));
        }
        Ok(Self { psi2, kappa, nu })
    }
}

/// Matérn correlation with precomputed normalization.
#[derive(Debug, Clone, Copy)]
struct Matern {
    kappa: f64,
    nu: f64,
    norm: f64,
}

impl Matern {
    fn new(kappa: f64, nu: f64) -> Self {
        Self { kappa, nu, norm: 2f64.powf(1.0 - nu) / gamma(nu) }
    }

    fn corr(&self, d: f64) -> f64 {
        let x = self.kappa * d;
        if x < 1e-12 {
            return 1.0;
        }
        (self.norm * x.powf(self.nu) * bessel_k(self.nu, x)).min(1.0)
    }
}

/// `psi2 (2^{nu-1} Gamma(nu))^{-1} (kappa d)^nu K_nu(kappa d)`, equal to `psi2` at zero.
pub fn matern_cov(d: f64, p: &MaternParams) -> f64 {
    p.psi2 * Matern::new(p.kappa, p.nu).corr(d)
}

/// Fitted spatial model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeostatModel {
    pub mean: f64,
    pub nugget: f64,
    pub matern: MaternParams,
    pub sites: Vec<Site>,
    pub observations: Vec<f64>,
    /// Maximized log-likelihood.
    pub log_likelihood: f64,
}

impl GeostatModel {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "beta": self.mean,
            "psi2": self.matern.psi2,
            "kappa": self.matern.kappa,
            "range_km": 1.0 / self.matern.kappa,
            "omega2": self.nugget,
            "nu": self.matern.nu,
            "sites": self.sites.len(),
            "log_likelihood": self.log_likelihood,
        })
    }
}

fn distance_matrix(sites: &[Site]) -> Vec<f64> {
    let n = sites.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let v = haversine_km(sites[i], sites[j]);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Correlation matrix plus `ratio` on the diagonal.
fn correlation_matrix(dist: &[f64], n: usize, m: &Matern, ratio: f64) -> DMatrix<f64> {
    let mut r = DMatrix::zeros(n, n);
    for i in 0..n {
        r[(i, i)] = 1.0 + ratio;
        for j in 0..i {
            let v = m.corr(dist[i * n + j]);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    r
}

/// Cholesky factor, retrying once with `jitter` added to the diagonal.
fn factor(mut m: DMatrix<f64>, jitter: f64) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    for i in 0..m.nrows() {
        m[(i, i)] += jitter;
    }
    m.cholesky().ok_or_else(|| Error::Singular("covariance matrix is not positive definite".into()))
}

/// Profiled fit quantities at `(kappa, ratio = omega2 / psi2)`.
struct Profile {
    neg2ll: f64,
    beta: f64,
    psi2: f64,
}

fn profile(dist: &[f64], y: &DVector<f64>, nu: f64, kappa: f64, ratio: f64) -> Option<Profile> {
    let n = y.len();
    let m = Matern::new(kappa, nu);
    let chol = correlation_matrix(dist, n, &m, ratio).cholesky()?;
    let ones = DVector::from_element(n, 1.0);
    let ri1 = chol.solve(&ones);
    let riy = chol.solve(y);
    let beta = ones.dot(&riy) / ones.dot(&ri1);
    let resid = y - &ones * beta;
    let q = resid.dot(&chol.solve(&resid));
    let psi2 = q / n as f64;
    if !(psi2 > 0.0) {
        return None;
    }
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let neg2ll = n as f64 * ((2.0 * std::f64::consts::PI).ln() + psi2.ln() + 1.0) + logdet;
    neg2ll.is_finite().then_some(Profile { neg2ll, beta, psi2 })
}

/// Maximum likelihood fit of mean, marginal variance, inverse range and nugget
/// with the smoothness `nu` fixed.
pub fn fit_gp(sites: &[Site], observations: &[f64], nu: f64) -> Result<GeostatModel> {
    let n = sites.len();
    if n != observations.len() {
        return Err(Error::InvalidInput("sites and observations differ in length".into()));
    }
    if n < MIN_SITES {
        return Err(Error::InvalidInput(format!("at least {MIN_SITES} sites are required, got {n}")));
    }
    if !(nu > 0.0) {
        return Err(Error::InvalidInput(format!("smoothness must be positive, got {nu}")));
    }
    if observations.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("observations must be finite".into()));
    }
    let dist = distance_matrix(sites);
    let mut positive: Vec<f64> = dist.iter().copied().filter(|&d| d > 0.0).collect();
    if positive.is_empty() {
        return Err(Error::InvalidInput("all sites coincide".into()));
    }
    positive.sort_by(f64::total_cmp);
    let d_min = positive[0];
    let d_max = positive[positive.len() - 1];
    let d_med = positive[positive.len() / 2];

    let mean_obs = observations.iter().sum::<f64>() / n as f64;
    let spread = observations.iter().map(|v| (v - mean_obs).abs()).fold(0.0, f64::max);
    if spread <= 1e-12 * mean_obs.abs().max(1.0) {
        // constant field: no spatial variation to estimate
        let psi2 = f64::MIN_POSITIVE.sqrt() * mean_obs.abs().max(1.0).powi(2);
        return Ok(GeostatModel {
            mean: mean_obs,
            nugget: 0.0,
            matern: MaternParams { psi2, kappa: 1.0 / d_med, nu },
            sites: sites.to_vec(),
            observations: observations.to_vec(),
            log_likelihood: f64::INFINITY,
        });
    }

    let y = DVector::from_column_slice(observations);
    let (lk_lo, lk_hi) = ((0.01 / d_max).ln(), (100.0 / d_min).ln());
    let (lr_lo, lr_hi) = (1e-8f64.ln(), 1e3f64.ln());
    let objective = |v: &[f64]| {
        if v[0] < lk_lo || v[0] > lk_hi || v[1] < lr_lo || v[1] > lr_hi {
            return f64::INFINITY;
        }
        profile(&dist, &y, nu, v[0].exp(), v[1].exp()).map_or(f64::INFINITY, |p| p.neg2ll)
    };
    let opts = NelderMeadOptions { max_evals: 400, f_tol: 1e-7, x_tol: 1e-4 };
    let starts = [[(3.0 / d_med).ln(), 0.1f64.ln()], [(20.0 / d_med).ln(), 0.5f64.ln()]];
    let best = starts
        .iter()
        .map(|s| nelder_mead(objective, s, &[0.7, 1.0], &opts))
        .filter(|m| m.f.is_finite())
        .min_by(|a, b| a.f.total_cmp(&b.f))
        .ok_or_else(|| Error::FitInfeasible("Gaussian process likelihood is not finite".into()))?;
    let kappa = best.x[0].exp();
    let ratio = best.x[1].exp();
    let p = profile(&dist, &y, nu, kappa, ratio)
        .ok_or_else(|| Error::FitInfeasible("Gaussian process likelihood is not finite".into()))?;
    Ok(GeostatModel {
        mean: p.beta,
        nugget: ratio * p.psi2,
        matern: MaternParams { psi2: p.psi2, kappa, nu },
        sites: sites.to_vec(),
        observations: observations.to_vec(),
        log_likelihood: -0.5 * p.neg2ll,
    })
}

/// Prediction state: factor of `K + omega2 I` and the weights it implies.
pub struct Kriger<'a> {
    model: &'a GeostatModel,
    matern: Matern,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

impl<'a> Kriger<'a> {
    pub fn new(model: &'a GeostatModel) -> Result<Self> {
        let n = model.sites.len();
        let p = model.matern;
        let matern = Matern::new(p.kappa, p.nu);
        let dist = distance_matrix(&model.sites);
        let mut k = correlation_matrix(&dist, n, &matern, model.nugget / p.psi2);
        k *= p.psi2;
        let chol = factor(k, 1e-8 * p.psi2)?;
        let resid = DVector::from_iterator(n, model.observations.iter().map(|y| y - model.mean));
        let alpha = chol.solve(&resid);
        Ok(Self { model, matern, chol, alpha })
    }

    /// Posterior mean and variance at one location.
    pub fn predict(&self, target: Site) -> (f64, f64) {
        let p = self.model.matern;
        let k = DVector::from_iterator(
            self.model.sites.len(),
            self.model.sites.iter().map(|s| p.psi2 * self.matern.corr(haversine_km(*s, target))),
        );
        let mean = self.model.mean + k.dot(&self.alpha);
        let v = self.chol.l_dirty().solve_lower_triangular(&k).unwrap_or_else(|| DVector::zeros(k.len()));
        let var = (p.psi2 + self.model.nugget - v.dot(&v)).max(0.0);
        (mean, var)
    }
}

/// Posterior mean and variance at every target, in order.
pub fn krige_predict(model: &GeostatModel, targets: &[Site]) -> Result<Vec<(f64, f64)>> {
    let kriger = Kriger::new(model)?;
    Ok(targets.par_iter().map(|t| kriger.predict(*t)).collect())
}

/// Rectangular lon/lat box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

/// Contiguous United States.
pub const CONUS: BoundingBox = BoundingBox { lon_min: -125.0, lon_max: -66.5, lat_min: 24.5, lat_max: 49.5 };

/// Regular grid, latitude-major, including both box edges where they fall on the lattice.
pub fn grid(bbox: &BoundingBox, resolution: f64) -> Result<Vec<Site>> {
    if !(resolution > 0.0) || bbox.lon_max < bbox.lon_min || bbox.lat_max < bbox.lat_min {
        return Err(Error::InvalidInput("invalid grid specification".into()));
    }
    let steps = |lo: f64, hi: f64| ((hi - lo) / resolution + 1e-9).floor() as usize + 1;
    let (nx, ny) = (steps(bbox.lon_min, bbox.lon_max), steps(bbox.lat_min, bbox.lat_max));
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            out.push(Site::new(bbox.lon_min + i as f64 * resolution, bbox.lat_min + j as f64 * resolution));
        }
    }
    Ok(out)
}

/// Grid CSV `lon,lat,mean,variance`.
pub fn grid_csv(targets: &[Site], predictions: &[(f64, f64)]) -> String {
    let mut out = String::from("lon,lat,mean,variance\n");
    for (s, (m, v)) in targets.iter().zip(predictions) {
        let _ = writeln!(out, "{:.4},{:.4},{:.6},{:.6}", s.lon, s.lat, m, v);
    }
    out
}
