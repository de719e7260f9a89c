//! Nonstationary seasonal return levels, bootstrap intervals and Gumbel Q-Q
//! diagnostics.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::gev::{fit_mle_with, ChangepointConfig, FitOptions, FitResult, SeasonalGevParams, GUMBEL_EPS};
use crate::ingest::{Season, SeasonalMaximaSeries, SEASONS_PER_YEAR};

/// Default projection start used for reported return levels.
pub const DEFAULT_START_YEAR: i32 = 2025;
pub const DEFAULT_REPLICATES: usize = 1000;
/// Replicate failure fraction above which an interval is refused.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

const BRACKET_DOUBLINGS: usize = 5;

/// A fitted seasonal GEV model with the metadata needed for projection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeasonalGevModel {
    pub station_id: String,
    pub params: SeasonalGevParams,
    pub config: ChangepointConfig,
    pub n: usize,
    pub start_year: i32,
    pub data_min: f64,
    pub data_max: f64,
}

impl SeasonalGevModel {
    pub fn new(series: &SeasonalMaximaSeries, params: SeasonalGevParams, config: ChangepointConfig) -> Result<Self> {
        if params.deltas.len() != config.count() {
            return Err(Error::InvalidInput("shift count does not match the configuration".into()));
        }
        let (data_min, data_max) = match (series.min_value(), series.max_value()) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::InvalidInput("series has no observations".into())),
        };
        Ok(Self {
            station_id: series.station_id.clone(),
            params,
            config,
            n: series.n(),
            start_year: series.start_year,
            data_min,
            data_max,
        })
    }

    pub fn from_fit(series: &SeasonalMaximaSeries, fit: &FitResult) -> Result<Self> {
        Self::new(series, fit.params.clone(), fit.config())
    }

    /// Season index of `season` in `year` relative to this model's record.
    pub fn index_of(&self, year: i32, season: Season) -> Result<usize> {
        let t = (year - self.start_year) as i64 * SEASONS_PER_YEAR as i64 + season.number() as i64;
        usize::try_from(t)
            .ok()
            .filter(|&t| t >= 1)
            .ok_or_else(|| Error::InvalidInput(format!("{season} {year} precedes the record")))
    }

    /// Index of spring of the default projection year.
    pub fn default_start(&self) -> Result<usize> {
        self.index_of(DEFAULT_START_YEAR, Season::Spring)
    }

    /// Expected exceedances of `r` by season-`s` maxima over `z` years from `t_i`, minus one.
    fn excess(&self, season: Season, z: usize, t_i: usize, r: f64) -> f64 {
        let first = first_index_of_season(t_i, season);
        let mut sum = 0.0;
        for k in 0..z {
            let t = first + k * SEASONS_PER_YEAR;
            sum += self.params.point_at(t, &self.config).sf(r);
        }
        sum - 1.0
    }
}

/// First index `>= t_i` that falls in `season`.
fn first_index_of_season(t_i: usize, season: Season) -> usize {
    let s = season.index();
    let offset = (s + SEASONS_PER_YEAR - (t_i - 1) % SEASONS_PER_YEAR) % SEASONS_PER_YEAR;
    t_i + offset
}

/// `z`-year return level of `season` from projection start `t_i`: the level
/// whose expected number of exceedances over the window `[t_i, t_i + 4z - 1]`
/// equals one.
pub fn return_level(model: &SeasonalGevModel, season: Season, z: usize, t_i: usize) -> Result<f64> {
    if z < 2 {
        return Err(Error::Domain(format!("return period must be at least 2 years, got {z}")));
    }
    if t_i < 1 {
        return Err(Error::Domain("projection start must be a positive index".into()));
    }
    let g = |r: f64| model.excess(season, z, t_i, r);
    let mut lo = model.data_min - 1.0;
    let mut hi = 10.0 * model.data_max;
    let mut tries = 0;
    loop {
        let (glo, ghi) = (g(lo), g(hi));
        if glo >= 0.0 && ghi <= 0.0 {
            break;
        }
        if tries == BRACKET_DOUBLINGS {
            return Err(Error::Bracketing(format!(
                "no sign change on [{lo}, {hi}] for {season} z={z} t_I={t_i}"
            )));
        }
        let width = (hi - lo).abs().max(1.0);
        if glo < 0.0 {
            lo -= width;
        }
        if ghi > 0.0 {
            hi += width;
        }
        tries += 1;
    }
    // bisect to floating-point resolution (well inside 1e-8 relative)
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r = if g(lo).abs() < g(hi).abs() { lo } else { hi };
    Ok(r)
}

/// A return level with its bootstrap interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReturnLevelEstimate {
    pub station_id: String,
    pub season: Season,
    pub z: usize,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
    pub t_i: usize,
    pub replicates: usize,
}

pub fn return_levels_csv(rows: &[ReturnLevelEstimate]) -> String {
    let mut out = String::from("station_id,season,z,level,lower,upper,B,t_I\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{},{}",
            r.station_id, r.season, r.z, r.level, r.lower, r.upper, r.replicates, r.t_i
        );
    }
    out
}

/// Statistic targeted by a bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReturnTarget {
    pub season: Season,
    pub z: usize,
    pub t_i: usize,
}

impl ReturnTarget {
    fn evaluate(&self, model: &SeasonalGevModel) -> Result<f64> {
        return_level(model, self.season, self.z, self.t_i)
    }
}

/// BCa interval endpoints at one nominal level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BcaBounds {
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BcaResult {
    pub estimate: f64,
    pub bounds: Vec<BcaBounds>,
    pub z0: f64,
    pub acceleration: f64,
    /// Replicates that produced a usable statistic.
    pub replicates: usize,
    pub failures: usize,
}

impl BcaResult {
    pub fn at(&self, level: f64) -> Option<BcaBounds> {
        self.bounds.iter().copied().find(|b| (b.level - level).abs() < 1e-12)
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Bias correction `z0 = Phi^-1(share of replicates below the estimate)`,
/// clamped away from 0 and 1.
pub fn bias_correction(estimate: f64, replicates: &[f64]) -> f64 {
    let b = replicates.len() as f64;
    let below = replicates.iter().filter(|&&v| v < estimate).count() as f64;
    let p = (below / b).clamp(0.5 / b, 1.0 - 0.5 / b);
    std_normal().inverse_cdf(p)
}

/// Jackknife acceleration `sum(mean - v)^3 / (6 [sum(mean - v)^2]^{3/2})`.
pub fn acceleration(jackknife: &[f64]) -> f64 {
    let m = jackknife.iter().sum::<f64>() / jackknife.len() as f64;
    let (mut s2, mut s3) = (0.0, 0.0);
    for v in jackknife {
        let d = m - v;
        s2 += d * d;
        s3 += d * d * d;
    }
    if s2 <= 0.0 {
        return 0.0;
    }
    s3 / (6.0 * s2.powf(1.5))
}

/// Type-7 sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let i = h.floor() as usize;
    let frac = h - i as f64;
    if i + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

/// BCa endpoints from bootstrap replicates and the adjustment constants.
/// Endpoints are clamped so that `lower <= estimate <= upper`.
pub fn bca_bounds(estimate: f64, replicates: &[f64], z0: f64, a: f64, level: f64) -> BcaBounds {
    let normal = std_normal();
    let mut sorted = replicates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let adjusted = |alpha: f64| {
        let za = normal.inverse_cdf(alpha);
        let denom = 1.0 - a * (z0 + za);
        let arg = if denom > 0.0 { z0 + (z0 + za) / denom } else if za > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
        normal.cdf(arg)
    };
    let tail = (1.0 - level) / 2.0;
    let lower = quantile_sorted(&sorted, adjusted(tail)).min(estimate);
    let upper = quantile_sorted(&sorted, adjusted(1.0 - tail)).max(estimate);
    BcaBounds { level, lower, upper }
}

/// Settings of a parametric bootstrap.
#[derive(Debug, Clone)]
pub struct BootstrapSettings {
    pub replicates: usize,
    pub levels: Vec<f64>,
    pub seed: u64,
    pub fit: FitOptions,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self { replicates: DEFAULT_REPLICATES, levels: vec![0.95], seed: 0, fit: FitOptions::scoring() }
    }
}

fn refit_statistic(
    series: &SeasonalMaximaSeries,
    cps: &ChangepointConfig,
    start: &[f64],
    target: &ReturnTarget,
    opts: &FitOptions,
    rng: &mut ChaCha8Rng,
) -> Option<f64> {
    let fit = fit_mle_with(series, cps, opts, Some(start), rng).ok()?;
    if !fit.converged {
        return None;
    }
    let model = SeasonalGevModel::from_fit(series, &fit).ok()?;
    target.evaluate(&model).ok().filter(|v| v.is_finite())
}

/// Parametric BCa bootstrap interval for a return level.
///
/// Replicates are simulated from `fit` on the observed-season pattern of
/// `series` with the changepoint configuration held fixed, and refit from the
/// original optimum. The acceleration comes from leave-one-observation-out
/// refits of the original series.
pub fn bca_interval(
    series: &SeasonalMaximaSeries,
    fit: &FitResult,
    target: &ReturnTarget,
    settings: &BootstrapSettings,
) -> Result<BcaResult> {
    if settings.replicates < 2 {
        return Err(Error::InvalidInput("at least two bootstrap replicates are required".into()));
    }
    if !fit.converged {
        return Err(Error::InvalidInput("bootstrap requires a convergent fit".into()));
    }
    let cps = fit.config();
    let model = SeasonalGevModel::from_fit(series, fit)?;
    let estimate = target.evaluate(&model)?;
    let theta = fit.param_vec();

    let stats: Vec<Option<f64>> = (0..settings.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
            rng.set_stream(b as u64 + 1);
            let values = series
                .entries()
                .map(|e| e.value.map(|_| fit.params.point_at(e.t, &cps).sample(&mut rng)))
                .collect();
            let replicate = SeasonalMaximaSeries::new(series.station_id.clone(), series.start_year, values);
            refit_statistic(&replicate, &cps, &theta, target, &settings.fit, &mut rng)
        })
        .collect();
    let replicates: Vec<f64> = stats.iter().flatten().copied().collect();
    let failures = settings.replicates - replicates.len();
    if failures as f64 > MAX_FAILURE_FRACTION * settings.replicates as f64 {
        return Err(Error::IntervalUnreliable { failed: failures, total: settings.replicates });
    }

    let observed: Vec<usize> = series.entries().filter(|e| e.value.is_some()).map(|e| e.t).collect();
    let jackknife: Vec<f64> = observed
        .par_iter()
        .filter_map(|&t| {
            let mut values = series.values.clone();
            values[t - 1] = None;
            let reduced = SeasonalMaximaSeries::new(series.station_id.clone(), series.start_year, values);
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 0x6a09_e667_f3bc_c908);
            rng.set_stream(t as u64);
            refit_statistic(&reduced, &cps, &theta, target, &settings.fit, &mut rng)
        })
        .collect();

    let z0 = bias_correction(estimate, &replicates);
    let a = if jackknife.len() >= 2 { acceleration(&jackknife) } else { 0.0 };
    let bounds = settings.levels.iter().map(|&l| bca_bounds(estimate, &replicates, z0, a, l)).collect();
    Ok(BcaResult { estimate, bounds, z0, acceleration: a, replicates: replicates.len(), failures })
}

/// One point of a Gumbel-scale Q-Q plot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QqPoint {
    pub rank: usize,
    pub theoretical: f64,
    pub empirical: f64,
    /// The transform argument was not positive; `empirical` is then infinite.
    pub flag: bool,
}

/// Standardizes observations to the standard Gumbel scale under the fitted
/// model and pairs the sorted values with Gumbel plotting-position quantiles.
pub fn gumbel_qq(series: &SeasonalMaximaSeries, params: &SeasonalGevParams, cps: &ChangepointConfig) -> Vec<QqPoint> {
    let xi = params.xi;
    let mut transformed: Vec<(f64, bool)> = series
        .entries()
        .filter_map(|e| e.value.map(|x| (e.t, x)))
        .map(|(t, x)| {
            let p = params.point_at(t, cps);
            let z = (x - p.mu) / p.sigma;
            if xi.abs() < GUMBEL_EPS {
                return (z, false);
            }
            let arg = 1.0 + xi * z;
            if arg <= 0.0 {
                let edge = if xi > 0.0 { f64::NEG_INFINITY } else { f64::INFINITY };
                (edge, true)
            } else {
                (arg.ln() / xi, false)
            }
        })
        .collect();
    transformed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let m = transformed.len() as f64;
    transformed
        .into_iter()
        .enumerate()
        .map(|(i, (v, flag))| {
            let rank = i + 1;
            let q = rank as f64 / (m + 1.0);
            QqPoint { rank, theoretical: -(-q.ln()).ln(), empirical: v, flag }
        })
        .collect()
}

pub fn qq_csv(points: &[QqPoint]) -> String {
    let mut out = String::from("rank,theoretical,empirical,flag\n");
    for p in points {
        let _ = writeln!(out, "{},{:.6},{:.6},{}", p.rank, p.theoretical, p.empirical, p.flag as u8);
    }
    out
}

/// Kolmogorov-Smirnov distance of values against the standard Gumbel law.
pub fn ks_distance_gumbel(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = (-(-x).exp()).exp();
            let i = i as f64;
            (f - i / n).abs().max(((i + 1.0) / n - f).abs())
        })
        .fold(0.0, f64::max)
}
