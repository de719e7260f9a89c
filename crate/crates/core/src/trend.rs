//! Seasonal and long-term trend summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gev::{ChangepointConfig, FitResult, SeasonalGevParams};
use crate::ingest::{SeasonalMaximaSeries, Season};

/// Two-sided 5% critical value.
pub const Z_CRITICAL: f64 = 1.96;

/// Default flag threshold for with/without-changepoint trend differences
/// (mm/day per century).
pub const DIFFERENCE_THRESHOLD: f64 = 10.0;

/// Average of the four seasonal trends.
pub fn long_term_trend(beta1: &[f64; 4]) -> f64 {
    beta1.iter().sum::<f64>() / 4.0
}

/// Standard error of [`long_term_trend`] from the 4x4 covariance of the
/// seasonal trends: `(1/4) sqrt(1' G 1)`.
pub fn long_term_se(cov: &[[f64; 4]; 4]) -> Result<f64> {
    let total: f64 = cov.iter().flatten().sum();
    if total < 0.0 || total.is_nan() {
        return Err(Error::InvalidCovariance(format!("1'G1 = {total} is negative")));
    }
    Ok(total.sqrt() / 4.0)
}

pub fn z_statistic(estimate: f64, se: f64) -> Result<f64> {
    if !(se > 0.0) {
        return Err(Error::Domain(format!("standard error must be positive, got {se}")));
    }
    Ok(estimate / se)
}

pub fn is_significant(z: f64, threshold: f64) -> bool {
    z.abs() > threshold
}

/// Multiplicative change in the scale per century, `exp(lambda1)`.
pub fn variability_multiplier(lambda1: f64) -> f64 {
    lambda1.exp()
}

/// Per-station trend inference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendSummary {
    pub station_id: String,
    pub taus: Vec<usize>,
    pub beta1: [f64; 4],
    pub beta1_se: [f64; 4],
    pub lambda1: [f64; 4],
    pub lambda1_se: [f64; 4],
    pub multipliers: [f64; 4],
    pub lta: f64,
    pub lta_se: f64,
    /// NaN where the standard error is unavailable.
    pub z: [f64; 4],
    pub z_lta: f64,
}

impl TrendSummary {
    pub fn from_fit(station_id: impl Into<String>, fit: &FitResult) -> Result<Self> {
        let c = fit.changepoints();
        let p = SeasonalGevParams::names(c).len();
        if fit.covariance.len() != p {
            return Err(Error::InvalidCovariance(format!("expected {p}x{p} covariance")));
        }
        let b = |s| SeasonalGevParams::beta1_index(s);
        let l = |s| SeasonalGevParams::lambda1_index(s, c);
        let mut cov = [[0.0; 4]; 4];
        for (i, row) in cov.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = fit.covariance[b(i)][b(j)];
            }
        }
        let beta1 = fit.params.beta1;
        let lambda1 = fit.params.lambda1;
        let beta1_se = std::array::from_fn(|s| fit.covariance[b(s)][b(s)].sqrt());
        let lambda1_se = std::array::from_fn(|s| fit.covariance[l(s)][l(s)].sqrt());
        let lta = long_term_trend(&beta1);
        let lta_se = long_term_se(&cov).unwrap_or(f64::NAN);
        let z: [f64; 4] = std::array::from_fn(|s| z_statistic(beta1[s], beta1_se[s]).unwrap_or(f64::NAN));
        Ok(Self {
            station_id: station_id.into(),
            taus: fit.taus.clone(),
            beta1,
            beta1_se,
            lambda1,
            lambda1_se,
            multipliers: lambda1.map(variability_multiplier),
            lta,
            lta_se,
            z,
            z_lta: z_statistic(lta, lta_se).unwrap_or(f64::NAN),
        })
    }

    pub fn significant(&self, threshold: f64) -> [bool; 4] {
        self.z.map(|z| is_significant(z, threshold))
    }
}

/// Header and rows of the per-station trend CSV.
pub fn trend_summary_csv(rows: &[TrendSummary]) -> String {
    let mut out = String::from("station_id,c,taus");
    for prefix in ["beta1", "beta1_se", "lambda1", "lambda1_se", "multiplier", "z"] {
        for s in Season::ALL {
            let _ = write!(out, ",{prefix}_{s}");
        }
    }
    out.push_str(",lta,lta_se,z_lta\n");
    for r in rows {
        let taus: Vec<String> = r.taus.iter().map(|t| t.to_string()).collect();
        let _ = write!(out, "{},{},{}", r.station_id, r.taus.len(), taus.join(" "));
        for block in [&r.beta1, &r.beta1_se, &r.lambda1, &r.lambda1_se, &r.multipliers, &r.z] {
            for v in block {
                let _ = write!(out, ",{v:.6}");
            }
        }
        let _ = writeln!(out, ",{:.6},{:.6},{:.6}", r.lta, r.lta_se, r.z_lta);
    }
    out
}

/// Seasonal trend differences with minus without changepoints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendComparison {
    pub station_id: String,
    pub differences: [f64; 4],
    pub flagged: [bool; 4],
    pub threshold: f64,
}

pub fn compare_trends(with_cp: &TrendSummary, without_cp: &TrendSummary, threshold: f64) -> Result<TrendComparison> {
    if with_cp.station_id != without_cp.station_id {
        return Err(Error::StationMismatch(with_cp.station_id.clone(), without_cp.station_id.clone()));
    }
    let differences: [f64; 4] = std::array::from_fn(|s| with_cp.beta1[s] - without_cp.beta1[s]);
    Ok(TrendComparison {
        station_id: with_cp.station_id.clone(),
        differences,
        flagged: differences.map(|d| d.abs() > threshold),
        threshold,
    })
}

pub fn comparison_csv(rows: &[TrendComparison]) -> String {
    let mut out = String::from("station_id");
    for s in Season::ALL {
        let _ = write!(out, ",diff_{s}");
    }
    for s in Season::ALL {
        let _ = write!(out, ",flag_{s}");
    }
    out.push('\n');
    for r in rows {
        out.push_str(&r.station_id);
        for d in r.differences {
            let _ = write!(out, ",{d:.6}");
        }
        for f in r.flagged {
            let _ = write!(out, ",{}", f as u8);
        }
        out.push('\n');
    }
    out
}

/// Yearly tally of changepoint times and the distribution of `c` over stations.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ChangepointHistogram {
    pub by_year: BTreeMap<i32, usize>,
    /// Station counts for c = 0, 1, 2 and 3 or more.
    pub stations_by_count: [usize; 4],
    pub mean_count: f64,
    pub stations: usize,
}

impl ChangepointHistogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("year,count\n");
        for (y, k) in &self.by_year {
            let _ = writeln!(out, "{y},{k}");
        }
        out
    }
}

/// Histogram over station results; winter changepoints count toward
/// December's year.
pub fn changepoint_time_histogram<'a, I>(results: I) -> ChangepointHistogram
where
    I: IntoIterator<Item = (&'a SeasonalMaximaSeries, &'a ChangepointConfig)>,
{
    let mut h = ChangepointHistogram::default();
    let mut total = 0;
    for (series, cps) in results {
        h.stations += 1;
        total += cps.count();
        h.stations_by_count[cps.count().min(3)] += 1;
        for &t in cps.taus() {
            *h.by_year.entry(series.year_of(t)).or_default() += 1;
        }
    }
    if h.stations > 0 {
        h.mean_count = total as f64 / h.stations as f64;
    }
    h
}
