//! MDL-penalized changepoint selection.

mod ga;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::error::Result;
use crate::gev::{fit_mle, fit_mle_with, ChangepointConfig, Design, FitOptions, FitResult};
use crate::ingest::SeasonalMaximaSeries;

pub use ga::{
    crossover, ga_search, ga_search_with, mutate, parent_select, GaOutcome, GaSettings, GenerationRecord, MutationScale,
    Ranked,
};

/// Minimum description length penalty of a configuration.
///
/// `ln(c+1) + 1/2 sum_{j=2}^{c+1} ln m_j + sum_{j=2}^{c+1} ln tau_j`, with
/// `tau_{c+1} = n + 1` and `m_j` the non-missing count of segment
/// `[tau_{j-1}, tau_j)`.
pub fn mdl_penalty(cps: &ChangepointConfig, series: &SeasonalMaximaSeries) -> f64 {
    let c = cps.count();
    if c == 0 {
        return 0.0;
    }
    let n = series.n();
    let taus = cps.taus();
    let mut pen = ((c + 1) as f64).ln();
    for j in 0..c {
        let end = if j + 1 < c { taus[j + 1] } else { n + 1 };
        let m = series.observed_between(taus[j], end);
        pen += 0.5 * (m.max(1) as f64).ln() + (end as f64).ln();
    }
    pen
}

/// A configuration with its fit and penalized score `2 (-l) + penalty`.
#[derive(Debug, Clone)]
pub struct ScoredConfig {
    pub config: ChangepointConfig,
    /// `None` when the fit failed; the score is then `+inf`.
    pub fit: Option<FitResult>,
    pub penalty: f64,
    pub score: f64,
}

impl ScoredConfig {
    pub fn is_feasible(&self) -> bool {
        self.score.is_finite()
    }

    pub fn to_json(&self, series: &SeasonalMaximaSeries) -> serde_json::Value {
        json!({
            "taus": self.config.taus(),
            "labels": self.config.label(series),
            "c": self.config.count(),
            "penalty": self.penalty,
            "score": if self.score.is_finite() { json!(self.score) } else { json!(null) },
            "fit": self.fit.as_ref().map(FitResult::to_json),
        })
    }
}

/// Full fit of one configuration and its penalized score.
pub fn penalized_score(series: &SeasonalMaximaSeries, cps: &ChangepointConfig) -> ScoredConfig {
    let penalty = mdl_penalty(cps, series);
    match fit_mle(series, cps) {
        Ok(fit) if fit.converged && fit.neg_loglik.is_finite() => {
            let score = 2.0 * fit.neg_loglik + penalty;
            ScoredConfig { config: cps.clone(), fit: Some(fit), penalty, score }
        }
        Ok(fit) => ScoredConfig { config: cps.clone(), fit: Some(fit), penalty, score: f64::INFINITY },
        Err(_) => ScoredConfig { config: cps.clone(), fit: None, penalty, score: f64::INFINITY },
    }
}

/// Memoizing scorer used by the search.
///
/// Fits are warm-started from the changepoint-free fit with shifts set to
/// differences of segment residual means. Restart seeds derive from the
/// configuration, so every score is a pure function of the configuration.
pub struct Scorer<'a> {
    series: &'a SeasonalMaximaSeries,
    base: Vec<f64>,
    residuals: Vec<(usize, f64)>,
    options: FitOptions,
    cache: Mutex<HashMap<ChangepointConfig, f64>>,
    fits: AtomicUsize,
}

impl<'a> Scorer<'a> {
    /// Fits the changepoint-free model; errors when the series cannot be fit.
    pub fn new(series: &'a SeasonalMaximaSeries) -> Result<Self> {
        let empty = ChangepointConfig::empty();
        let base_fit = fit_mle(series, &empty)?;
        let base = base_fit.param_vec();
        let design = Design::new(series, &empty);
        let residuals = design
            .obs
            .iter()
            .zip(design.fitted(&base))
            .map(|(o, (mu, _))| (o.t, o.x - mu))
            .collect();
        let mut cache = HashMap::new();
        if base_fit.converged {
            cache.insert(empty, 2.0 * base_fit.neg_loglik);
        }
        Ok(Self {
            series,
            base,
            residuals,
            options: FitOptions::scoring(),
            cache: Mutex::new(cache),
            fits: AtomicUsize::new(1),
        })
    }

    pub fn series(&self) -> &SeasonalMaximaSeries {
        self.series
    }

    /// Number of likelihood fits performed so far.
    pub fn fits(&self) -> usize {
        self.fits.load(Ordering::Relaxed)
    }

    fn warm_start(&self, cps: &ChangepointConfig) -> Vec<f64> {
        let c = cps.count();
        let mut sum = vec![0.0; c + 1];
        let mut cnt = vec![0usize; c + 1];
        for &(t, r) in &self.residuals {
            let j = cps.segment_of(t);
            sum[j] += r;
            cnt[j] += 1;
        }
        let mean: Vec<f64> = sum.iter().zip(&cnt).map(|(s, &k)| if k > 0 { s / k as f64 } else { 0.0 }).collect();
        let mut th = Vec::with_capacity(self.base.len() + c);
        th.extend(self.base[..4].iter().map(|b| b + mean[0]));
        th.extend_from_slice(&self.base[4..8]);
        th.extend((1..=c).map(|j| mean[j] - mean[0]));
        th.extend_from_slice(&self.base[8..]);
        th
    }

    fn compute(&self, cps: &ChangepointConfig) -> f64 {
        self.fits.fetch_add(1, Ordering::Relaxed);
        let start = self.warm_start(cps);
        let mut rng = ChaCha8Rng::seed_from_u64(crate::gev::config_seed(self.series.n(), cps));
        match fit_mle_with(self.series, cps, &self.options, Some(&start), &mut rng) {
            Ok(fit) if fit.converged && fit.neg_loglik.is_finite() => {
                2.0 * fit.neg_loglik + mdl_penalty(cps, self.series)
            }
            _ => f64::INFINITY,
        }
    }

    /// Full-precision fit (restarts, finite-difference covariance) warm-started
    /// like the search fits.
    pub fn full_score(&self, cps: &ChangepointConfig) -> ScoredConfig {
        let penalty = mdl_penalty(cps, self.series);
        let start = self.warm_start(cps);
        let mut rng = ChaCha8Rng::seed_from_u64(crate::gev::config_seed(self.series.n(), cps));
        let fit = fit_mle_with(self.series, cps, &FitOptions::default(), Some(&start), &mut rng).ok();
        let score = match &fit {
            Some(f) if f.converged && f.neg_loglik.is_finite() => 2.0 * f.neg_loglik + penalty,
            _ => f64::INFINITY,
        };
        ScoredConfig { config: cps.clone(), fit, penalty, score }
    }

    /// Penalized score of one configuration (`+inf` when the fit fails).
    pub fn score(&self, cps: &ChangepointConfig) -> f64 {
        if let Some(&v) = self.cache.lock().expect("score cache").get(cps) {
            return v;
        }
        let v = self.compute(cps);
        self.cache.lock().expect("score cache").insert(cps.clone(), v);
        v
    }

    /// Scores a batch in parallel; results are in input order.
    pub fn score_many(&self, configs: &[ChangepointConfig]) -> Vec<f64> {
        let pending: Vec<ChangepointConfig> = {
            let cache = self.cache.lock().expect("score cache");
            let mut seen = std::collections::HashSet::new();
            configs.iter().filter(|c| !cache.contains_key(*c) && seen.insert(*c)).cloned().collect()
        };
        let fresh: Vec<f64> = pending.par_iter().map(|c| self.compute(c)).collect();
        let mut cache = self.cache.lock().expect("score cache");
        for (c, v) in pending.into_iter().zip(fresh) {
            cache.insert(c, v);
        }
        configs.iter().map(|c| cache[c]).collect()
    }
}

/// Best configuration with at most `max_c` changepoints by full enumeration
/// (only practical for short series).
pub fn exhaustive_search(
    series: &SeasonalMaximaSeries,
    max_c: usize,
    min_segment: usize,
) -> Result<(ChangepointConfig, f64)> {
    exhaustive_search_with(&Scorer::new(series)?, max_c, min_segment)
}

/// [`exhaustive_search`] on an existing scorer, sharing its cache.
pub fn exhaustive_search_with(scorer: &Scorer<'_>, max_c: usize, min_segment: usize) -> Result<(ChangepointConfig, f64)> {
    let series = scorer.series();
    let n = series.n();
    let mut configs = Vec::new();
    let mut current = Vec::new();
    enumerate(2, n, max_c, &mut current, &mut configs);
    let configs: Vec<ChangepointConfig> = configs
        .into_iter()
        .map(ChangepointConfig::from_sorted_unchecked)
        .filter(|c| c.respects_min_segment(series, min_segment))
        .collect();
    let scores = scorer.score_many(&configs);
    let best = configs
        .into_iter()
        .zip(scores)
        .min_by(|a, b| ga::rank_order(&a.0, a.1, &b.0, b.1))
        .expect("empty configuration always present");
    Ok(best)
}

fn enumerate(from: usize, n: usize, left: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    out.push(current.clone());
    if left == 0 {
        return;
    }
    for t in from..=n {
        current.push(t);
        enumerate(t + 1, n, left - 1, current, out);
        current.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn series(n: usize, missing: impl Fn(usize) -> bool) -> SeasonalMaximaSeries {
        SeasonalMaximaSeries::new("s", 1900, (1..=n).map(|t| (!missing(t)).then_some(t as f64)).collect())
    }

    #[test]
    fn empty_configuration_has_no_penalty() {
        assert_eq!(mdl_penalty(&ChangepointConfig::empty(), &series(100, |_| false)), 0.0);
    }

    #[test]
    fn penalty_direct_evaluation() {
        let s = series(100, |_| false);
        let cps = ChangepointConfig::new(vec![50], 100).unwrap();
        assert_abs_diff_eq!(mdl_penalty(&cps, &s), 7.274_180_513_763_367, epsilon = 1e-12);
        let s = series(100, |t| (60..70).contains(&t));
        assert_abs_diff_eq!(mdl_penalty(&cps, &s), 7.165_053_730_753_359, epsilon = 1e-12);
    }

    #[test]
    fn penalty_increases_with_count() {
        let s = series(400, |_| false);
        let mut last = 0.0;
        for c in 1..10 {
            let taus = (1..=c).map(|j| 1 + j * 400 / (c + 1)).collect();
            let p = mdl_penalty(&ChangepointConfig::new(taus, 400).unwrap(), &s);
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn enumeration_counts() {
        let mut out = Vec::new();
        enumerate(2, 40, 2, &mut Vec::new(), &mut out);
        assert_eq!(out.len(), 1 + 39 + 39 * 38 / 2);
    }
}
