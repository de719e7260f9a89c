//! Genetic search over changepoint configurations.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ScoredConfig, Scorer};
use crate::error::{Error, Result};
use crate::gev::ChangepointConfig;
use crate::ingest::SeasonalMaximaSeries;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaSettings {
    /// Population size `L`.
    pub population: usize,
    /// Probability that a parent time survives into the child.
    pub keep_prob: f64,
    /// Probabilities of shifting a kept time by -1, 0, +1.
    pub shift_probs: [f64; 3],
    /// Mutation probability, interpreted according to `mutation`.
    pub p_mut: f64,
    pub mutation: MutationScale,
    /// Stop after this many generations without improvement.
    pub patience: usize,
    pub max_generations: usize,
    pub seed: u64,
    /// Minimum number of observed seasons per segment.
    pub min_segment: usize,
    /// Expected changepoint count of initial configurations.
    pub initial_rate: f64,
    /// Upper bound on the changepoint count; larger candidates are thinned at
    /// random.
    pub max_changepoints: Option<usize>,
}

impl Default for GaSettings {
    fn default() -> Self {
        Self {
            population: 200,
            keep_prob: 0.5,
            shift_probs: [0.3, 0.4, 0.3],
            p_mut: 0.05,
            mutation: MutationScale::PerChild,
            patience: 50,
            max_generations: 500,
            seed: 0,
            min_segment: 8,
            initial_rate: 3.0,
            max_changepoints: None,
        }
    }
}

impl GaSettings {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.population < 2 {
            return Err(Error::InvalidConfig("population must be at least 2".into()));
        }
        if !prob(self.keep_prob) || !prob(self.p_mut) || !self.shift_probs.iter().all(|&p| prob(p)) {
            return Err(Error::InvalidConfig("probabilities must lie in [0, 1]".into()));
        }
        if (self.shift_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("shift probabilities must sum to 1".into()));
        }
        if self.max_generations == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig("generation cap and patience must be positive".into()));
        }
        if !(self.initial_rate >= 0.0) {
            return Err(Error::InvalidConfig("initial rate must be non-negative".into()));
        }
        Ok(())
    }

    /// Per-index addition probability for a series of length `n`.
    pub fn index_mutation_rate(&self, n: usize) -> f64 {
        match self.mutation {
            MutationScale::PerIndex => self.p_mut,
            MutationScale::PerChild if n > 1 => self.p_mut / (n - 1) as f64,
            MutationScale::PerChild => 0.0,
        }
    }
}

/// How `p_mut` is applied during the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MutationScale {
    /// Every absent index is added with probability `p_mut`.
    PerIndex,
    /// Every absent index is added with probability `p_mut / (n - 1)`, so a
    /// child gains `p_mut` changepoints on average.
    PerChild,
}

/// Anything with a configuration and a score can be ranked.
pub trait Ranked {
    fn config(&self) -> &ChangepointConfig;
    fn score(&self) -> f64;
}

impl Ranked for ScoredConfig {
    fn config(&self) -> &ChangepointConfig {
        &self.config
    }
    fn score(&self) -> f64 {
        self.score
    }
}

impl Ranked for (ChangepointConfig, f64) {
    fn config(&self) -> &ChangepointConfig {
        &self.0
    }
    fn score(&self) -> f64 {
        self.1
    }
}

/// Ranking order: lower score, then fewer changepoints, then smaller times.
pub(crate) fn rank_order(a: &ChangepointConfig, sa: f64, b: &ChangepointConfig, sb: f64) -> Ordering {
    sa.total_cmp(&sb).then(a.count().cmp(&b.count())).then_with(|| a.taus().cmp(b.taus()))
}

/// Draws two distinct ranks from `0..len` (0 = best) with weights `len - rank`.
fn pick_ranks<R: Rng + ?Sized>(len: usize, rng: &mut R) -> (usize, usize) {
    let total = len * (len + 1) / 2;
    let draw = |rng: &mut R, total: usize, skip: Option<usize>| {
        let mut u = rng.random_range(0..total);
        for r in 0..len {
            if Some(r) == skip {
                continue;
            }
            let w = len - r;
            if u < w {
                return r;
            }
            u -= w;
        }
        unreachable!("weights cover the draw")
    };
    let first = draw(rng, total, None);
    let second = draw(rng, total - (len - first), Some(first));
    (first, second)
}

/// Selects two distinct parents with probability proportional to reversed rank.
pub fn parent_select<'a, T: Ranked, R: Rng + ?Sized>(population: &'a [T], rng: &mut R) -> (&'a T, &'a T) {
    assert!(population.len() >= 2, "parent selection needs at least two candidates");
    let mut order: Vec<usize> = (0..population.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&population[i], &population[j]);
        rank_order(a.config(), a.score(), b.config(), b.score())
    });
    let (i, j) = pick_ranks(population.len(), rng);
    (&population[order[i]], &population[order[j]])
}

/// Prefix counts of observed seasons for fast validity repair.
pub(crate) struct Admissible {
    prefix: Vec<usize>,
    n: usize,
    min_segment: usize,
}

impl Admissible {
    pub(crate) fn new(series: &SeasonalMaximaSeries, min_segment: usize) -> Self {
        let mut prefix = Vec::with_capacity(series.n() + 1);
        prefix.push(0);
        for v in &series.values {
            prefix.push(prefix.last().unwrap() + v.is_some() as usize);
        }
        Self { prefix, n: series.n(), min_segment }
    }

    /// Observed seasons with index in `[from, to)`.
    fn observed(&self, from: usize, to: usize) -> usize {
        self.prefix[to - 1] - self.prefix[from - 1]
    }

    /// Sorts, clamps to `[2, n]`, deduplicates and drops times that leave a
    /// segment short of observations (the later offender goes).
    pub(crate) fn repair(&self, mut taus: Vec<usize>) -> ChangepointConfig {
        if self.n < 2 {
            return ChangepointConfig::empty();
        }
        for t in taus.iter_mut() {
            *t = (*t).clamp(2, self.n);
        }
        taus.sort_unstable();
        taus.dedup();
        let mut kept = Vec::with_capacity(taus.len());
        let mut prev = 1;
        for t in taus {
            if self.observed(prev, t) >= self.min_segment {
                kept.push(t);
                prev = t;
            }
        }
        while let Some(&last) = kept.last() {
            if self.observed(last, self.n + 1) >= self.min_segment {
                break;
            }
            kept.pop();
        }
        ChangepointConfig::from_sorted_unchecked(kept)
    }
}

fn crossover_inner<R: Rng + ?Sized>(
    a: &ChangepointConfig,
    b: &ChangepointConfig,
    rng: &mut R,
    adm: &Admissible,
    settings: &GaSettings,
) -> ChangepointConfig {
    let mut union: Vec<usize> = a.taus().iter().chain(b.taus()).copied().collect();
    union.sort_unstable();
    union.dedup();
    let [down, stay, _] = settings.shift_probs;
    let mut child = Vec::with_capacity(union.len());
    for t in union {
        if rng.random::<f64>() >= settings.keep_prob {
            continue;
        }
        let u: f64 = rng.random();
        let shifted = if u < down {
            t.saturating_sub(1)
        } else if u < down + stay {
            t
        } else {
            t + 1
        };
        child.push(shifted);
    }
    adm.repair(child)
}

fn mutate_inner<R: Rng + ?Sized>(
    child: &ChangepointConfig,
    rng: &mut R,
    adm: &Admissible,
    p_mut: f64,
) -> ChangepointConfig {
    if p_mut <= 0.0 {
        return child.clone();
    }
    let mut taus = child.taus().to_vec();
    let present: HashSet<usize> = taus.iter().copied().collect();
    for t in 2..=adm.n {
        if !present.contains(&t) && rng.random::<f64>() < p_mut {
            taus.push(t);
        }
    }
    adm.repair(taus)
}

/// Child of two parents: union of times, each kept with `keep_prob` and
/// shifted by -1/0/+1, then repaired for validity.
pub fn crossover<R: Rng + ?Sized>(
    a: &ChangepointConfig,
    b: &ChangepointConfig,
    rng: &mut R,
    series: &SeasonalMaximaSeries,
    settings: &GaSettings,
) -> ChangepointConfig {
    crossover_inner(a, b, rng, &Admissible::new(series, settings.min_segment), settings)
}

/// Adds every admissible absent index independently with probability `p_mut`,
/// then repairs for validity.
pub fn mutate<R: Rng + ?Sized>(
    child: &ChangepointConfig,
    rng: &mut R,
    series: &SeasonalMaximaSeries,
    p_mut: f64,
    min_segment: usize,
) -> ChangepointConfig {
    mutate_inner(child, rng, &Admissible::new(series, min_segment), p_mut)
}

fn random_config<R: Rng + ?Sized>(rng: &mut R, adm: &Admissible, rate: f64) -> ChangepointConfig {
    let p = if adm.n > 1 { (rate / adm.n as f64).min(1.0) } else { 0.0 };
    let taus = (2..=adm.n).filter(|_| rng.random::<f64>() < p).collect();
    adm.repair(taus)
}

/// Drops randomly chosen times until at most `max` remain. Merging segments
/// cannot break the minimum segment length.
fn thin<R: Rng + ?Sized>(cfg: ChangepointConfig, max: Option<usize>, rng: &mut R) -> ChangepointConfig {
    match max {
        Some(max) if cfg.count() > max => {
            let mut keep = rand::seq::index::sample(rng, cfg.count(), max).into_vec();
            keep.sort_unstable();
            ChangepointConfig::from_sorted_unchecked(keep.into_iter().map(|i| cfg.taus()[i]).collect())
        }
        _ => cfg,
    }
}

/// Best configuration of one generation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_score: f64,
    pub best_c: usize,
    pub best_taus: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct GaOutcome {
    pub best: ScoredConfig,
    pub trace: Vec<GenerationRecord>,
    pub generations: usize,
    /// True when the patience criterion stopped the search.
    pub converged: bool,
    /// Likelihood fits performed (cache misses).
    pub fits: usize,
}

impl GaOutcome {
    /// Trace as CSV `generation,best_score,best_c,best_taus` (times space separated).
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("generation,best_score,best_c,best_taus\n");
        for r in &self.trace {
            let taus: Vec<String> = r.best_taus.iter().map(|t| t.to_string()).collect();
            let _ = writeln!(out, "{},{:.6},{},{}", r.generation, r.best_score, r.best_c, taus.join(" "));
        }
        out
    }
}

/// Genetic search for the configuration minimizing the penalized score.
pub fn ga_search(series: &SeasonalMaximaSeries, settings: &GaSettings) -> Result<GaOutcome> {
    settings.validate()?;
    let scorer = Scorer::new(series)?;
    ga_search_with(&scorer, settings)
}

/// Genetic search using an existing scorer (and its cache).
pub fn ga_search_with(scorer: &Scorer<'_>, settings: &GaSettings) -> Result<GaOutcome> {
    settings.validate()?;
    let series = scorer.series();
    let adm = Admissible::new(series, settings.min_segment);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let l = settings.population;
    let mutation_rate = settings.index_mutation_rate(series.n());

    let mut configs = Vec::with_capacity(l);
    let mut seen = HashSet::new();
    let mut attempts = 0;
    while configs.len() < l {
        let cfg = random_config(&mut rng, &adm, settings.initial_rate);
        let cfg = thin(cfg, settings.max_changepoints, &mut rng);
        attempts += 1;
        if seen.insert(cfg.clone()) || attempts > 20 * l {
            configs.push(cfg);
        }
    }
    let mut population = rank(configs, scorer);
    let mut trace = vec![record(0, &population[0])];
    let mut stale = 0;
    let mut converged = false;
    let mut generation = 0;

    while generation < settings.max_generations {
        generation += 1;
        let elite = population[0].clone();
        let mut children = vec![elite.0.clone()];
        let mut seen: HashSet<ChangepointConfig> = children.iter().cloned().collect();
        let mut attempts = 0;
        while children.len() < l {
            let (i, j) = pick_ranks(l, &mut rng);
            let child = crossover_inner(&population[i].0, &population[j].0, &mut rng, &adm, settings);
            let child = mutate_inner(&child, &mut rng, &adm, mutation_rate);
            let child = thin(child, settings.max_changepoints, &mut rng);
            attempts += 1;
            if seen.insert(child.clone()) || attempts > 20 * l {
                children.push(child);
            }
        }
        population = rank(children, scorer);
        trace.push(record(generation, &population[0]));
        if population[0].1 < elite.1 {
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= settings.patience {
            converged = true;
            break;
        }
    }

    let best_config = population[0].0.clone();
    if !population[0].1.is_finite() {
        return Err(Error::FitInfeasible("no configuration could be fit".into()));
    }
    let best = scorer.full_score(&best_config);
    Ok(GaOutcome { best, trace, generations: generation, converged, fits: scorer.fits() })
}

fn rank(configs: Vec<ChangepointConfig>, scorer: &Scorer<'_>) -> Vec<(ChangepointConfig, f64)> {
    let scores = scorer.score_many(&configs);
    let mut pop: Vec<(ChangepointConfig, f64)> = configs.into_iter().zip(scores).collect();
    pop.sort_by(|a, b| rank_order(&a.0, a.1, &b.0, b.1));
    pop
}

fn record(generation: usize, best: &(ChangepointConfig, f64)) -> GenerationRecord {
    GenerationRecord {
        generation,
        best_score: best.1,
        best_c: best.0.count(),
        best_taus: best.0.taus().to_vec(),
    }
}
