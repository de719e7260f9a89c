use precip_cp::changepoint::{exhaustive_search_with, ga_search, ga_search_with, GaSettings, Scorer};
use precip_cp::gev::{ChangepointConfig, SeasonalGevParams};
use precip_cp::ingest::SeasonalMaximaSeries;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn simulate(shift: f64, n: usize, tau: usize, seed: u64) -> SeasonalMaximaSeries {
    let p = SeasonalGevParams {
        beta0: [30.0, 35.0, 24.0, 23.0],
        beta1: [0.0; 4],
        deltas: vec![shift],
        lambda0: [2.2, 2.3, 2.1, 2.0],
        lambda1: [0.0; 4],
        xi: 0.05,
    };
    let cps = ChangepointConfig::new(vec![tau], n).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (1..=n).map(|t| Some(p.point_at(t, &cps).sample(&mut rng))).collect();
    SeasonalMaximaSeries::new("cp", 1900, values)
}

fn quick(seed: u64) -> GaSettings {
    GaSettings { population: 24, patience: 6, max_generations: 40, seed, ..GaSettings::default() }
}

#[test]
fn large_shift_is_found_and_trace_never_worsens() {
    let s = simulate(40.0, 160, 81, 3);
    let out = ga_search(&s, &quick(1)).unwrap();
    assert!(out.trace.windows(2).all(|w| w[1].best_score <= w[0].best_score));
    assert_eq!(out.best.config.count(), 1, "{:?}", out.best.config);
    assert!(out.best.config.taus()[0].abs_diff(81) <= 2, "{:?}", out.best.config);
    assert!(out.best.config.respects_min_segment(&s, 8));
}

#[test]
fn search_is_deterministic_for_a_seed() {
    let s = simulate(25.0, 120, 61, 9);
    let a = ga_search(&s, &quick(5)).unwrap();
    let b = ga_search(&s, &quick(5)).unwrap();
    assert_eq!(a.best.config, b.best.config);
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.trace_csv(), b.trace_csv());
}

#[test]
fn ga_matches_single_changepoint_enumeration() {
    let s = simulate(30.0, 96, 41, 21);
    let scorer = Scorer::new(&s).unwrap();
    let (best, score) = exhaustive_search_with(&scorer, 1, 8).unwrap();
    let settings = GaSettings { max_changepoints: Some(1), ..quick(2) };
    let out = ga_search_with(&scorer, &settings).unwrap();
    assert_eq!(out.trace.last().unwrap().best_score, score);
    assert_eq!(out.trace.last().unwrap().best_taus, best.taus());
}
