use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use precip_cp::changepoint::ga_search;
use precip_cp::geostat::{fit_gp, grid, grid_csv, krige_predict, Site, MIN_SITES};
use precip_cp::gev::{fit_mle, ChangepointConfig, FitOptions, FitResult};
use precip_cp::ingest::{
    extract_seasonal_maxima, parse_dly, parse_inventory, qc_filter, select_station_with, selection_csv, Season,
    SeasonalMaximaSeries, StationMeta,
};
use precip_cp::returns::{
    bca_interval, gumbel_qq, ks_distance_gumbel, qq_csv, return_levels_csv, BootstrapSettings, QqPoint,
    ReturnLevelEstimate, ReturnTarget, SeasonalGevModel,
};
use precip_cp::trend::{
    changepoint_time_histogram, compare_trends, comparison_csv, trend_summary_csv, TrendSummary,
};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::PipelineConfig;
use crate::store::{csv_field, keep, write_csv, write_json, Store};
use crate::{Quantity, Status};

fn status(failures: usize) -> Status {
    if failures == 0 {
        Status::Complete
    } else {
        Status::Partial
    }
}

fn errors_csv(header: &str, rows: &[(String, String)]) -> String {
    let mut out = format!("{header},error\n");
    for (k, e) in rows {
        let _ = writeln!(out, "{},{}", csv_field(k), csv_field(e));
    }
    out
}

fn report_failures(what: &str, rows: &[(String, String)]) {
    for (k, e) in rows {
        eprintln!("{what} {k}: {e}");
    }
}

fn ingest_file(path: &Path, cap_mm: f64) -> Result<(SeasonalMaximaSeries, usize)> {
    let raw = fs::read_to_string(path).context("unreadable file")?;
    let daily = parse_dly(&raw)?;
    let qc = qc_filter(daily, cap_mm)?;
    let maxima = extract_seasonal_maxima(&qc.series);
    if maxima.observed_count() == 0 {
        bail!("no seasonal maxima could be formed");
    }
    Ok((maxima, qc.removed))
}

pub fn ingest(cfg: &PipelineConfig, filter: &[String]) -> Result<Status> {
    let dir = cfg
        .data_dir
        .as_ref()
        .ok_or_else(|| anyhow!("no data directory: pass one to `ingest` or set data_dir"))?;
    let entries = fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("dly")))
        .filter(|p| keep(filter, p.file_stem().and_then(|s| s.to_str()).unwrap_or_default()))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no input files: {} has no matching .dly files", dir.display());
    }

    let results: Vec<_> = files.par_iter().map(|p| ingest_file(p, cfg.daily_cap_mm)).collect();
    let store = Store::new(cfg);
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (path, result) in files.iter().zip(results) {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        match result {
            Ok((maxima, removed)) => {
                let mut comments = cfg.provenance();
                comments.push(format!("source={name}"));
                comments.push(format!("qc_removed={removed}"));
                crate::store::write(&store.maxima(&maxima.station_id), &maxima.to_csv(&comments))?;
                reports.push(select_station_with(&maxima, &cfg.selection));
            }
            Err(e) => failures.push((name, format!("{e:#}"))),
        }
    }
    report_failures("ingest", &failures);
    if reports.is_empty() {
        bail!("none of the {} input files could be read", files.len());
    }
    crate::store::write(&store.path("selection.csv"), &selection_csv(&reports, &cfg.provenance()))?;
    write_csv(&store.path("ingest_errors.csv"), cfg, &errors_csv("file", &failures))?;
    let selected = reports.iter().filter(|r| r.selected).count();
    println!("ingested {} stations, {selected} selected, {} failed", reports.len(), failures.len());
    Ok(status(failures.len()))
}

fn load_maxima(store: &Store, id: &str) -> Result<SeasonalMaximaSeries> {
    let path = store.maxima(id);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(SeasonalMaximaSeries::from_csv(&text)?)
}

fn load_inventory(cfg: &PipelineConfig) -> Result<HashMap<String, StationMeta>> {
    let Some(path) = &cfg.inventory else { return Ok(HashMap::new()) };
    let text = fs::read_to_string(path).with_context(|| format!("reading inventory {}", path.display()))?;
    let rows = parse_inventory(&text).with_context(|| format!("parsing inventory {}", path.display()))?;
    Ok(rows.into_iter().map(|m| (m.station_id.clone(), m)).collect())
}

fn analyze_station(cfg: &PipelineConfig, store: &Store, id: &str, meta: Option<&StationMeta>) -> Result<Value> {
    let series = load_maxima(store, id)?;
    let seed = cfg.station_seed(id);
    let mut ga = cfg.ga.clone();
    ga.seed = seed;
    let search = ga_search(&series, &ga)?;
    let best = &search.best;
    let with_cp = best.fit.clone().ok_or_else(|| anyhow!("no feasible changepoint configuration"))?;
    let without_cp = fit_mle(&series, &ChangepointConfig::empty())?;

    let trend_with = TrendSummary::from_fit(id, &with_cp)?;
    let trend_without = TrendSummary::from_fit(id, &without_cp)?;
    let comparison = compare_trends(&trend_with, &trend_without, cfg.difference_threshold)?;

    let model = SeasonalGevModel::from_fit(&series, &with_cp)?;
    let (year, start_season) = cfg.return_start;
    let t_i = model.index_of(year, start_season)?;
    let mut levels = Vec::new();
    let mut level_errors = Vec::new();
    let targets = Season::ALL.iter().flat_map(|&s| cfg.horizons.iter().map(move |&z| (s, z)));
    for (k, (season, z)) in targets.enumerate() {
        let target = ReturnTarget { season, z, t_i };
        let settings = BootstrapSettings {
            replicates: cfg.bootstrap_replicates,
            levels: vec![cfg.confidence],
            seed: seed.wrapping_add(k as u64 + 1),
            fit: FitOptions::scoring(),
        };
        let bounds = bca_interval(&series, &with_cp, &target, &settings)
            .and_then(|r| r.at(cfg.confidence).map(|b| (r, b)).ok_or_else(|| anyhow_lib("missing level")));
        match bounds {
            Ok((r, b)) => levels.push(ReturnLevelEstimate {
                station_id: id.to_string(),
                season,
                z,
                level: r.estimate,
                lower: b.lower,
                upper: b.upper,
                t_i,
                replicates: r.replicates,
            }),
            Err(e) => level_errors.push(json!({"season": season, "z": z, "error": e.to_string()})),
        }
    }
    let qq = gumbel_qq(&series, &with_cp.params, &with_cp.config());
    let location = meta.map(|m| json!({"latitude": m.latitude, "longitude": m.longitude, "elevation": m.elevation}));

    Ok(json!({
        "station_id": id,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "station_seed": seed,
        "location": location,
        "start_year": series.start_year,
        "n": series.n(),
        "observed": series.observed_count(),
        "search": {
            "best": best.to_json(&series),
            "generations": search.generations,
            "converged": search.converged,
            "trace": search.trace,
        },
        "fit_with_changepoints": with_cp.to_json(),
        "fit_without_changepoints": without_cp.to_json(),
        "trend_with_changepoints": trend_with,
        "trend_without_changepoints": trend_without,
        "comparison": comparison,
        "return_levels": levels,
        "return_level_errors": level_errors,
        "qq": qq,
    }))
}

fn anyhow_lib(msg: &str) -> precip_cp::Error {
    precip_cp::Error::InvalidInput(msg.into())
}

pub fn analyze(cfg: &PipelineConfig, filter: &[String]) -> Result<Status> {
    let store = Store::new(cfg);
    let ids: Vec<String> = store.selected()?.into_iter().filter(|id| keep(filter, id)).collect();
    if ids.is_empty() {
        bail!("no selected stations to analyze");
    }
    let inventory = load_inventory(cfg)?;
    let results: Vec<_> = ids.par_iter().map(|id| analyze_station(cfg, &store, id, inventory.get(id))).collect();
    let mut failures = Vec::new();
    for (id, result) in ids.iter().zip(results) {
        match result {
            Ok(value) => write_json(&store.analysis(id), &value)?,
            Err(e) => failures.push((id.clone(), format!("{e:#}"))),
        }
    }
    report_failures("analyze", &failures);
    write_csv(&store.path("analysis_errors.csv"), cfg, &errors_csv("station_id", &failures))?;
    println!("analyzed {} stations, {} failed", ids.len() - failures.len(), failures.len());
    Ok(status(failures.len()))
}

fn analyses(store: &Store, filter: &[String]) -> Result<Vec<(String, Value)>> {
    let out = store.analyses(filter)?;
    if out.is_empty() {
        bail!("no station results found; run `analyze` first");
    }
    Ok(out)
}

pub fn trends(cfg: &PipelineConfig, filter: &[String]) -> Result<Status> {
    let store = Store::new(cfg);
    let mut with_rows = Vec::new();
    let mut without_rows = Vec::new();
    let mut comparisons = Vec::new();
    let mut placed = Vec::new();
    let mut failures = Vec::new();
    for (id, v) in analyses(&store, filter)? {
        let row = (|| -> Result<_> {
            let with_cp = FitResult::from_json(&v["fit_with_changepoints"])?;
            let without_cp = FitResult::from_json(&v["fit_without_changepoints"])?;
            let a = TrendSummary::from_fit(&id, &with_cp)?;
            let b = TrendSummary::from_fit(&id, &without_cp)?;
            let cmp = compare_trends(&a, &b, cfg.difference_threshold)?;
            Ok((a, b, cmp, load_maxima(&store, &id)?, with_cp.config()))
        })();
        match row {
            Ok((a, b, cmp, series, cps)) => {
                with_rows.push(a);
                without_rows.push(b);
                comparisons.push(cmp);
                placed.push((series, cps));
            }
            Err(e) => failures.push((id, format!("{e:#}"))),
        }
    }
    report_failures("trends", &failures);
    let hist = changepoint_time_histogram(placed.iter().map(|(s, c)| (s, c)));
    let mut counts = String::from("c,stations\n");
    for (c, k) in ["0", "1", "2", "3+"].iter().zip(hist.stations_by_count) {
        let _ = writeln!(counts, "{c},{k}");
    }
    write_csv(&store.path("trends.csv"), cfg, &trend_summary_csv(&with_rows))?;
    write_csv(&store.path("trends_no_changepoints.csv"), cfg, &trend_summary_csv(&without_rows))?;
    write_csv(&store.path("trend_comparison.csv"), cfg, &comparison_csv(&comparisons))?;
    write_csv(&store.path("changepoint_histogram.csv"), cfg, &hist.to_csv())?;
    write_csv(&store.path("changepoint_counts.csv"), cfg, &counts)?;
    write_csv(&store.path("trend_errors.csv"), cfg, &errors_csv("station_id", &failures))?;
    println!("trend tables for {} stations, mean changepoint count {:.3}", with_rows.len(), hist.mean_count);
    Ok(status(failures.len()))
}

fn field<'a>(v: &'a Value, key: &str) -> Result<&'a Value> {
    v.get(key).ok_or_else(|| anyhow!("missing field {key:?}"))
}

fn f64_field(v: &Value, key: &str) -> Result<f64> {
    field(v, key)?.as_f64().ok_or_else(|| anyhow!("field {key:?} is not a number"))
}

fn usize_field(v: &Value, key: &str) -> Result<usize> {
    field(v, key)?.as_u64().map(|x| x as usize).ok_or_else(|| anyhow!("field {key:?} is not a count"))
}

fn season_field(v: &Value, key: &str) -> Result<Season> {
    field(v, key)?.as_str().and_then(Season::parse).ok_or_else(|| anyhow!("field {key:?} is not a season"))
}

fn return_rows(v: &Value) -> Result<Vec<ReturnLevelEstimate>> {
    let rows = field(v, "return_levels")?.as_array().ok_or_else(|| anyhow!("return_levels is not a list"))?;
    rows.iter()
        .map(|r| {
            Ok(ReturnLevelEstimate {
                station_id: field(r, "station_id")?.as_str().unwrap_or_default().to_string(),
                season: season_field(r, "season")?,
                z: usize_field(r, "z")?,
                level: f64_field(r, "level")?,
                lower: f64_field(r, "lower")?,
                upper: f64_field(r, "upper")?,
                t_i: usize_field(r, "t_i")?,
                replicates: usize_field(r, "replicates")?,
            })
        })
        .collect()
}

fn qq_points(v: &Value) -> Result<Vec<QqPoint>> {
    let fit = FitResult::from_json(&v["fit_with_changepoints"])?;
    // flagged points lie beyond the support; JSON keeps them as null
    let edge = if fit.params.xi > 0.0 { f64::NEG_INFINITY } else { f64::INFINITY };
    let rows = field(v, "qq")?.as_array().ok_or_else(|| anyhow!("qq is not a list"))?;
    rows.iter()
        .map(|p| {
            let flag = field(p, "flag")?.as_bool().unwrap_or(false);
            Ok(QqPoint {
                rank: usize_field(p, "rank")?,
                theoretical: f64_field(p, "theoretical")?,
                empirical: if flag { edge } else { f64_field(p, "empirical")? },
                flag,
            })
        })
        .collect()
}

pub fn returns(cfg: &PipelineConfig, filter: &[String]) -> Result<Status> {
    let store = Store::new(cfg);
    let mut rows = Vec::new();
    let mut summary = String::from("station_id,points,flagged,ks_distance\n");
    let mut failures = Vec::new();
    for (id, v) in analyses(&store, filter)? {
        let parsed = return_rows(&v).and_then(|r| Ok((r, qq_points(&v)?)));
        match parsed {
            Ok((r, qq)) => {
                rows.extend(r);
                let flagged = qq.iter().filter(|p| p.flag).count();
                let finite: Vec<f64> = qq.iter().filter(|p| !p.flag).map(|p| p.empirical).collect();
                let ks = if finite.is_empty() { f64::NAN } else { ks_distance_gumbel(&finite) };
                let _ = writeln!(summary, "{id},{},{flagged},{ks:.6}", qq.len());
                write_csv(&store.path(&format!("qq/{id}.csv")), cfg, &qq_csv(&qq))?;
            }
            Err(e) => failures.push((id, format!("{e:#}"))),
        }
        if let Some(errs) = v.get("return_level_errors").and_then(Value::as_array) {
            for e in errs {
                eprintln!("returns {}: {} z={}: {}", v["station_id"], e["season"], e["z"], e["error"]);
            }
        }
    }
    report_failures("returns", &failures);
    write_csv(&store.path("return_levels.csv"), cfg, &return_levels_csv(&rows))?;
    write_csv(&store.path("qq_summary.csv"), cfg, &summary)?;
    println!("{} return levels written", rows.len());
    Ok(status(failures.len()))
}

/// One surface to krige: output name, season, horizon.
fn surfaces(cfg: &PipelineConfig, quantity: Quantity) -> Vec<(String, Option<Season>, Option<usize>)> {
    match quantity {
        Quantity::LongTerm => vec![(quantity.name().to_string(), None, None)],
        Quantity::ReturnLevel => Season::ALL
            .iter()
            .flat_map(|&s| cfg.horizons.iter().map(move |&z| (format!("return-level_{s}_{z}y"), Some(s), Some(z))))
            .collect(),
        _ => Season::ALL.iter().map(|&s| (format!("{}_{s}", quantity.name()), Some(s), None)).collect(),
    }
}

fn smoothness(cfg: &PipelineConfig, quantity: Quantity, season: Option<Season>) -> f64 {
    let s = season.map_or(0, Season::index);
    match quantity {
        Quantity::Trend | Quantity::Z => cfg.nu_trend[s],
        Quantity::Variability => cfg.nu_variability[s],
        Quantity::LongTerm => cfg.nu_long_term,
        Quantity::ReturnLevel => cfg.nu_return_level,
    }
}

fn station_value(v: &Value, quantity: Quantity, season: Option<Season>, z: Option<usize>) -> Option<f64> {
    let s = season.map_or(0, Season::index);
    let trend = &v["trend_with_changepoints"];
    match quantity {
        Quantity::Trend => trend["beta1"][s].as_f64(),
        Quantity::Z => trend["z"][s].as_f64(),
        Quantity::Variability => trend["multipliers"][s].as_f64(),
        Quantity::LongTerm => trend["lta"].as_f64(),
        Quantity::ReturnLevel => v["return_levels"].as_array()?.iter().find_map(|r| {
            let hit = r["season"].as_str().and_then(Season::parse) == season
                && r["z"].as_u64().map(|x| x as usize) == z;
            if hit {
                r["level"].as_f64()
            } else {
                None
            }
        }),
    }
    .filter(|x| x.is_finite())
}

fn station_site(v: &Value) -> Option<Site> {
    let loc = v.get("location")?;
    Some(Site::new(loc["longitude"].as_f64()?, loc["latitude"].as_f64()?))
}

pub fn smooth(cfg: &PipelineConfig, filter: &[String], quantity: Quantity) -> Result<Status> {
    let store = Store::new(cfg);
    let results = analyses(&store, filter)?;
    let targets = grid(&cfg.grid_bbox, cfg.grid_resolution)?;
    let mut failures = Vec::new();
    let mut written = 0;
    for (name, season, z) in surfaces(cfg, quantity) {
        let mut ids = Vec::new();
        let mut sites = Vec::new();
        let mut values = Vec::new();
        for (id, v) in &results {
            if let (Some(site), Some(x)) = (station_site(v), station_value(v, quantity, season, z)) {
                ids.push(id.clone());
                sites.push(site);
                values.push(x);
            }
        }
        if sites.len() < MIN_SITES {
            failures.push((
                name,
                format!("at least {MIN_SITES} stations with a location and a value are required, found {}", sites.len()),
            ));
            continue;
        }
        let nu = smoothness(cfg, quantity, season);
        let fitted = fit_gp(&sites, &values, nu).and_then(|m| Ok((krige_predict(&m, &targets)?, m)));
        match fitted {
            Ok((pred, model)) => {
                write_csv(&store.path(&format!("smooth/{name}.csv")), cfg, &grid_csv(&targets, &pred))?;
                let mut info = model.to_json();
                let extra = json!({
                    "config_hash": cfg.hash(),
                    "seed": cfg.seed,
                    "quantity": quantity.name(),
                    "season": season,
                    "horizon": z,
                    "stations": ids,
                    "grid_points": targets.len(),
                    "grid_resolution": cfg.grid_resolution,
                });
                if let (Some(info), Value::Object(extra)) = (info.as_object_mut(), extra) {
                    info.extend(extra);
                }
                write_json(&store.path(&format!("smooth/{name}.json")), &info)?;
                written += 1;
            }
            Err(e) => failures.push((name, e.to_string())),
        }
    }
    report_failures("smooth", &failures);
    if written == 0 {
        let (name, e) = &failures[0];
        bail!("{name}: {e}");
    }
    println!("{written} {} surfaces written", quantity.name());
    Ok(status(failures.len()))
}

fn count_rows(path: &Path) -> Option<usize> {
    let text = fs::read_to_string(path).ok()?;
    Some(text.lines().filter(|l| !l.starts_with('#')).count().saturating_sub(1))
}

pub fn report(cfg: &PipelineConfig, filter: &[String]) -> Result<Status> {
    let store = Store::new(cfg);
    let results = analyses(&store, filter)?;
    let mut by_count = [0usize; 4];
    let mut significant = [0usize; 4];
    let mut flagged = [0usize; 4];
    let mut level_failures = 0;
    for (_, v) in &results {
        let c = v["search"]["best"]["c"].as_u64().unwrap_or(0) as usize;
        by_count[c.min(3)] += 1;
        for s in 0..4 {
            let z = v["trend_with_changepoints"]["z"][s].as_f64().unwrap_or(f64::NAN);
            significant[s] += (z.abs() > cfg.z_critical) as usize;
            flagged[s] += v["comparison"]["flagged"][s].as_bool().unwrap_or(false) as usize;
        }
        level_failures += v["return_level_errors"].as_array().map_or(0, Vec::len);
    }
    let per_season = |a: [usize; 4]| -> Value { Season::ALL.iter().map(|s| (s.name().to_string(), json!(a[s.index()]))).collect() };
    let selected = store.selected().map(|s| s.len()).ok();
    let summary = json!({
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "stations_ingested": count_rows(&store.path("selection.csv")),
        "stations_selected": selected,
        "ingest_failures": count_rows(&store.path("ingest_errors.csv")),
        "stations_analyzed": results.len(),
        "analysis_failures": count_rows(&store.path("analysis_errors.csv")),
        "changepoint_counts": {"0": by_count[0], "1": by_count[1], "2": by_count[2], "3+": by_count[3]},
        "significant_trends": per_season(significant),
        "z_critical": cfg.z_critical,
        "trend_differences_flagged": per_season(flagged),
        "difference_threshold": cfg.difference_threshold,
        "return_level_failures": level_failures,
    });
    write_json(&store.path("report.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(Status::Complete)
}
