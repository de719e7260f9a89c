//! GHCN-Daily parsing, quality control, seasonal block maxima and station selection.

use std::fmt::Write as _;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seasons per year.
pub const SEASONS_PER_YEAR: usize = 4;

/// Default daily cap (mm), roughly the world 24-hour record.
pub const DEFAULT_DAILY_CAP_MM: f64 = 1830.0;

const DLY_LINE_LEN: usize = 269;
const MISSING_SENTINEL: i32 = -9999;
const MAX_MISSING_DAYS: usize = 5;
const MIN_PRESENT_DAYS: usize = 84;

/// Meteorological season. Winter of year `k` runs December `k` through February `k+1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Spring = 1,
    Summer = 2,
    Fall = 3,
    Winter = 4,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Spring, Season::Summer, Season::Fall, Season::Winter];

    /// 1-based season number.
    pub fn number(self) -> usize {
        self as usize
    }

    /// 0-based index into per-season arrays.
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn from_number(s: usize) -> Option<Self> {
        match s {
            1 => Some(Season::Spring),
            2 => Some(Season::Summer),
            3 => Some(Season::Fall),
            4 => Some(Season::Winter),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Season::Spring => "spring",
            Season::Summer => "summer",
            Season::Fall => "fall",
            Season::Winter => "winter",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spring" | "mam" | "1" => Some(Season::Spring),
            "summer" | "jja" | "2" => Some(Season::Summer),
            "fall" | "autumn" | "son" | "3" => Some(Season::Fall),
            "winter" | "djf" | "4" => Some(Season::Winter),
            _ => None,
        }
    }

    /// First and last calendar day of the season labelled `year`.
    pub fn date_range(self, year: i32) -> (NaiveDate, NaiveDate) {
        let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).expect("valid season boundary");
        match self {
            Season::Spring => (d(year, 3, 1), d(year, 5, 31)),
            Season::Summer => (d(year, 6, 1), d(year, 8, 31)),
            Season::Fall => (d(year, 9, 1), d(year, 11, 30)),
            Season::Winter => {
                let end = d(year + 1, 3, 1).pred_opt().expect("valid date");
                (d(year, 12, 1), end)
            }
        }
    }

    /// Season label (season, labelling year) of a calendar date.
    pub fn of_date(date: NaiveDate) -> (Season, i32) {
        match date.month() {
            3..=5 => (Season::Spring, date.year()),
            6..=8 => (Season::Summer, date.year()),
            9..=11 => (Season::Fall, date.year()),
            12 => (Season::Winter, date.year()),
            _ => (Season::Winter, date.year() - 1),
        }
    }
}

impl std::fmt::Display for Season {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Daily precipitation for one station. Absent values are missing days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyPrecipSeries {
    pub station_id: String,
    pub dates: Vec<NaiveDate>,
    /// mm/day
    pub values: Vec<Option<f64>>,
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
    pub elevation: Option<f64>,
}

impl DailyPrecipSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn present_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn with_location(mut self, meta: &StationMeta) -> Self {
        self.latitude = Some(meta.latitude);
        self.longitude = Some(meta.longitude);
        self.elevation = meta.elevation;
        self
    }
}

/// One seasonal block maximum, addressed by the 1-based season index `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeasonEntry {
    pub t: usize,
    pub year: i32,
    pub season: Season,
    pub value: Option<f64>,
}

/// Seasonal maxima indexed `t = (k-1)*4 + s`, where `k = 1` is `start_year` and
/// `t = 1` is spring of that year. Missing seasons are kept as `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalMaximaSeries {
    pub station_id: String,
    pub start_year: i32,
    pub values: Vec<Option<f64>>,
}

impl SeasonalMaximaSeries {
    pub fn new(station_id: impl Into<String>, start_year: i32, values: Vec<Option<f64>>) -> Self {
        Self { station_id: station_id.into(), start_year, values }
    }

    /// Total number of seasons `n`, missing ones included.
    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// Value at season index `t` (1-based).
    pub fn value(&self, t: usize) -> Option<f64> {
        self.values.get(t.wrapping_sub(1)).copied().flatten()
    }

    pub fn season_of(t: usize) -> Season {
        Season::from_number((t - 1) % SEASONS_PER_YEAR + 1).expect("season in 1..=4")
    }

    pub fn year_of(&self, t: usize) -> i32 {
        self.start_year + ((t - 1) / SEASONS_PER_YEAR) as i32
    }

    /// Season index of `season` in calendar `year` (may lie outside `1..=n`).
    pub fn index_of(&self, year: i32, season: Season) -> i64 {
        (year - self.start_year) as i64 * SEASONS_PER_YEAR as i64 + season.number() as i64
    }

    pub fn entries(&self) -> impl Iterator<Item = SeasonEntry> + '_ {
        self.values.iter().enumerate().map(move |(i, v)| {
            let t = i + 1;
            SeasonEntry { t, year: self.year_of(t), season: Self::season_of(t), value: *v }
        })
    }

    pub fn observed_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Number of non-missing seasons with index in `[from, to)`.
    pub fn observed_between(&self, from: usize, to: usize) -> usize {
        let lo = from.max(1) - 1;
        let hi = (to.max(1) - 1).min(self.values.len());
        if lo >= hi {
            return 0;
        }
        self.values[lo..hi].iter().filter(|v| v.is_some()).count()
    }

    pub fn observed_values(&self, season: Season) -> Vec<f64> {
        self.entries().filter(|e| e.season == season).filter_map(|e| e.value).collect()
    }

    pub fn max_value(&self) -> Option<f64> {
        self.values.iter().flatten().copied().reduce(f64::max)
    }

    pub fn min_value(&self) -> Option<f64> {
        self.values.iter().flatten().copied().reduce(f64::min)
    }

    /// Writes the `station_id,year,season,t,value` CSV, optionally preceded by
    /// `#`-prefixed comment lines.
    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        out.push_str("station_id,year,season,t,value\n");
        for e in self.entries() {
            let v = e.value.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", self.station_id, e.year, e.season, e.t, v);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut station_id: Option<String> = None;
        let mut start_year = None;
        let mut values = Vec::new();
        let mut header_seen = false;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                header_seen = true;
                if line.starts_with("station_id") {
                    continue;
                }
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(parse_err(line_no, format!("expected 5 fields, found {}", fields.len())));
            }
            let id = fields[0].trim();
            match &station_id {
                None => station_id = Some(id.to_string()),
                Some(s) if s != id => {
                    return Err(parse_err(line_no, format!("mixed station ids {s} and {id}")))
                }
                _ => {}
            }
            let year: i32 = fields[1].trim().parse().map_err(|_| parse_err(line_no, "bad year"))?;
            let season = Season::parse(fields[2]).ok_or_else(|| parse_err(line_no, "bad season"))?;
            let t: usize = fields[3].trim().parse().map_err(|_| parse_err(line_no, "bad t"))?;
            let value = match fields[4].trim() {
                "" => None,
                v => Some(v.parse::<f64>().map_err(|_| parse_err(line_no, "bad value"))?),
            };
            if t != values.len() + 1 {
                return Err(parse_err(line_no, format!("expected t = {}, found {t}", values.len() + 1)));
            }
            if t == 1 {
                if season != Season::Spring {
                    return Err(parse_err(line_no, "series must start in spring"));
                }
                start_year = Some(year);
            }
            let sy = start_year.expect("set at t = 1");
            let expect_year = sy + ((t - 1) / SEASONS_PER_YEAR) as i32;
            if year != expect_year || season != Self::season_of(t) {
                return Err(parse_err(line_no, format!("season index {t} inconsistent with {season} {year}")));
            }
            values.push(value);
        }
        let station_id = station_id.ok_or_else(|| parse_err(0, "no rows"))?;
        Ok(Self { station_id, start_year: start_year.unwrap_or(0), values })
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Parses GHCN-Daily `.dly` content, keeping PRCP lines only.
pub fn parse_dly(raw: &str) -> Result<DailyPrecipSeries> {
    let mut station_id: Option<String> = None;
    let mut days: Vec<(NaiveDate, Option<f64>)> = Vec::new();

    for (i, raw_line) in raw.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if !line.is_ascii() {
            return Err(parse_err(line_no, "non-ASCII content"));
        }
        if line.len() != DLY_LINE_LEN {
            return Err(parse_err(
                line_no,
                format!("expected {DLY_LINE_LEN} characters, found {}", line.len()),
            ));
        }
        if &line[17..21] != "PRCP" {
            continue;
        }
        let id = line[0..11].trim().to_string();
        match &station_id {
            None => station_id = Some(id),
            Some(s) if *s != id => {
                return Err(parse_err(line_no, format!("station id {id} differs from {s}")))
            }
            _ => {}
        }
        let year: i32 = line[11..15]
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, "non-numeric YEAR"))?;
        let month: u32 = line[15..17]
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, "non-numeric MONTH"))?;
        if !(1..=12).contains(&month) {
            return Err(parse_err(line_no, format!("month {month} out of range")));
        }
        for day in 1..=31u32 {
            let off = 21 + (day as usize - 1) * 8;
            let field = &line[off..off + 5];
            let qflag = &line[off + 6..off + 7];
            let value: i32 = field.trim().parse().map_err(|_| {
                parse_err(line_no, format!("non-numeric VALUE {field:?} for day {day}"))
            })?;
            let Some(date) = NaiveDate::from_ymd_opt(year, month, day) else {
                continue;
            };
            let v = if value == MISSING_SENTINEL || qflag != " " {
                None
            } else {
                Some(value as f64 / 10.0)
            };
            days.push((date, v));
        }
    }

    let station_id = station_id.ok_or_else(|| parse_err(0, "no PRCP records"))?;
    days.sort_by_key(|(d, _)| *d);
    if let Some(w) = days.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(parse_err(0, format!("duplicate record for {}", w[0].0)));
    }
    let (dates, values) = days.into_iter().unzip();
    Ok(DailyPrecipSeries { station_id, dates, values, latitude: None, longitude: None, elevation: None })
}

/// Result of [`qc_filter`].
#[derive(Debug, Clone)]
pub struct QcOutcome {
    pub series: DailyPrecipSeries,
    pub removed: usize,
}

/// Sets negative values and values above `cap_mm` to missing.
pub fn qc_filter(mut series: DailyPrecipSeries, cap_mm: f64) -> Result<QcOutcome> {
    if !(cap_mm > 0.0) {
        return Err(Error::Domain(format!("daily cap must be positive, got {cap_mm}")));
    }
    let mut removed = 0;
    for v in series.values.iter_mut() {
        if let Some(x) = *v {
            if !(0.0..=cap_mm).contains(&x) {
                *v = None;
                removed += 1;
            }
        }
    }
    Ok(QcOutcome { series, removed })
}

/// Extracts seasonal (MAM/JJA/SON/DJF) maxima. A season is kept when at most five
/// days are missing and at least 84 days are present; the result spans whole
/// years from the first to the last kept season.
pub fn extract_seasonal_maxima(series: &DailyPrecipSeries) -> SeasonalMaximaSeries {
    let empty = |year| SeasonalMaximaSeries::new(series.station_id.clone(), year, Vec::new());
    let (Some(&first), Some(&last)) = (series.dates.first(), series.dates.last()) else {
        return empty(0);
    };

    // dense day table from `first` to `last`
    let span = (last - first).num_days() as usize + 1;
    let mut dense: Vec<Option<f64>> = vec![None; span];
    for (d, v) in series.dates.iter().zip(&series.values) {
        dense[(*d - first).num_days() as usize] = *v;
    }
    let lookup = |d: NaiveDate| -> Option<f64> {
        let k = (d - first).num_days();
        if k < 0 || k as usize >= span {
            None
        } else {
            dense[k as usize]
        }
    };

    let (_, y0) = Season::of_date(first);
    let (_, y1) = Season::of_date(last);
    let mut maxima: Vec<(i32, Season, Option<f64>)> = Vec::new();
    for year in y0..=y1 {
        for season in Season::ALL {
            let (a, b) = season.date_range(year);
            let len = (b - a).num_days() as usize + 1;
            let mut present = 0usize;
            let mut best = f64::NEG_INFINITY;
            for d in a.iter_days().take(len) {
                if let Some(v) = lookup(d) {
                    present += 1;
                    best = best.max(v);
                }
            }
            let missing = len - present;
            let value = (missing <= MAX_MISSING_DAYS && present >= MIN_PRESENT_DAYS).then_some(best);
            maxima.push((year, season, value));
        }
    }

    let first_kept = maxima.iter().position(|m| m.2.is_some());
    let last_kept = maxima.iter().rposition(|m| m.2.is_some());
    let (Some(fk), Some(lk)) = (first_kept, last_kept) else {
        return empty(y0);
    };
    let start_year = maxima[fk].0;
    let end_year = maxima[lk].0;
    let values = maxima
        .iter()
        .filter(|m| m.0 >= start_year && m.0 <= end_year)
        .map(|m| m.2)
        .collect();
    SeasonalMaximaSeries::new(series.station_id.clone(), start_year, values)
}

/// Outcome of the record-length / completeness screen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSelectionReport {
    pub station_id: String,
    pub span_years: usize,
    pub missing_fraction: f64,
    pub selected: bool,
    pub reason: String,
}

/// Thresholds of the station screen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionRule {
    pub long_min_years: usize,
    pub long_max_missing: f64,
    pub short_min_years: usize,
    pub short_max_missing: f64,
}

impl Default for SelectionRule {
    fn default() -> Self {
        Self { long_min_years: 75, long_max_missing: 0.30, short_min_years: 45, short_max_missing: 0.075 }
    }
}

pub fn select_station(series: &SeasonalMaximaSeries) -> StationSelectionReport {
    select_station_with(series, &SelectionRule::default())
}

pub fn select_station_with(series: &SeasonalMaximaSeries, rule: &SelectionRule) -> StationSelectionReport {
    let first = series.entries().find(|e| e.value.is_some());
    let last = series.entries().filter(|e| e.value.is_some()).last();
    let (Some(first), Some(last)) = (first, last) else {
        return StationSelectionReport {
            station_id: series.station_id.clone(),
            span_years: 0,
            missing_fraction: 1.0,
            selected: false,
            reason: "no non-missing seasons".into(),
        };
    };
    let span_years = (last.year - first.year + 1) as usize;
    let in_span: Vec<_> = series.entries().filter(|e| e.year >= first.year && e.year <= last.year).collect();
    let missing = in_span.iter().filter(|e| e.value.is_none()).count();
    let missing_fraction = missing as f64 / in_span.len() as f64;

    let long = span_years >= rule.long_min_years && missing_fraction < rule.long_max_missing;
    let short = (rule.short_min_years..rule.long_min_years).contains(&span_years)
        && missing_fraction < rule.short_max_missing;
    let pct = 100.0 * missing_fraction;
    let reason = if long {
        format!("{span_years} yr with {pct:.1}% missing meets the >= {} yr rule", rule.long_min_years)
    } else if short {
        format!(
            "{span_years} yr with {pct:.1}% missing meets the {}-{} yr rule",
            rule.short_min_years,
            rule.long_min_years - 1
        )
    } else if span_years < rule.short_min_years {
        format!("record too short: {span_years} yr")
    } else {
        format!("too much missing data for a {span_years} yr record: {pct:.1}%")
    };
    StationSelectionReport {
        station_id: series.station_id.clone(),
        span_years,
        missing_fraction,
        selected: long || short,
        reason,
    }
}

/// Selection report CSV.
pub fn selection_csv(reports: &[StationSelectionReport], comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str("station_id,span_years,missing_fraction,selected,reason\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{:.6},{},\"{}\"",
            r.station_id,
            r.span_years,
            r.missing_fraction,
            r.selected,
            r.reason.replace('"', "'")
        );
    }
    out
}

/// Station location record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationMeta {
    pub station_id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub elevation: Option<f64>,
}

/// Parses the `station_id,latitude,longitude,elevation` inventory CSV.
pub fn parse_inventory(text: &str) -> Result<Vec<StationMeta>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("station_id") {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() < 3 {
            return Err(parse_err(line_no, "expected station_id,latitude,longitude[,elevation]"));
        }
        let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| parse_err(line_no, format!("bad {what}")));
        let latitude = num(f[1], "latitude")?;
        let longitude = num(f[2], "longitude")?;
        let elevation = match f.get(3) {
            Some(s) if !s.is_empty() => Some(num(s, "elevation")?),
            _ => None,
        };
        out.push(StationMeta { station_id: f[0].to_string(), latitude, longitude, elevation });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Builds one 269-character PRCP line; `days` maps day number to (value, qflag).
    pub(crate) fn dly_line(id: &str, year: i32, month: u32, days: &[(u32, i32, char)]) -> String {
        let mut s = format!("{id:<11}{year:04}{month:02}PRCP");
        for d in 1..=31u32 {
            match days.iter().find(|x| x.0 == d) {
                Some(&(_, v, q)) => s.push_str(&format!("{v:>5} {q} ")),
                None => s.push_str("-9999   "),
            }
        }
        assert_eq!(s.len(), 269);
        s
    }

    #[test]
    fn parses_tenths_of_mm() {
        let line = dly_line("USC00331592", 1950, 6, &[(1, 254, ' '), (2, -9999, ' '), (3, 254, 'G')]);
        let s = parse_dly(&line).unwrap();
        assert_eq!(s.station_id, "USC00331592");
        assert_eq!(s.len(), 30); // June has 30 days; day 31 ignored
        assert_eq!(s.values[0], Some(25.4));
        assert_eq!(s.values[1], None);
        assert_eq!(s.values[2], None);
    }

    #[test]
    fn rejects_short_lines_with_line_number() {
        let good = dly_line("USC00331592", 1950, 6, &[(1, 10, ' ')]);
        let text = format!("{good}\n{}", &good[..200]);
        match parse_dly(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_non_numeric_value() {
        let mut line = dly_line("USC00331592", 1950, 6, &[(1, 10, ' ')]);
        line.replace_range(21..26, "  1x4");
        assert!(matches!(parse_dly(&line), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn skips_other_elements() {
        let mut tmax = dly_line("USC00331592", 1950, 6, &[(1, 300, ' ')]);
        tmax.replace_range(17..21, "TMAX");
        let prcp = dly_line("USC00331592", 1950, 6, &[(1, 7, ' ')]);
        let s = parse_dly(&format!("{tmax}\n{prcp}\n")).unwrap();
        assert_eq!(s.values[0], Some(0.7));
    }

    fn daily(values: Vec<(NaiveDate, Option<f64>)>) -> DailyPrecipSeries {
        let (dates, values) = values.into_iter().unzip();
        DailyPrecipSeries {
            station_id: "X".into(),
            dates,
            values,
            latitude: None,
            longitude: None,
            elevation: None,
        }
    }

    #[test]
    fn qc_cap_and_negatives() {
        let d = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        let s = daily(vec![
            (d, Some(1900.0)),
            (d.succ_opt().unwrap(), Some(0.0)),
            (d + chrono::Days::new(2), Some(-1.0)),
        ]);
        let out = qc_filter(s, 1830.0).unwrap();
        assert_eq!(out.series.values, vec![None, Some(0.0), None]);
        assert_eq!(out.removed, 2);
        assert!(qc_filter(out.series, 0.0).is_err());
    }

    /// Daily record over whole years with a value function and a missing predicate.
    fn synthetic_days(y0: i32, y1: i32, f: impl Fn(NaiveDate) -> Option<f64>) -> DailyPrecipSeries {
        let a = NaiveDate::from_ymd_opt(y0, 1, 1).unwrap();
        let b = NaiveDate::from_ymd_opt(y1, 12, 31).unwrap();
        daily(a.iter_days().take_while(|d| *d <= b).map(|d| (d, f(d))).collect())
    }

    #[test]
    fn spring_with_five_missing_days_is_kept() {
        // 92-day spring, days 1..=5 of March missing
        let s = synthetic_days(2001, 2001, |d| {
            if d.month() == 3 && d.day() <= 5 {
                None
            } else {
                Some(d.ordinal() as f64 / 10.0)
            }
        });
        let m = extract_seasonal_maxima(&s);
        assert_eq!(m.start_year, 2001);
        // spring max is May 31
        let may31 = NaiveDate::from_ymd_opt(2001, 5, 31).unwrap().ordinal() as f64 / 10.0;
        assert_eq!(m.value(1), Some(may31));
    }

    #[test]
    fn winter_with_six_missing_days_is_missing() {
        let s = synthetic_days(2001, 2003, |d| {
            if d.year() == 2002 && d.month() == 1 && d.day() <= 6 {
                None
            } else {
                Some(1.0)
            }
        });
        let m = extract_seasonal_maxima(&s);
        // winter 2001 = Dec 2001 .. Feb 2002, 90 days, 84 present
        let t = m.index_of(2001, Season::Winter) as usize;
        assert_eq!(m.value(t), None);
        let t = m.index_of(2002, Season::Winter) as usize;
        assert_eq!(m.value(t), Some(1.0));
    }

    #[test]
    fn partial_first_season_is_missing() {
        // record starts March 13: spring has 80 days on record
        let start = NaiveDate::from_ymd_opt(2001, 3, 13).unwrap();
        let end = NaiveDate::from_ymd_opt(2003, 2, 28).unwrap();
        let s = daily(start.iter_days().take_while(|d| *d <= end).map(|d| (d, Some(2.0))).collect());
        let m = extract_seasonal_maxima(&s);
        assert_eq!(m.start_year, 2001);
        assert_eq!(m.value(1), None);
        assert_eq!(m.value(2), Some(2.0));
        assert_eq!(m.n(), 8);
    }

    #[test]
    fn winter_label_uses_december_year() {
        assert_eq!(Season::of_date(NaiveDate::from_ymd_opt(2024, 2, 10).unwrap()), (Season::Winter, 2023));
        let (a, b) = Season::Winter.date_range(2023);
        assert_eq!((b - a).num_days() + 1, 91); // leap February 2024
    }

    fn maxima(n_years: usize, missing_every: Option<usize>) -> SeasonalMaximaSeries {
        let values = (0..n_years * 4)
            .map(|i| match missing_every {
                Some(k) if i % k == k - 1 => None,
                _ => Some(10.0 + i as f64),
            })
            .collect();
        SeasonalMaximaSeries::new("S", 1900, values)
    }

    #[test]
    fn selection_rules() {
        // 80 yr, 20% missing
        let r = select_station(&maxima(80, Some(5)));
        assert_eq!(r.span_years, 80);
        assert!((r.missing_fraction - 0.2).abs() < 1e-12);
        assert!(r.selected);
        // 50 yr, 5% missing
        let r = select_station(&maxima(50, Some(20)));
        assert!((r.missing_fraction - 0.05).abs() < 1e-12);
        assert!(r.selected);
        // 50 yr, 10% missing
        let r = select_station(&maxima(50, Some(10)));
        assert!(!r.selected);
        // 40 yr complete
        assert!(!select_station(&maxima(40, None)).selected);
    }

    #[test]
    fn csv_round_trip() {
        let s = SeasonalMaximaSeries::new("USC1", 1950, vec![Some(1.25), None, Some(33.3), Some(0.1), None, None, Some(7.0), Some(1e-3)]);
        let back = SeasonalMaximaSeries::from_csv(&s.to_csv(&["seed=1".into()])).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn inventory() {
        let inv = parse_inventory("station_id,latitude,longitude,elevation\nA,39.6,-82.9,206\nB,30.1,-91.0,\n").unwrap();
        assert_eq!(inv.len(), 2);
        assert_eq!(inv[1].elevation, None);
    }
}
