//! Time axes, domain records and CSV loaders for transactions and exogenous series.
//!
//! Every delivery day `T` owns a trading grid of 1905 minutes. Minute `u = 0` is
//! 16:00 on `T - 1` and minute `u = 1904` is 23:44 on `T`. All time arithmetic in
//! the crate (forecast moment, target minute, exogenous lags) happens on this axis;
//! negative minutes denote wall-clock times before the grid origin.

use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use thiserror::Error;

/// Number of minutely points per delivery/day.
pub const GRID_LEN: usize = 1905;
/// Grid minute of midnight at the start of the delivery day.
pub const MIDNIGHT_MINUTE: i64 = 480;
/// Continuous trading closes this many minutes before delivery start.
pub const GATE_CLOSURE_MINUTES: i64 = 5;
/// Quarter-hourly deliveries per day.
pub const QUARTERS_PER_DAY: u8 = 96;

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";
pub const DATE_FORMAT: &str = "%Y-%m-%d";

pub const TRANSACTIONS_HEADER: &str = "delivery_date,delivery_quarter,trade_timestamp,price_eur_mwh,volume_mw";
pub const EXOGENOUS_HEADER: &str = "timestamp,value";

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: {field} is not on its tick grid")]
    OutOfRangeTick { line: u64, field: &'static str },
    #[error("line {line}: trade after gate closure")]
    TradeAfterGateClosure { line: u64 },
    #[error("invalid delivery quarter {0} (expected 1..=96)")]
    InvalidQuarter(i64),
    #[error("missing exogenous series {0}")]
    MissingSeries(PathBuf),
    #[error("{series}: expected {expected}-minute spacing, found {found} minutes at {at}")]
    FrequencyMismatch {
        series: String,
        expected: i64,
        found: i64,
        at: NaiveDateTime,
    },
    #[error("{series}: gap in series, first missing timestamp {missing}")]
    GapInSeries { series: String, missing: NaiveDateTime },
    #[error("{series}: no value at {at}")]
    PanelRangeExceeded { series: String, at: NaiveDateTime },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T, E = MarketDataError> = std::result::Result<T, E>;

/// 16:00 on the day before `day`.
pub fn grid_origin(day: NaiveDate) -> NaiveDateTime {
    (day - Duration::days(1)).and_time(NaiveTime::from_hms_opt(16, 0, 0).expect("valid time"))
}

/// Wall-clock time of grid minute `u` for delivery day `day`. Negative minutes
/// precede the grid origin.
pub fn wall_clock(day: NaiveDate, u: i64) -> NaiveDateTime {
    grid_origin(day) + Duration::minutes(u)
}

/// Grid minute containing `wall`, or `None` when outside [16:00 T-1, 23:44 T].
pub fn grid_minute(day: NaiveDate, wall: NaiveDateTime) -> Option<usize> {
    let minutes = (wall - grid_origin(day)).num_seconds().div_euclid(60);
    if (0..GRID_LEN as i64).contains(&minutes) {
        Some(minutes as usize)
    } else {
        None
    }
}

/// Grid minute at which delivery `quarter` starts: 480 + 15 (d - 1).
pub fn delivery_start_minute(quarter: i64) -> Result<i64> {
    if !(1..=QUARTERS_PER_DAY as i64).contains(&quarter) {
        return Err(MarketDataError::InvalidQuarter(quarter));
    }
    Ok(MIDNIGHT_MINUTE + 15 * (quarter - 1))
}

/// A point on the trading grid of one delivery day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridTime {
    pub day: NaiveDate,
    pub minute: u16,
}

impl GridTime {
    pub fn new(day: NaiveDate, minute: usize) -> Option<Self> {
        (minute < GRID_LEN).then_some(Self {
            day,
            minute: minute as u16,
        })
    }

    pub fn from_wall_clock(day: NaiveDate, wall: NaiveDateTime) -> Option<Self> {
        grid_minute(day, wall).and_then(|u| Self::new(day, u))
    }

    pub fn wall_clock(&self) -> NaiveDateTime {
        wall_clock(self.day, self.minute as i64)
    }
}

/// One quarter-hourly product: delivery day and quarter index 1..=96.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DeliveryId {
    pub day: NaiveDate,
    pub quarter: u8,
}

impl DeliveryId {
    pub fn new(day: NaiveDate, quarter: i64) -> Result<Self> {
        delivery_start_minute(quarter)?;
        Ok(Self {
            day,
            quarter: quarter as u8,
        })
    }

    pub fn start_minute(&self) -> i64 {
        MIDNIGHT_MINUTE + 15 * (self.quarter as i64 - 1)
    }

    pub fn start_time(&self) -> NaiveDateTime {
        wall_clock(self.day, self.start_minute())
    }

    /// Last instant at which a trade may be recorded.
    pub fn gate_closure(&self) -> NaiveDateTime {
        self.start_time() - Duration::minutes(GATE_CLOSURE_MINUTES)
    }
}

impl fmt::Display for DeliveryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} q{}", self.day, self.quarter)
    }
}

/// A single continuous-market trade. Prices are kept in euro cents and volumes
/// in tenths of a MW so that the tick grid is exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionRecord {
    pub delivery: DeliveryId,
    pub trade_time: NaiveDateTime,
    pub price_cents: i64,
    pub volume_dmw: i64,
}

impl TransactionRecord {
    pub fn price(&self) -> f64 {
        self.price_cents as f64 / 100.0
    }

    /// Traded power in MW.
    pub fn volume_mw(&self) -> f64 {
        self.volume_dmw as f64 / 10.0
    }

    /// Traded energy of the 15-minute product in MWh.
    pub fn energy_mwh(&self) -> f64 {
        self.volume_mw() * 0.25
    }

    fn sort_key(&self) -> (NaiveDate, u8, NaiveDateTime) {
        (self.delivery.day, self.delivery.quarter, self.trade_time)
    }
}

fn parse_ticks(raw: &str, decimals: u32) -> Option<i64> {
    let raw = raw.trim();
    let (negative, digits) = match raw.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, raw),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    // Extra decimals are allowed only if they are zeros.
    let (kept, extra) = if frac_part.len() > decimals as usize {
        frac_part.split_at(decimals as usize)
    } else {
        (frac_part, "")
    };
    if extra.chars().any(|c| c != '0') {
        return None;
    }
    let int: i64 = if int_part.is_empty() { 0 } else { int_part.parse().ok()? };
    let mut frac: i64 = if kept.is_empty() { 0 } else { kept.parse().ok()? };
    for _ in kept.len()..decimals as usize {
        frac *= 10;
    }
    let ticks = int.checked_mul(10_i64.pow(decimals))?.checked_add(frac)?;
    Some(if negative { -ticks } else { ticks })
}

/// Formats an integer tick count with a fixed number of decimals.
pub fn format_ticks(ticks: i64, decimals: u32) -> String {
    let scale = 10_i64.pow(decimals);
    let sign = if ticks < 0 { "-" } else { "" };
    let abs = ticks.unsigned_abs() as i64;
    format!(
        "{sign}{}.{:0width$}",
        abs / scale,
        abs % scale,
        width = decimals as usize
    )
}

fn is_decimal(raw: &str) -> bool {
    raw.trim().parse::<f64>().map(|v| v.is_finite()).unwrap_or(false)
}

fn parse_transaction(record: &csv::StringRecord, line: u64) -> Result<TransactionRecord> {
    let malformed = |reason: String| MarketDataError::MalformedRow { line, reason };
    if record.len() != 5 {
        return Err(malformed(format!("expected 5 fields, found {}", record.len())));
    }
    let day = NaiveDate::parse_from_str(record[0].trim(), DATE_FORMAT)
        .map_err(|e| malformed(format!("delivery_date: {e}")))?;
    let quarter: i64 = record[1]
        .trim()
        .parse()
        .map_err(|e| malformed(format!("delivery_quarter: {e}")))?;
    let delivery = DeliveryId::new(day, quarter).map_err(|e| malformed(e.to_string()))?;
    let trade_time = NaiveDateTime::parse_from_str(record[2].trim(), TIMESTAMP_FORMAT)
        .map_err(|e| malformed(format!("trade_timestamp: {e}")))?;
    if !is_decimal(&record[3]) {
        return Err(malformed("price_eur_mwh is not a number".into()));
    }
    let price_cents = parse_ticks(&record[3], 2).ok_or(MarketDataError::OutOfRangeTick {
        line,
        field: "price_eur_mwh",
    })?;
    if !is_decimal(&record[4]) {
        return Err(malformed("volume_mw is not a number".into()));
    }
    let volume_dmw = parse_ticks(&record[4], 1).ok_or(MarketDataError::OutOfRangeTick {
        line,
        field: "volume_mw",
    })?;
    if volume_dmw <= 0 {
        return Err(malformed("volume must be positive".into()));
    }
    if trade_time < grid_origin(day) {
        return Err(malformed("trade before 16:00 of the previous day".into()));
    }
    if trade_time > delivery.gate_closure() {
        return Err(MarketDataError::TradeAfterGateClosure { line });
    }
    Ok(TransactionRecord {
        delivery,
        trade_time,
        price_cents,
        volume_dmw,
    })
}

fn check_header(headers: &csv::StringRecord, expected: &str, line: u64) -> Result<()> {
    let found: Vec<&str> = headers.iter().map(str::trim).collect();
    let wanted: Vec<&str> = expected.split(',').collect();
    if found != wanted {
        return Err(MarketDataError::MalformedRow {
            line,
            reason: format!("unexpected header {:?}", found.join(",")),
        });
    }
    Ok(())
}

/// Parses transactions from any reader; records come back sorted by
/// (delivery day, quarter, trade time).
pub fn read_transactions<R: io::Read>(reader: R) -> Result<Vec<TransactionRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    check_header(rdr.headers()?, TRANSACTIONS_HEADER, 1)?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| MarketDataError::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        out.push(parse_transaction(&row, line)?);
    }
    out.sort_by_key(|t| t.sort_key());
    Ok(out)
}

pub fn load_transactions(path: &Path) -> Result<Vec<TransactionRecord>> {
    read_transactions(File::open(path)?)
}

pub fn write_transactions<W: Write>(mut w: W, records: &[TransactionRecord]) -> io::Result<()> {
    writeln!(w, "{TRANSACTIONS_HEADER}")?;
    for t in records {
        writeln!(
            w,
            "{},{},{},{},{}",
            t.delivery.day.format(DATE_FORMAT),
            t.delivery.quarter,
            t.trade_time.format(TIMESTAMP_FORMAT),
            format_ticks(t.price_cents, 2),
            format_ticks(t.volume_dmw, 1)
        )?;
    }
    Ok(())
}

pub fn save_transactions(path: &Path, records: &[TransactionRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_transactions(&mut w, records)?;
    w.flush()?;
    Ok(())
}

/// Exogenous variables, indexed as in the panel files `x1.csv` .. `x7.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExogenousVar {
    /// FR-DE physical flow, MW, export positive (hourly).
    CrossBorderFlow,
    /// Actual renewable generation, MW.
    ResActual,
    /// Day-ahead renewable forecast, MW.
    ResForecast,
    /// Actual load, MW.
    LoadActual,
    /// Day-ahead load forecast, MW.
    LoadForecast,
    /// Day-ahead auction price, EUR/MWh.
    DayAheadPrice,
    /// Intraday auction price, EUR/MWh.
    IntradayAuctionPrice,
}

impl ExogenousVar {
    pub const ALL: [ExogenousVar; 7] = [
        ExogenousVar::CrossBorderFlow,
        ExogenousVar::ResActual,
        ExogenousVar::ResForecast,
        ExogenousVar::LoadActual,
        ExogenousVar::LoadForecast,
        ExogenousVar::DayAheadPrice,
        ExogenousVar::IntradayAuctionPrice,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn file_name(self) -> String {
        format!("x{}.csv", self.index() + 1)
    }

    /// Native spacing in minutes.
    pub fn step_minutes(self) -> i64 {
        match self {
            ExogenousVar::CrossBorderFlow => 60,
            _ => 15,
        }
    }
}

/// A gap-free, regularly spaced series.
#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousSeries {
    pub start: NaiveDateTime,
    pub step_minutes: i64,
    pub values: Vec<f64>,
}

impl ExogenousSeries {
    pub fn end(&self) -> NaiveDateTime {
        self.start + Duration::minutes(self.step_minutes * (self.values.len() as i64 - 1))
    }

    pub fn value_at(&self, at: NaiveDateTime) -> Option<f64> {
        let offset = (at - self.start).num_minutes();
        if offset < 0 || offset % self.step_minutes != 0 || (at - self.start).num_seconds() % 60 != 0 {
            return None;
        }
        self.values.get((offset / self.step_minutes) as usize).copied()
    }
}

/// The seven exogenous series of the study.
#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousPanel {
    series: Vec<ExogenousSeries>,
}

impl ExogenousPanel {
    /// Builds a panel after checking spacing against each variable's native frequency.
    pub fn new(series: Vec<ExogenousSeries>) -> Result<Self> {
        assert_eq!(series.len(), 7, "panel needs exactly seven series");
        for (var, s) in ExogenousVar::ALL.iter().zip(&series) {
            if s.step_minutes != var.step_minutes() {
                return Err(MarketDataError::FrequencyMismatch {
                    series: var.file_name(),
                    expected: var.step_minutes(),
                    found: s.step_minutes,
                    at: s.start,
                });
            }
        }
        Ok(Self { series })
    }

    pub fn series(&self, var: ExogenousVar) -> &ExogenousSeries {
        &self.series[var.index()]
    }

    pub fn value(&self, var: ExogenousVar, at: NaiveDateTime) -> Result<f64> {
        self.series(var)
            .value_at(at)
            .ok_or_else(|| MarketDataError::PanelRangeExceeded {
                series: var.file_name(),
                at,
            })
    }

    /// Value of a quarter-hourly variable at the start of a delivery.
    pub fn at_delivery(&self, var: ExogenousVar, delivery: DeliveryId) -> Result<f64> {
        self.value(var, delivery.start_time())
    }
}

fn read_series<R: io::Read>(reader: R, var: ExogenousVar) -> Result<ExogenousSeries> {
    let name = var.file_name();
    let expected = var.step_minutes();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    check_header(rdr.headers()?, EXOGENOUS_HEADER, 1)?;
    let mut start = None;
    let mut prev: Option<NaiveDateTime> = None;
    let mut values = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| MarketDataError::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        if row.len() != 2 {
            return Err(MarketDataError::MalformedRow {
                line,
                reason: format!("expected 2 fields, found {}", row.len()),
            });
        }
        let ts = NaiveDateTime::parse_from_str(row[0].trim(), TIMESTAMP_FORMAT).map_err(|e| {
            MarketDataError::MalformedRow {
                line,
                reason: format!("timestamp: {e}"),
            }
        })?;
        let value: f64 = row[1].trim().parse().map_err(|e| MarketDataError::MalformedRow {
            line,
            reason: format!("value: {e}"),
        })?;
        if !value.is_finite() {
            return Err(MarketDataError::MalformedRow {
                line,
                reason: "value is not finite".into(),
            });
        }
        let aligned = ts.second() == 0 && (ts.hour() as i64 * 60 + ts.minute() as i64) % expected == 0;
        if let Some(p) = prev {
            let diff = (ts - p).num_minutes();
            if (ts - p).num_seconds() % 60 != 0 || diff <= 0 || diff % expected != 0 || !aligned {
                return Err(MarketDataError::FrequencyMismatch {
                    series: name,
                    expected,
                    found: diff,
                    at: ts,
                });
            }
            if diff > expected {
                return Err(MarketDataError::GapInSeries {
                    series: name,
                    missing: p + Duration::minutes(expected),
                });
            }
        } else {
            if !aligned {
                return Err(MarketDataError::FrequencyMismatch {
                    series: name,
                    expected,
                    found: (ts.minute() as i64) % expected,
                    at: ts,
                });
            }
            start = Some(ts);
        }
        prev = Some(ts);
        values.push(value);
    }
    let start = start.ok_or_else(|| MarketDataError::MalformedRow {
        line: 2,
        reason: format!("{name} is empty"),
    })?;
    Ok(ExogenousSeries {
        start,
        step_minutes: expected,
        values,
    })
}

/// Loads `x1.csv` .. `x7.csv` from `dir`.
pub fn load_exogenous(dir: &Path) -> Result<ExogenousPanel> {
    let mut series = Vec::with_capacity(7);
    for var in ExogenousVar::ALL {
        let path = dir.join(var.file_name());
        if !path.is_file() {
            return Err(MarketDataError::MissingSeries(path));
        }
        series.push(read_series(File::open(&path)?, var)?);
    }
    ExogenousPanel::new(series)
}

pub fn write_series<W: Write>(mut w: W, series: &ExogenousSeries) -> io::Result<()> {
    writeln!(w, "{EXOGENOUS_HEADER}")?;
    for (i, v) in series.values.iter().enumerate() {
        let ts = series.start + Duration::minutes(series.step_minutes * i as i64);
        writeln!(w, "{},{:.2}", ts.format(TIMESTAMP_FORMAT), v)?;
    }
    Ok(())
}

pub fn save_exogenous(dir: &Path, panel: &ExogenousPanel) -> Result<()> {
    for var in ExogenousVar::ALL {
        let mut w = BufWriter::new(File::create(dir.join(var.file_name()))?);
        write_series(&mut w, panel.series(var))?;
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, 2).unwrap()
    }

    fn at(d: NaiveDate, h: u32, m: u32, s: u32) -> NaiveDateTime {
        d.and_hms_opt(h, m, s).unwrap()
    }

    #[test]
    fn grid_minute_anchors() {
        let t = day();
        let prev = t.pred_opt().unwrap();
        assert_eq!(grid_minute(t, at(prev, 16, 0, 0)), Some(0));
        assert_eq!(grid_minute(t, at(t, 0, 0, 0)), Some(480));
        assert_eq!(grid_minute(t, at(t, 23, 44, 59)), Some(1904));
        assert_eq!(grid_minute(t, at(t, 23, 45, 0)), None);
        assert_eq!(grid_minute(t, at(prev, 15, 59, 59)), None);
    }

    #[test]
    fn grid_round_trip() {
        let t = day();
        for u in 0..GRID_LEN {
            assert_eq!(grid_minute(t, wall_clock(t, u as i64)), Some(u));
            let g = GridTime::new(t, u).unwrap();
            assert_eq!(GridTime::from_wall_clock(t, g.wall_clock()), Some(g));
        }
        assert!(GridTime::new(t, GRID_LEN).is_none());
    }

    #[test]
    fn delivery_start_minutes() {
        assert_eq!(delivery_start_minute(1).unwrap(), 480);
        assert_eq!(delivery_start_minute(96).unwrap(), 1905);
        assert!(matches!(
            delivery_start_minute(0),
            Err(MarketDataError::InvalidQuarter(0))
        ));
        assert!(delivery_start_minute(97).is_err());
        for d in 2..=96 {
            assert_eq!(
                delivery_start_minute(d).unwrap() - delivery_start_minute(d - 1).unwrap(),
                15
            );
        }
    }

    fn parse(body: &str) -> Result<Vec<TransactionRecord>> {
        read_transactions(format!("{TRANSACTIONS_HEADER}\n{body}").as_bytes())
    }

    #[test]
    fn parses_a_row() {
        let recs = parse("2020-01-02,33,2020-01-02T06:12:45,41.25,0.5\n").unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].delivery.quarter, 33);
        assert_eq!(recs[0].price(), 41.25);
        assert_eq!(recs[0].volume_mw(), 0.5);
    }

    #[test]
    fn zero_volume_is_malformed() {
        let err = parse("2020-01-02,33,2020-01-02T06:12:45,41.25,0.0\n").unwrap_err();
        assert!(matches!(err, MarketDataError::MalformedRow { line: 2, .. }), "{err}");
    }

    #[test]
    fn trade_inside_gate_is_rejected() {
        // Delivery 33 starts at 08:00; 07:57 is three minutes before.
        let err = parse("2020-01-02,33,2020-01-02T07:57:00,41.25,0.5\n").unwrap_err();
        assert!(matches!(err, MarketDataError::TradeAfterGateClosure { line: 2 }));
        assert!(parse("2020-01-02,33,2020-01-02T07:55:00,41.25,0.5\n").is_ok());
    }

    #[test]
    fn off_tick_values_are_rejected() {
        let err = parse("2020-01-02,33,2020-01-02T06:12:45,41.255,0.5\n").unwrap_err();
        assert!(matches!(
            err,
            MarketDataError::OutOfRangeTick {
                field: "price_eur_mwh",
                ..
            }
        ));
        let err = parse("2020-01-02,33,2020-01-02T06:12:45,41.25,0.55\n").unwrap_err();
        assert!(matches!(
            err,
            MarketDataError::OutOfRangeTick { field: "volume_mw", .. }
        ));
        assert!(parse("2020-01-02,33,2020-01-02T06:12:45,41.250,0.50\n").is_ok());
    }

    #[test]
    fn records_are_sorted_and_round_trip() {
        let body = "2020-01-02,34,2020-01-02T06:00:00,-1.05,1.0\n\
                    2020-01-02,33,2020-01-02T06:12:45,41.25,0.5\n\
                    2020-01-02,33,2020-01-01T18:00:01,40.00,12.3\n";
        let recs = parse(body).unwrap();
        assert_eq!(
            recs[0].trade_time,
            at(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), 18, 0, 1)
        );
        assert_eq!(recs[2].delivery.quarter, 34);
        let mut buf = Vec::new();
        write_transactions(&mut buf, &recs).unwrap();
        let again = read_transactions(buf.as_slice()).unwrap();
        assert_eq!(again, recs);
        let mut buf2 = Vec::new();
        write_transactions(&mut buf2, &again).unwrap();
        assert_eq!(buf, buf2);
        assert!(String::from_utf8(buf).unwrap().contains(",-1.05,1.0\n"));
    }

    #[test]
    fn tick_formatting() {
        assert_eq!(format_ticks(-5, 2), "-0.05");
        assert_eq!(format_ticks(4125, 2), "41.25");
        assert_eq!(format_ticks(5, 1), "0.5");
        assert_eq!(parse_ticks("-0.05", 2), Some(-5));
        assert_eq!(parse_ticks(".5", 1), Some(5));
        assert_eq!(parse_ticks("abc", 1), None);
    }

    fn write_panel(dir: &Path, step_override: Option<(usize, i64)>, drop: Option<(usize, usize)>) {
        let start = at(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), 0, 0, 0);
        for (k, var) in ExogenousVar::ALL.iter().enumerate() {
            let mut step = var.step_minutes();
            if let Some((kk, s)) = step_override {
                if kk == k {
                    step = s;
                }
            }
            let n = 2 * 24 * 60 / step as usize;
            let mut body = String::from("timestamp,value\n");
            for i in 0..n {
                if drop == Some((k, i)) {
                    continue;
                }
                let ts = start + Duration::minutes(step * i as i64);
                body.push_str(&format!("{},{}\n", ts.format(TIMESTAMP_FORMAT), i as f64 * 0.5));
            }
            std::fs::write(dir.join(var.file_name()), body).unwrap();
        }
    }

    #[test]
    fn loads_complete_panel() {
        let dir = tempfile::tempdir().unwrap();
        write_panel(dir.path(), None, None);
        let panel = load_exogenous(dir.path()).unwrap();
        let x1 = panel.series(ExogenousVar::CrossBorderFlow);
        assert_eq!(x1.step_minutes, 60);
        assert_eq!(x1.values.len(), 48);
        let t = at(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), 1, 15, 0);
        assert_eq!(panel.value(ExogenousVar::LoadActual, t).unwrap(), 2.5);
        assert!(panel.value(ExogenousVar::CrossBorderFlow, t).is_err());
    }

    #[test]
    fn hourly_series_at_quarter_spacing_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_panel(dir.path(), Some((0, 15)), None);
        let err = load_exogenous(dir.path()).unwrap_err();
        assert!(
            matches!(err, MarketDataError::FrequencyMismatch { expected: 60, .. }),
            "{err}"
        );
    }

    #[test]
    fn missing_quarter_is_a_gap() {
        let dir = tempfile::tempdir().unwrap();
        write_panel(dir.path(), None, Some((3, 10)));
        match load_exogenous(dir.path()).unwrap_err() {
            MarketDataError::GapInSeries { series, missing } => {
                assert_eq!(series, "x4.csv");
                assert_eq!(missing, at(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), 2, 30, 0));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_panel(dir.path(), None, None);
        std::fs::remove_file(dir.path().join("x6.csv")).unwrap();
        assert!(matches!(
            load_exogenous(dir.path()).unwrap_err(),
            MarketDataError::MissingSeries(_)
        ));
    }
}
