//! Expert sets of explanatory variables.
//!
//! * Set 1: lag-differenced price trajectories of deliveries `d-8 ..= d+4`
//!   resampled every 15 minutes, the same-minute differenced prices of the
//!   previous seven days, the last known price, liquidity proxies, the
//!   exogenous snapshot and weekday dummies.
//! * Set 2: the last hour of differenced prices for deliveries `d-4 ..= d`.
//! * Set 3: last price and its difference, liquidity proxies, exogenous
//!   snapshot and weekday dummies (21 variables).
//!
//! Intraday data is read at grid minutes `<= m - 20` only.
//!
//! Variable identifiers are stable and self-describing:
//! `p_diff[d-3][u=45]`, `p_lag[T-7]`, `p_last`, `p_last_diff`,
//! `p_recent[d-1][m-20-17]`, `vol_total_diff`, `vol_recent_sum`,
//! `vol_active_minutes`, `exog.x1` .. `exog.x7`, `exog.res_error`,
//! `exog.load_error`, `dummy.mon` .. `dummy.sun`.

use std::fmt;

use chrono::{Datelike, Duration, NaiveDate};
use thiserror::Error;

use crate::market_data::{
    delivery_start_minute, wall_clock, DeliveryId, ExogenousPanel, ExogenousVar, MarketDataError, QUARTERS_PER_DAY,
};
use crate::preprocessing::{LiquidityStats, PreprocessError, TrajectoryStore};

/// Publication delay of continuous-market prices, in minutes.
pub const PUBLICATION_DELAY: i64 = 20;
/// Number of previous days whose same-minute price changes enter set 1.
pub const HISTORY_DAYS: usize = 7;
/// Resampling step of set-1 trajectories.
pub const RESAMPLE_STEP: i64 = 15;
/// Length of the recent-price window of set 2, in minutes (inclusive offsets 0..=60).
pub const RECENT_WINDOW: i64 = 60;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("set 1 for {day} needs {HISTORY_DAYS} prior days of data")]
    InsufficientHistory { day: NaiveDate },
    #[error("resampling requires m >= 20, got m = {0}")]
    ForecastBeforePublication(i64),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    MarketData(#[from] MarketDataError),
}

pub type Result<T, E = FeatureError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureSet {
    S1 = 1,
    S2 = 2,
    S3 = 3,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 3] = [FeatureSet::S1, FeatureSet::S2, FeatureSet::S3];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(FeatureSet::S1),
            2 => Some(FeatureSet::S2),
            3 => Some(FeatureSet::S3),
            _ => None,
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

/// Delivery, lead time and horizon of a forecasting task, independent of the day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskCell {
    pub quarter: u8,
    pub lead: i64,
    pub horizon: i64,
}

impl TaskCell {
    pub fn new(quarter: u8, lead: i64, horizon: i64) -> Result<Self> {
        delivery_start_minute(quarter as i64)?;
        if lead <= 0 || horizon <= 0 {
            return Err(FeatureError::InvalidTask(format!(
                "lead {lead} and horizon {horizon} must be positive"
            )));
        }
        Ok(Self { quarter, lead, horizon })
    }

    pub fn delivery_start(&self) -> i64 {
        delivery_start_minute(self.quarter as i64).expect("validated quarter")
    }

    /// Target transaction minute.
    pub fn s(&self) -> i64 {
        self.delivery_start() - self.lead
    }

    /// Forecast moment.
    pub fn m(&self) -> i64 {
        self.s() - self.horizon
    }

    /// Differencing lag `s - (m - 20)`.
    pub fn lag(&self) -> i64 {
        self.horizon + PUBLICATION_DELAY
    }

    /// Last minute whose price is published at the forecast moment.
    pub fn last_published(&self) -> i64 {
        self.m() - PUBLICATION_DELAY
    }
}

/// A task on a given delivery day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ForecastTask {
    pub day: NaiveDate,
    pub cell: TaskCell,
}

impl ForecastTask {
    pub fn delivery(&self) -> DeliveryId {
        DeliveryId {
            day: self.day,
            quarter: self.cell.quarter,
        }
    }
    pub fn m(&self) -> i64 {
        self.cell.m()
    }
    pub fn s(&self) -> i64 {
        self.cell.s()
    }
    pub fn lead(&self) -> i64 {
        self.cell.lead
    }
    pub fn horizon(&self) -> i64 {
        self.cell.horizon
    }
    pub fn lag(&self) -> i64 {
        self.cell.lag()
    }
}

/// What a column describes; exogenous columns are exempt from correlation filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnKind {
    /// A sample of the price trajectory of the given delivery quarter.
    Trajectory(u8),
    Exogenous,
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatureVector {
    pub set: FeatureSet,
    pub day: NaiveDate,
    pub names: Vec<String>,
    pub kinds: Vec<ColumnKind>,
    pub values: Vec<f64>,
}

impl RawFeatureVector {
    fn new(set: FeatureSet, day: NaiveDate) -> Self {
        Self {
            set,
            day,
            names: Vec::new(),
            kinds: Vec::new(),
            values: Vec::new(),
        }
    }

    fn push(&mut self, name: String, kind: ColumnKind, value: f64) {
        self.names.push(name);
        self.kinds.push(kind);
        self.values.push(value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Resampling minutes `(0, 15, ..., m - 20)` for set 1.
pub fn resample_steps(m: i64) -> Result<Vec<i64>> {
    if m < PUBLICATION_DELAY {
        return Err(FeatureError::ForecastBeforePublication(m));
    }
    let last = m - PUBLICATION_DELAY;
    let mut steps: Vec<i64> = (0..=last / RESAMPLE_STEP).map(|k| k * RESAMPLE_STEP).collect();
    if last % RESAMPLE_STEP > 0 {
        steps.push(last);
    }
    Ok(steps)
}

/// Exogenous information available at the forecast moment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExogenousSnapshot {
    pub x1_last: f64,
    pub x2_last: f64,
    pub x3_at_d: f64,
    pub x4_last: f64,
    pub x5_at_d: f64,
    pub res_error: f64,
    pub load_error: f64,
    pub x6_at_d: f64,
    pub x7_at_d: f64,
}

pub const EXOGENOUS_NAMES: [&str; 9] = [
    "exog.x1",
    "exog.x2",
    "exog.x3",
    "exog.x4",
    "exog.x5",
    "exog.res_error",
    "exog.load_error",
    "exog.x6",
    "exog.x7",
];

impl ExogenousSnapshot {
    pub fn values(&self) -> [f64; 9] {
        [
            self.x1_last,
            self.x2_last,
            self.x3_at_d,
            self.x4_last,
            self.x5_at_d,
            self.res_error,
            self.load_error,
            self.x6_at_d,
            self.x7_at_d,
        ]
    }
}

/// Grid minutes of the last published hourly and quarter-hourly actuals at `m`.
pub fn exogenous_lag_minutes(m: i64) -> (i64, i64) {
    ((m - 121).div_euclid(60) * 60, (m - 61).div_euclid(15) * 15)
}

pub fn exogenous_snapshot(panel: &ExogenousPanel, task: &ForecastTask) -> Result<ExogenousSnapshot> {
    let (hourly, quarterly) = exogenous_lag_minutes(task.m());
    let hourly_at = wall_clock(task.day, hourly);
    let quarterly_at = wall_clock(task.day, quarterly);
    let delivery = task.delivery();
    let x2_last = panel.value(ExogenousVar::ResActual, quarterly_at)?;
    let x4_last = panel.value(ExogenousVar::LoadActual, quarterly_at)?;
    Ok(ExogenousSnapshot {
        x1_last: panel.value(ExogenousVar::CrossBorderFlow, hourly_at)?,
        x2_last,
        x3_at_d: panel.at_delivery(ExogenousVar::ResForecast, delivery)?,
        x4_last,
        x5_at_d: panel.at_delivery(ExogenousVar::LoadForecast, delivery)?,
        res_error: x2_last - panel.value(ExogenousVar::ResForecast, quarterly_at)?,
        load_error: x4_last - panel.value(ExogenousVar::LoadForecast, quarterly_at)?,
        x6_at_d: panel.at_delivery(ExogenousVar::DayAheadPrice, delivery)?,
        x7_at_d: panel.at_delivery(ExogenousVar::IntradayAuctionPrice, delivery)?,
    })
}

pub const WEEKDAY_NAMES: [&str; 7] = [
    "dummy.mon",
    "dummy.tue",
    "dummy.wed",
    "dummy.thu",
    "dummy.fri",
    "dummy.sat",
    "dummy.sun",
];

/// One-hot weekday vector, Monday first.
pub fn weekday_dummies(day: NaiveDate) -> [f64; 7] {
    let mut out = [0.0; 7];
    out[day.weekday().num_days_from_monday() as usize] = 1.0;
    out
}

fn offset_label(offset: i64) -> String {
    match offset {
        0 => "d".to_string(),
        o if o > 0 => format!("d+{o}"),
        o => format!("d{o}"),
    }
}

fn clipped_range(quarter: u8, before: i64, after: i64) -> std::ops::RangeInclusive<u8> {
    let lo = (quarter as i64 - before).max(1) as u8;
    let hi = (quarter as i64 + after).min(QUARTERS_PER_DAY as i64) as u8;
    lo..=hi
}

/// Deliveries whose price trajectories enter set 1 for delivery `quarter`.
pub fn set1_deliveries(quarter: u8) -> std::ops::RangeInclusive<u8> {
    clipped_range(quarter, 8, 4)
}

/// Deliveries whose price trajectories enter set 2 for delivery `quarter`.
pub fn set2_deliveries(quarter: u8) -> std::ops::RangeInclusive<u8> {
    clipped_range(quarter, 4, 0)
}

/// Builds raw feature vectors, targets and naive forecasts from a trajectory store.
#[derive(Debug, Clone, Copy)]
pub struct FeatureBuilder<'a> {
    store: &'a TrajectoryStore,
}

impl<'a> FeatureBuilder<'a> {
    pub fn new(store: &'a TrajectoryStore) -> Self {
        Self { store }
    }

    pub fn store(&self) -> &'a TrajectoryStore {
        self.store
    }

    /// Last published price `P(m - 20)`; also the naive forecast.
    pub fn last_price(&self, task: &ForecastTask) -> Result<f64> {
        let traj = self.store.delivery(task.day, task.cell.quarter)?;
        Ok(traj.price.at(task.cell.last_published()))
    }

    /// Differenced target `P(s) - P(m - 20)`.
    pub fn target(&self, task: &ForecastTask) -> Result<f64> {
        let traj = self.store.delivery(task.day, task.cell.quarter)?;
        Ok(traj.price.difference_extended(task.s(), task.lag()))
    }

    /// Realised price `P(s)`.
    pub fn actual(&self, task: &ForecastTask) -> Result<f64> {
        let traj = self.store.delivery(task.day, task.cell.quarter)?;
        Ok(traj.price.at(task.s()))
    }

    fn liquidity(&self, task: &ForecastTask) -> Result<LiquidityStats> {
        let totals = self.store.totals(task.day)?;
        let own = self.store.delivery(task.day, task.cell.quarter)?;
        Ok(LiquidityStats::extended(totals, &own.volume, task.m(), task.lag()))
    }

    fn push_common(&self, v: &mut RawFeatureVector, task: &ForecastTask, snapshot: &ExogenousSnapshot) -> Result<()> {
        let liq = self.liquidity(task)?;
        v.push("vol_total_diff".into(), ColumnKind::Other, liq.total_volume_change);
        v.push("vol_recent_sum".into(), ColumnKind::Other, liq.recent_volume_sum);
        v.push(
            "vol_active_minutes".into(),
            ColumnKind::Other,
            liq.active_minutes as f64,
        );
        for (name, value) in EXOGENOUS_NAMES.iter().zip(snapshot.values()) {
            v.push(name.to_string(), ColumnKind::Exogenous, value);
        }
        for (name, value) in WEEKDAY_NAMES.iter().zip(weekday_dummies(task.day)) {
            v.push(name.to_string(), ColumnKind::Other, value);
        }
        Ok(())
    }

    pub fn snapshot(&self, task: &ForecastTask) -> Result<ExogenousSnapshot> {
        exogenous_snapshot(self.store.exogenous(), task)
    }

    pub fn build(&self, set: FeatureSet, task: &ForecastTask) -> Result<RawFeatureVector> {
        match set {
            FeatureSet::S1 => self.build_s1(task),
            FeatureSet::S2 => self.build_s2(task),
            FeatureSet::S3 => self.build_s3(task),
        }
    }

    pub fn build_s1(&self, task: &ForecastTask) -> Result<RawFeatureVector> {
        let snapshot = self.snapshot(task)?;
        let mut v = RawFeatureVector::new(FeatureSet::S1, task.day);
        let lag = task.lag();
        let steps = resample_steps(task.m()).unwrap_or_default();
        for q in set1_deliveries(task.cell.quarter) {
            let traj = &self.store.delivery(task.day, q)?.price;
            let label = offset_label(q as i64 - task.cell.quarter as i64);
            for &u in &steps {
                v.push(
                    format!("p_diff[{label}][u={u}]"),
                    ColumnKind::Trajectory(q),
                    traj.difference_extended(u, lag),
                );
            }
        }
        for k in (1..=HISTORY_DAYS as i64).rev() {
            let past = ForecastTask {
                day: task.day - Duration::days(k),
                cell: task.cell,
            };
            if !self.store.contains(past.day, task.cell.quarter) {
                return Err(FeatureError::InsufficientHistory { day: task.day });
            }
            v.push(format!("p_lag[T-{k}]"), ColumnKind::Other, self.target(&past)?);
        }
        v.push("p_last".into(), ColumnKind::Other, self.last_price(task)?);
        self.push_common(&mut v, task, &snapshot)?;
        Ok(v)
    }

    pub fn build_s2(&self, task: &ForecastTask) -> Result<RawFeatureVector> {
        let mut v = RawFeatureVector::new(FeatureSet::S2, task.day);
        let last = task.cell.last_published();
        let lag = task.lag();
        for q in set2_deliveries(task.cell.quarter) {
            let traj = &self.store.delivery(task.day, q)?.price;
            let label = offset_label(q as i64 - task.cell.quarter as i64);
            for back in 0..=RECENT_WINDOW {
                v.push(
                    format!("p_recent[{label}][m-20-{back}]"),
                    ColumnKind::Trajectory(q),
                    traj.difference_extended(last - back, lag),
                );
            }
        }
        Ok(v)
    }

    pub fn build_s3(&self, task: &ForecastTask) -> Result<RawFeatureVector> {
        let snapshot = self.snapshot(task)?;
        let mut v = RawFeatureVector::new(FeatureSet::S3, task.day);
        let traj = &self.store.delivery(task.day, task.cell.quarter)?.price;
        let last = task.cell.last_published();
        v.push("p_last".into(), ColumnKind::Other, traj.at(last));
        v.push(
            "p_last_diff".into(),
            ColumnKind::Other,
            traj.difference_extended(last, task.lag()),
        );
        self.push_common(&mut v, task, &snapshot)?;
        Ok(v)
    }
}

pub(crate) fn retain_mask<T>(v: &mut Vec<T>, keep: &[bool]) {
    let mut it = keep.iter();
    v.retain(|_| *it.next().expect("mask length matches"));
}

/// Raw vectors of one set over consecutive days, in row order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBlock {
    pub names: Vec<String>,
    pub kinds: Vec<ColumnKind>,
    pub rows: Vec<Vec<f64>>,
}

impl RawBlock {
    /// Stacks vectors that share one naming; panics if names differ.
    pub fn from_vectors(vectors: &[RawFeatureVector]) -> Self {
        let first = vectors.first().expect("at least one vector");
        for v in vectors {
            assert_eq!(v.names, first.names, "feature names differ across days");
        }
        Self {
            names: first.names.clone(),
            kinds: first.kinds.clone(),
            rows: vectors.iter().map(|v| v.values.clone()).collect(),
        }
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    /// Removes every trajectory whose samples take a single value over all rows.
    /// Returns the quarters of the removed trajectories.
    pub fn drop_constant_trajectories(&mut self) -> Vec<u8> {
        let mut constant: Vec<(u8, bool)> = Vec::new();
        let mut first_value: Vec<Option<f64>> = Vec::new();
        for (j, kind) in self.kinds.iter().enumerate() {
            if let ColumnKind::Trajectory(q) = *kind {
                let pos = match constant.iter().position(|(cq, _)| *cq == q) {
                    Some(p) => p,
                    None => {
                        constant.push((q, true));
                        first_value.push(None);
                        constant.len() - 1
                    }
                };
                for row in &self.rows {
                    let x = row[j];
                    match first_value[pos] {
                        None => first_value[pos] = Some(x),
                        Some(f) if f != x => constant[pos].1 = false,
                        _ => {}
                    }
                }
            }
        }
        let dropped: Vec<u8> = constant.iter().filter(|(_, c)| *c).map(|(q, _)| *q).collect();
        if dropped.is_empty() {
            return dropped;
        }
        let keep: Vec<bool> = self
            .kinds
            .iter()
            .map(|k| !matches!(k, ColumnKind::Trajectory(q) if dropped.contains(q)))
            .collect();
        retain_mask(&mut self.names, &keep);
        retain_mask(&mut self.kinds, &keep);
        for row in &mut self.rows {
            retain_mask(row, &keep);
        }
        dropped
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.n_cols())
            .map(|j| self.rows.iter().map(|r| r[j]).collect())
            .collect()
    }
}
