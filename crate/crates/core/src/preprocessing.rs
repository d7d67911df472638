//! Minutely price and volume trajectories, lag differencing and liquidity statistics.
//!
//! Price trajectories hold the per-minute VWAP of a delivery. Minutes before the
//! first trade carry the intraday auction price, untraded minutes carry the
//! previous value, and from gate closure onwards the trajectory holds the mean
//! VWAP of the three hours before delivery start. Volume trajectories hold traded
//! energy in MWh per minute and are zero wherever nothing traded.
//!
//! Trajectories extend to negative grid minutes with their pre-open value (the
//! auction price for prices, zero for volumes), which is what a forecaster sees
//! before continuous trading opens.

use std::collections::{BTreeSet, HashMap};
use std::io::{self, BufRead, Write};
use std::ops::Range;

use chrono::{Duration, NaiveDate};
use thiserror::Error;

use crate::market_data::{
    grid_minute, DeliveryId, ExogenousPanel, ExogenousVar, MarketDataError, TransactionRecord, GATE_CLOSURE_MINUTES,
    GRID_LEN, QUARTERS_PER_DAY,
};

/// Window before delivery start used for the post-closure fill, in minutes.
pub const CLOSING_AVERAGE_MINUTES: i64 = 180;
/// First and last offsets (relative to the forecast moment) of the liquidity window.
pub const LIQUIDITY_WINDOW: (i64, i64) = (80, 20);

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("lag underflow: minute {u} minus lag {lag} is before the grid origin")]
    LagUnderflow { u: i64, lag: i64 },
    #[error("minute {0} is outside the trading grid")]
    OutOfGrid(i64),
    #[error("day {0} is not in the store")]
    UnknownDay(NaiveDate),
    #[error("delivery {0} was not prepared")]
    UnknownDelivery(DeliveryId),
    #[error("malformed trajectory cache line {line}: {reason}")]
    MalformedCache { line: usize, reason: String },
    #[error(transparent)]
    MarketData(#[from] MarketDataError),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T, E = PreprocessError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrajectoryKind {
    Price,
    Volume,
}

impl TrajectoryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TrajectoryKind::Price => "price",
            TrajectoryKind::Volume => "volume",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub delivery: DeliveryId,
    pub kind: TrajectoryKind,
    values: Vec<f64>,
    pre_open: f64,
}

/// `traj[u] - traj[u - lag]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifferencedValue {
    pub value: f64,
    pub lag: i64,
}

impl Trajectory {
    pub fn from_values(delivery: DeliveryId, kind: TrajectoryKind, values: Vec<f64>, pre_open: f64) -> Self {
        assert_eq!(values.len(), GRID_LEN, "trajectory must have {GRID_LEN} points");
        Self {
            delivery,
            kind,
            values,
            pre_open,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pre_open(&self) -> f64 {
        self.pre_open
    }

    /// Value at grid minute `u`; negative minutes read the pre-open value.
    pub fn at(&self, u: i64) -> f64 {
        if u < 0 {
            self.pre_open
        } else {
            self.values[u as usize]
        }
    }

    /// Lag difference on the grid proper.
    pub fn difference(&self, u: i64, lag: i64) -> Result<DifferencedValue> {
        if u < 0 || u >= GRID_LEN as i64 {
            return Err(PreprocessError::OutOfGrid(u));
        }
        if u - lag < 0 {
            return Err(PreprocessError::LagUnderflow { u, lag });
        }
        Ok(DifferencedValue {
            value: self.values[u as usize] - self.values[(u - lag) as usize],
            lag,
        })
    }

    /// Lag difference allowing either end to fall before the grid origin.
    pub fn difference_extended(&self, u: i64, lag: i64) -> f64 {
        self.at(u) - self.at(u - lag)
    }
}

fn gate_minute(delivery: DeliveryId) -> i64 {
    delivery.start_minute() - GATE_CLOSURE_MINUTES
}

/// Builds the minutely VWAP trajectory of one delivery.
///
/// `trades` must all belong to `delivery`; they need not be sorted by time.
pub fn build_price_trajectory(delivery: DeliveryId, trades: &[TransactionRecord], auction_price: f64) -> Trajectory {
    // Tick arithmetic keeps the VWAP exact up to the final division.
    let mut notional = vec![0i128; GRID_LEN];
    let mut volume = vec![0i64; GRID_LEN];
    for t in trades {
        debug_assert_eq!(t.delivery, delivery);
        if let Some(u) = grid_minute(delivery.day, t.trade_time) {
            notional[u] += t.price_cents as i128 * t.volume_dmw as i128;
            volume[u] += t.volume_dmw;
        }
    }
    let vwap = |u: usize| notional[u] as f64 / volume[u] as f64 / 100.0;
    let start = delivery.start_minute();
    let gate = gate_minute(delivery).clamp(0, GRID_LEN as i64) as usize;

    let mut values = vec![0.0; GRID_LEN];
    let mut last = auction_price;
    for u in 0..gate {
        if volume[u] > 0 {
            last = vwap(u);
        }
        values[u] = last;
    }

    let window_start = (start - CLOSING_AVERAGE_MINUTES).max(0) as usize;
    let window_end = (start as usize).min(GRID_LEN);
    let (sum, count) = (window_start..window_end)
        .filter(|&u| volume[u] > 0)
        .fold((0.0, 0usize), |(s, c), u| (s + vwap(u), c + 1));
    let fill = if count > 0 { sum / count as f64 } else { last };
    for v in values.iter_mut().skip(gate) {
        *v = fill;
    }
    Trajectory::from_values(delivery, TrajectoryKind::Price, values, auction_price)
}

/// Builds the minutely traded-energy trajectory (MWh) of one delivery.
pub fn build_volume_trajectory(delivery: DeliveryId, trades: &[TransactionRecord]) -> Trajectory {
    let mut values = vec![0.0; GRID_LEN];
    for t in trades {
        if let Some(u) = grid_minute(delivery.day, t.trade_time) {
            values[u] += t.energy_mwh();
        }
    }
    Trajectory::from_values(delivery, TrajectoryKind::Volume, values, 0.0)
}

/// Per-minute traded energy summed over all 96 deliveries of a day.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeTotals {
    values: Vec<f64>,
}

impl VolumeTotals {
    pub fn from_trajectories<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Self {
        let mut values = vec![0.0; GRID_LEN];
        for t in trajs {
            for (acc, v) in values.iter_mut().zip(t.values()) {
                *acc += v;
            }
        }
        Self { values }
    }

    /// Sums the traded energy of every trade delivered on `day`.
    pub fn from_trades<'a>(day: NaiveDate, trades: impl IntoIterator<Item = &'a TransactionRecord>) -> Self {
        let mut values = vec![0.0; GRID_LEN];
        for t in trades {
            if let Some(u) = grid_minute(day, t.trade_time) {
                values[u] += t.energy_mwh();
            }
        }
        Self { values }
    }

    pub fn at(&self, u: i64) -> f64 {
        if u < 0 {
            0.0
        } else {
            self.values[u as usize]
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Liquidity proxies observed at the forecast moment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiquidityStats {
    /// Lag-differenced total traded energy over all deliveries at `m - 20`.
    pub total_volume_change: f64,
    /// Energy traded for the delivery over minutes `m - 80 ..= m - 20`.
    pub recent_volume_sum: f64,
    /// Number of those minutes with any trade.
    pub active_minutes: u32,
}

impl LiquidityStats {
    /// Computes the statistics, reading pre-open minutes as zero volume.
    pub fn extended(totals: &VolumeTotals, volume: &Trajectory, m: i64, lag: i64) -> Self {
        let last = m - LIQUIDITY_WINDOW.1;
        let total_volume_change = totals.at(last) - totals.at(last - lag);
        let mut recent_volume_sum = 0.0;
        let mut active_minutes = 0;
        for u in (m - LIQUIDITY_WINDOW.0)..=last {
            let v = volume.at(u);
            recent_volume_sum += v;
            if v > 0.0 {
                active_minutes += 1;
            }
        }
        Self {
            total_volume_change,
            recent_volume_sum,
            active_minutes,
        }
    }
}

/// Liquidity statistics for delivery `quarter` from all volume trajectories of
/// one day. Requires the whole window and its lag to lie on the grid.
pub fn liquidity_stats(all_volumes: &[Trajectory], quarter: u8, m: i64, lag: i64) -> Result<LiquidityStats> {
    if m - LIQUIDITY_WINDOW.0 < lag {
        return Err(PreprocessError::LagUnderflow {
            u: m - LIQUIDITY_WINDOW.0,
            lag,
        });
    }
    if m - LIQUIDITY_WINDOW.1 >= GRID_LEN as i64 {
        return Err(PreprocessError::OutOfGrid(m - LIQUIDITY_WINDOW.1));
    }
    let own = all_volumes
        .iter()
        .find(|t| t.delivery.quarter == quarter)
        .ok_or_else(|| {
            let day = all_volumes.first().map(|t| t.delivery.day).unwrap_or(NaiveDate::MIN);
            PreprocessError::UnknownDelivery(DeliveryId { day, quarter })
        })?;
    let totals = VolumeTotals::from_trajectories(all_volumes);
    Ok(LiquidityStats::extended(&totals, own, m, lag))
}

/// Trajectories of one delivery.
#[derive(Debug, Clone)]
pub struct DeliveryTrajectories {
    pub price: Trajectory,
    pub volume: Trajectory,
}

#[derive(Debug, Clone)]
struct DayData {
    deliveries: HashMap<u8, DeliveryTrajectories>,
    totals: VolumeTotals,
}

/// Preprocessed trajectories for a contiguous range of days, together with the
/// exogenous panel. Immutable after construction.
#[derive(Debug, Clone)]
pub struct TrajectoryStore {
    first_day: NaiveDate,
    days: Vec<DayData>,
    exogenous: ExogenousPanel,
}

fn index_trades(trades: &[TransactionRecord]) -> HashMap<DeliveryId, Range<usize>> {
    let mut index: HashMap<DeliveryId, Range<usize>> = HashMap::new();
    let mut i = 0;
    while i < trades.len() {
        let id = trades[i].delivery;
        let mut j = i + 1;
        while j < trades.len() && trades[j].delivery == id {
            j += 1;
        }
        index.insert(id, i..j);
        i = j;
    }
    index
}

impl TrajectoryStore {
    /// Builds trajectories for `quarters` on every day of `first_day .. first_day + n_days`.
    ///
    /// `trades` must be sorted by (day, quarter, time) as returned by the loader.
    pub fn build(
        trades: &[TransactionRecord],
        exogenous: ExogenousPanel,
        first_day: NaiveDate,
        n_days: usize,
        quarters: &BTreeSet<u8>,
    ) -> Result<Self> {
        let index = index_trades(trades);
        let mut days = Vec::with_capacity(n_days);
        for k in 0..n_days {
            let day = first_day + Duration::days(k as i64);
            let mut deliveries = HashMap::with_capacity(quarters.len());
            for &q in quarters {
                let id = DeliveryId::new(day, q as i64)?;
                let slice = index.get(&id).map(|r| &trades[r.clone()]).unwrap_or(&[]);
                let auction = exogenous.at_delivery(ExogenousVar::IntradayAuctionPrice, id)?;
                deliveries.insert(
                    q,
                    DeliveryTrajectories {
                        price: build_price_trajectory(id, slice, auction),
                        volume: build_volume_trajectory(id, slice),
                    },
                );
            }
            let day_trades = (1..=QUARTERS_PER_DAY).flat_map(|q| {
                index
                    .get(&DeliveryId { day, quarter: q })
                    .map(|r| &trades[r.clone()])
                    .unwrap_or(&[])
            });
            let totals = VolumeTotals::from_trades(day, day_trades);
            days.push(DayData { deliveries, totals });
        }
        Ok(Self {
            first_day,
            days,
            exogenous,
        })
    }

    pub fn first_day(&self) -> NaiveDate {
        self.first_day
    }

    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    pub fn day(&self, k: usize) -> NaiveDate {
        self.first_day + Duration::days(k as i64)
    }

    pub fn day_index(&self, day: NaiveDate) -> Option<usize> {
        let k = (day - self.first_day).num_days();
        (0..self.days.len() as i64).contains(&k).then_some(k as usize)
    }

    pub fn contains(&self, day: NaiveDate, quarter: u8) -> bool {
        self.day_index(day)
            .is_some_and(|k| self.days[k].deliveries.contains_key(&quarter))
    }

    pub fn delivery(&self, day: NaiveDate, quarter: u8) -> Result<&DeliveryTrajectories> {
        let k = self.day_index(day).ok_or(PreprocessError::UnknownDay(day))?;
        self.days[k]
            .deliveries
            .get(&quarter)
            .ok_or(PreprocessError::UnknownDelivery(DeliveryId { day, quarter }))
    }

    pub fn totals(&self, day: NaiveDate) -> Result<&VolumeTotals> {
        let k = self.day_index(day).ok_or(PreprocessError::UnknownDay(day))?;
        Ok(&self.days[k].totals)
    }

    pub fn exogenous(&self) -> &ExogenousPanel {
        &self.exogenous
    }
}

/// Writes a day's trajectories as `delivery_quarter,kind,u,value` rows.
pub fn write_trajectory_cache<W: Write>(mut w: W, trajectories: &[Trajectory]) -> io::Result<()> {
    writeln!(w, "delivery_quarter,kind,u,value")?;
    for t in trajectories {
        for (u, v) in t.values().iter().enumerate() {
            writeln!(w, "{},{},{},{}", t.delivery.quarter, t.kind.as_str(), u, v)?;
        }
    }
    Ok(())
}

/// Reads a cache written by [`write_trajectory_cache`]. Pre-open values are not
/// part of the cache; price trajectories reuse their first grid value.
pub fn read_trajectory_cache<R: BufRead>(reader: R, day: NaiveDate) -> Result<Vec<Trajectory>> {
    let mut out: Vec<(u8, TrajectoryKind, Vec<f64>)> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            continue;
        }
        let bad = |reason: &str| PreprocessError::MalformedCache {
            line: i + 1,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let q: u8 = fields[0].parse().map_err(|_| bad("quarter"))?;
        let kind = match fields[1] {
            "price" => TrajectoryKind::Price,
            "volume" => TrajectoryKind::Volume,
            _ => return Err(bad("kind")),
        };
        let u: usize = fields[2].parse().map_err(|_| bad("minute"))?;
        let v: f64 = fields[3].parse().map_err(|_| bad("value"))?;
        let needs_new = out
            .last()
            .is_none_or(|(lq, lk, vals)| *lq != q || *lk != kind || vals.len() == GRID_LEN);
        if needs_new {
            out.push((q, kind, Vec::with_capacity(GRID_LEN)));
        }
        let entry = out.last_mut().expect("just pushed");
        if entry.2.len() != u {
            return Err(bad("minutes out of order"));
        }
        entry.2.push(v);
    }
    out.into_iter()
        .map(|(q, kind, values)| {
            if values.len() != GRID_LEN {
                return Err(PreprocessError::MalformedCache {
                    line: 0,
                    reason: format!("delivery {q} {} has {} points", kind.as_str(), values.len()),
                });
            }
            let pre_open = match kind {
                TrajectoryKind::Price => values[0],
                TrajectoryKind::Volume => 0.0,
            };
            Ok(Trajectory::from_values(
                DeliveryId::new(day, q as i64)?,
                kind,
                values,
                pre_open,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::wall_clock;
    use approx::assert_abs_diff_eq;

    fn id(q: i64) -> DeliveryId {
        DeliveryId::new(NaiveDate::from_ymd_opt(2020, 3, 10).unwrap(), q).unwrap()
    }

    fn trade(delivery: DeliveryId, u: i64, sec: i64, price: f64, mw: f64) -> TransactionRecord {
        TransactionRecord {
            delivery,
            trade_time: wall_clock(delivery.day, u) + Duration::seconds(sec),
            price_cents: (price * 100.0).round() as i64,
            volume_dmw: (mw * 10.0).round() as i64,
        }
    }

    #[test]
    fn no_trades_gives_constant_auction_price() {
        let t = build_price_trajectory(id(40), &[], 40.0);
        assert!(t.values().iter().all(|&v| v == 40.0));
        assert_eq!(t.values().len(), GRID_LEN);
        let v = build_volume_trajectory(id(40), &[]);
        assert!(v.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn vwap_within_a_minute() {
        let d = id(40);
        let trades = [trade(d, 600, 5, 50.0, 2.0), trade(d, 600, 40, 60.0, 1.0)];
        let t = build_price_trajectory(d, &trades, 40.0);
        assert_abs_diff_eq!(t.at(600), (50.0 * 2.0 + 60.0) / 3.0, epsilon = 1e-12);
        assert_eq!(t.at(599), 40.0);
        assert_abs_diff_eq!(t.at(700), t.at(600), epsilon = 0.0);
    }

    #[test]
    fn post_closure_fill_is_mean_of_last_three_hours() {
        let d = id(40); // starts at grid minute 1065
        let start = d.start_minute();
        let trades = [
            trade(d, start - 300, 0, 10.0, 1.0), // outside the 3h window
            trade(d, start - 150, 0, 20.0, 1.0),
            trade(d, start - 60, 0, 30.0, 3.0),
            trade(d, start - 60, 30, 34.0, 1.0),
        ];
        let t = build_price_trajectory(d, &trades, 40.0);
        let minute_vwap = (30.0 * 3.0 + 34.0) / 4.0;
        let expected = (20.0 + minute_vwap) / 2.0;
        for u in (start - 5)..GRID_LEN as i64 {
            assert_abs_diff_eq!(t.at(u), expected, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(t.at(start - 6), minute_vwap, epsilon = 1e-12);
    }

    #[test]
    fn fill_falls_back_to_last_price() {
        let d = id(40);
        let start = d.start_minute();
        let trades = [trade(d, start - 400, 0, 12.5, 1.0)];
        let t = build_price_trajectory(d, &trades, 40.0);
        assert_eq!(t.at(start), 12.5);
        assert_eq!(t.at(GRID_LEN as i64 - 1), 12.5);
    }

    #[test]
    fn volume_in_mwh() {
        let d = id(40);
        let v = build_volume_trajectory(d, &[trade(d, 300, 0, 1.0, 0.5)]);
        assert_abs_diff_eq!(v.at(300), 0.125, epsilon = 1e-15);
        let v = build_volume_trajectory(d, &[trade(d, 300, 0, 1.0, 0.5), trade(d, 300, 9, 1.0, 1.0)]);
        assert_abs_diff_eq!(v.at(300), 0.375, epsilon = 1e-15);
        assert_eq!(v.values().iter().filter(|&&x| x > 0.0).count(), 1);
    }

    #[test]
    fn difference_cases() {
        let mut values = vec![0.0; GRID_LEN];
        values[100] = 10.0;
        values[70] = 8.0;
        let t = Trajectory::from_values(id(1), TrajectoryKind::Price, values, 0.0);
        assert_eq!(t.difference(100, 30).unwrap().value, 2.0);
        assert!(matches!(
            t.difference(10, 30),
            Err(PreprocessError::LagUnderflow { u: 10, lag: 30 })
        ));
        let c = Trajectory::from_values(id(1), TrajectoryKind::Price, vec![3.0; GRID_LEN], 3.0);
        assert_eq!(c.difference(1000, 777).unwrap().value, 0.0);
        assert_eq!(c.difference_extended(10, 30), 0.0);
    }

    #[test]
    fn liquidity_stats_cases() {
        let zeros: Vec<Trajectory> = (1..=96).map(|q| build_volume_trajectory(id(q), &[])).collect();
        let s = liquidity_stats(&zeros, 40, 900, 50).unwrap();
        assert_eq!(
            (s.total_volume_change, s.recent_volume_sum, s.active_minutes),
            (0.0, 0.0, 0)
        );

        let d = id(40);
        let mut vols = zeros.clone();
        vols[39] = build_volume_trajectory(d, &[trade(d, 850, 0, 1.0, 1.0)]);
        let s = liquidity_stats(&vols, 40, 900, 50).unwrap();
        assert_eq!(s.recent_volume_sum, 0.25);
        assert_eq!(s.active_minutes, 1);
        // m - 20 = 880 and 880 - 50 = 830 are both untraded.
        assert_eq!(s.total_volume_change, 0.0);
        let s = liquidity_stats(&vols, 40, 900, 30).unwrap();
        assert_eq!(s.total_volume_change, -0.25);

        let constant: Vec<Trajectory> = (1..=96)
            .map(|q| Trajectory::from_values(id(q), TrajectoryKind::Volume, vec![0.5; GRID_LEN], 0.0))
            .collect();
        let s = liquidity_stats(&constant, 12, 900, 100).unwrap();
        assert_eq!(s.total_volume_change, 0.0);
        assert!(matches!(
            liquidity_stats(&constant, 12, 100, 30),
            Err(PreprocessError::LagUnderflow { .. })
        ));
    }

    #[test]
    fn cache_round_trip() {
        let d = id(40);
        let trades = [trade(d, 600, 5, 50.0, 2.0), trade(d, 640, 40, 60.0, 1.0)];
        let trajs = vec![
            build_price_trajectory(d, &trades, 50.0),
            build_volume_trajectory(d, &trades),
        ];
        let mut buf = Vec::new();
        write_trajectory_cache(&mut buf, &trajs).unwrap();
        let back = read_trajectory_cache(buf.as_slice(), d.day).unwrap();
        assert_eq!(back, trajs);
    }
}
