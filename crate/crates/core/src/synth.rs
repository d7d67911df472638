//! Seeded synthetic intraday market.
//!
//! A latent fundamental `G` (an AR(1) over wall-clock quarter hours) moves the
//! actual renewable generation and load away from their day-ahead forecasts.
//! Each delivery's price starts at its intraday auction price and follows a
//! walk whose volatility grows towards delivery; with strength `rho` it also
//! reverts towards `auction + G(now)`. Because the forecast errors of
//! renewables and load are published with a delay, `rho > 0` makes future
//! price changes partly predictable, and `rho = 0` makes the price a martingale.
//!
//! All randomness comes from streams keyed by the seed and the calendar day
//! (plus the delivery for trades), so any range of days regenerates identically.

use std::f64::consts::PI;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Weekday};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::market_data::{
    delivery_start_minute, save_exogenous, save_transactions, wall_clock, DeliveryId, ExogenousPanel, ExogenousSeries,
    ExogenousVar, MarketDataError, TransactionRecord, GATE_CLOSURE_MINUTES, GRID_LEN, QUARTERS_PER_DAY,
};
use crate::rng::keyed_rng;

const TAG_FUNDAMENTAL: u64 = 1;
const TAG_PRICES: u64 = 2;
const TAG_SYSTEM: u64 = 3;
const TAG_FLOW: u64 = 4;
const TAG_TRADES: u64 = 5;

/// Quarter hours of history used to evaluate the fundamental's AR(1) sum.
const G_MEMORY: i64 = 400;
const FLOW_MEMORY: i64 = 100;

pub const TRANSACTIONS_FILE: &str = "transactions.csv";
pub const EXOGENOUS_DIR: &str = "exogenous";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    /// First delivery day.
    pub start: NaiveDate,
    pub n_days: usize,
    /// Strength of the predictable drift, 0 gives a martingale price.
    pub rho: f64,
    /// Reversion speed per minute at `rho = 1`.
    pub kappa: f64,
    /// Multiplies every trade intensity; 0 disables trading.
    pub intensity_scale: f64,
    /// Stationary standard deviation of the fundamental, EUR/MWh.
    pub fundamental_sd: f64,
    /// AR(1) coefficient of the fundamental per quarter hour.
    pub fundamental_phi: f64,
    /// Standard deviation of trade prices around the latent price.
    pub trade_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            start: NaiveDate::from_ymd_opt(2021, 1, 4).expect("valid date"),
            n_days: 90,
            rho: 0.3,
            kappa: 0.01,
            intensity_scale: 1.0,
            fundamental_sd: 6.0,
            fundamental_phi: 0.97,
            trade_noise: 0.2,
        }
    }
}

/// Base price curve: off-peak level plus peak block with morning and evening humps.
pub fn base_price(quarter: u8) -> f64 {
    let h = (quarter as f64 - 1.0) / 4.0;
    let peak = if (8.0..20.0).contains(&h) { 10.0 } else { 0.0 };
    35.0 + peak + 8.0 * (-((h - 8.5) / 1.5).powi(2)).exp() + 10.0 * (-((h - 19.0) / 1.5).powi(2)).exp()
}

pub fn is_peak(quarter: u8) -> bool {
    (33..=80).contains(&quarter)
}

/// Per-minute price volatility at a given lead time.
pub fn volatility(lead: i64) -> f64 {
    0.08 + 0.6 * (-(lead as f64) / 50.0).exp()
}

/// Expected trades per minute at a given lead time, before the delivery's liquidity factor.
pub fn intensity(lead: i64) -> f64 {
    let l = lead as f64;
    0.015 + 0.6 * (-((l - 45.0) / 35.0).powi(2)).exp() + 0.08 * (-l / 300.0).exp()
}

fn liquidity(quarter: u8) -> f64 {
    if is_peak(quarter) {
        1.5
    } else {
        1.0
    }
}

fn day_number(day: NaiveDate) -> i64 {
    day.num_days_from_ce() as i64
}

fn quarter_index(t: NaiveDateTime) -> i64 {
    day_number(t.date()) * 96 + (t.hour() * 4 + t.minute() / 15) as i64
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Panel and fundamental path covering the generated days.
#[derive(Debug, Clone)]
pub struct Fundamentals {
    /// Quarter index of `g[0]`.
    origin: i64,
    g: Vec<f64>,
    pub panel: ExogenousPanel,
}

impl Fundamentals {
    pub fn g_at(&self, t: NaiveDateTime) -> f64 {
        self.g[(quarter_index(t) - self.origin) as usize]
    }
}

/// Daily keyed innovations for quarter-hour indices `[from, to)`.
fn daily_innovations(seed: u64, tag: u64, per_day: i64, from: i64, to: i64) -> Vec<f64> {
    let first_day = from.div_euclid(per_day);
    let last_day = (to - 1).div_euclid(per_day);
    let mut out = Vec::with_capacity((to - from) as usize);
    for day in first_day..=last_day {
        let mut rng = keyed_rng(seed, &[tag, day as u64]);
        for k in 0..per_day {
            let z = normal(&mut rng);
            let idx = day * per_day + k;
            if idx >= from && idx < to {
                out.push(z);
            }
        }
    }
    out
}

/// Truncated moving-average form of an AR(1) driven by `innov`, evaluated for the last `len` entries.
fn ar1_tail(innov: &[f64], phi: f64, memory: usize, len: usize) -> Vec<f64> {
    let weights: Vec<f64> = (0..=memory).map(|j| phi.powi(j as i32)).collect();
    (innov.len() - len..innov.len())
        .map(|k| (0..=memory).map(|j| weights[j] * innov[k - j]).sum())
        .collect()
}

pub fn build_fundamentals(cfg: &SynthConfig) -> Fundamentals {
    let panel_start = (cfg.start - Duration::days(1)).and_hms_opt(0, 0, 0).expect("midnight");
    let n_quarters = (cfg.n_days as i64 + 1) * 96;
    let origin = quarter_index(panel_start);
    let innov_sd = cfg.fundamental_sd * (1.0 - cfg.fundamental_phi.powi(2)).sqrt();
    let innov: Vec<f64> = daily_innovations(cfg.seed, TAG_FUNDAMENTAL, 96, origin - G_MEMORY, origin + n_quarters)
        .into_iter()
        .map(|z| z * innov_sd)
        .collect();
    let g = ar1_tail(&innov, cfg.fundamental_phi, G_MEMORY as usize, n_quarters as usize);

    let mut x = vec![Vec::with_capacity(n_quarters as usize); 7];
    for day_offset in 0..=cfg.n_days as i64 {
        let day = panel_start.date() + Duration::days(day_offset);
        let mut prices = keyed_rng(cfg.seed, &[TAG_PRICES, day_number(day) as u64]);
        let mut system = keyed_rng(cfg.seed, &[TAG_SYSTEM, day_number(day) as u64]);
        let weekend = matches!(day.weekday(), Weekday::Sat | Weekday::Sun);
        let day_shock = 4.0 * normal(&mut prices) - if weekend { 5.0 } else { 0.0 };
        let wind = 3000.0 * normal(&mut system);
        for q in 1..=QUARTERS_PER_DAY {
            let k = (day_offset * 96 + q as i64 - 1) as usize;
            let h = (q as f64 - 1.0) / 4.0;
            let anchor = base_price(q) + day_shock + 1.5 * normal(&mut prices);
            let auction = anchor + 3.0 * normal(&mut prices);
            let res_forecast = 15000.0 + wind + 12000.0 * (PI * (h - 6.0) / 12.0).sin().max(0.0);
            let res_actual = res_forecast - 400.0 * g[k] + 300.0 * normal(&mut system);
            let load_forecast =
                50000.0 + 12000.0 * (-((h - 13.0) / 5.0).powi(2)).exp() - if weekend { 6000.0 } else { 0.0 };
            let load_actual = load_forecast + 300.0 * g[k] + 500.0 * normal(&mut system);
            x[1].push(round2(res_actual));
            x[2].push(round2(res_forecast));
            x[3].push(round2(load_actual));
            x[4].push(round2(load_forecast));
            x[5].push(round2(anchor));
            x[6].push(round2(auction));
        }
    }
    let hours = n_quarters / 4;
    let h_origin = origin / 4;
    let flow_sd = 800.0 * (1.0f64 - 0.9 * 0.9).sqrt();
    let flow_innov: Vec<f64> = daily_innovations(cfg.seed, TAG_FLOW, 24, h_origin - FLOW_MEMORY, h_origin + hours)
        .into_iter()
        .map(|z| z * flow_sd)
        .collect();
    x[0] = ar1_tail(&flow_innov, 0.9, FLOW_MEMORY as usize, hours as usize)
        .into_iter()
        .map(round2)
        .collect();
    let series = ExogenousVar::ALL
        .iter()
        .zip(x)
        .map(|(var, values)| ExogenousSeries {
            start: panel_start,
            step_minutes: var.step_minutes(),
            values,
        })
        .collect();
    Fundamentals {
        origin,
        g,
        panel: ExogenousPanel::new(series).expect("generated frequencies match"),
    }
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("positive rate").sample(rng) as u64
}

/// Trades of one delivery, in time order.
pub fn generate_delivery(cfg: &SynthConfig, fund: &Fundamentals, delivery: DeliveryId) -> Vec<TransactionRecord> {
    let mut rng = keyed_rng(
        cfg.seed,
        &[TAG_TRADES, day_number(delivery.day) as u64, delivery.quarter as u64],
    );
    let start = delivery_start_minute(delivery.quarter as i64).expect("valid quarter");
    let auction = fund
        .panel
        .at_delivery(ExogenousVar::IntradayAuctionPrice, delivery)
        .expect("panel covers generated days");
    let last_minute = (start - GATE_CLOSURE_MINUTES - 1).min(GRID_LEN as i64 - 1);
    let liq = liquidity(delivery.quarter) * cfg.intensity_scale;
    let speed = cfg.rho * cfg.kappa;
    let mut price = auction;
    let mut trades = Vec::new();
    let mut seconds = Vec::new();
    for u in 0..=last_minute {
        let lead = start - u;
        let now = wall_clock(delivery.day, u);
        price += speed * (auction + fund.g_at(now) - price) + volatility(lead) * normal(&mut rng);
        let n = poisson(&mut rng, liq * intensity(lead));
        if n == 0 {
            continue;
        }
        seconds.clear();
        seconds.extend((0..n).map(|_| rng.random_range(0..60i64)));
        seconds.sort_unstable();
        for &sec in &seconds {
            let p = price + cfg.trade_noise * normal(&mut rng);
            trades.push(TransactionRecord {
                delivery,
                trade_time: now + Duration::seconds(sec),
                price_cents: (p * 100.0).round() as i64,
                volume_dmw: 1 + poisson(&mut rng, 4.0) as i64,
            });
        }
    }
    trades
}

pub fn generate_day(cfg: &SynthConfig, fund: &Fundamentals, day: NaiveDate) -> Vec<TransactionRecord> {
    (1..=QUARTERS_PER_DAY)
        .flat_map(|q| generate_delivery(cfg, fund, DeliveryId { day, quarter: q }))
        .collect()
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub transactions: Vec<TransactionRecord>,
    pub exogenous: ExogenousPanel,
}

pub fn generate_dataset(cfg: &SynthConfig) -> SynthDataset {
    let fund = build_fundamentals(cfg);
    let days: Vec<Vec<TransactionRecord>> = (0..cfg.n_days)
        .into_par_iter()
        .map(|k| generate_day(cfg, &fund, cfg.start + Duration::days(k as i64)))
        .collect();
    SynthDataset {
        transactions: days.into_iter().flatten().collect(),
        exogenous: fund.panel,
    }
}

/// Writes `transactions.csv` and `exogenous/x1.csv .. x7.csv` under `dir`.
pub fn write_dataset(dataset: &SynthDataset, dir: &Path) -> Result<(), MarketDataError> {
    std::fs::create_dir_all(dir.join(EXOGENOUS_DIR)).map_err(MarketDataError::Io)?;
    save_transactions(&dir.join(TRANSACTIONS_FILE), &dataset.transactions)?;
    save_exogenous(&dir.join(EXOGENOUS_DIR), &dataset.exogenous)
}

pub fn load_dataset(dir: &Path) -> Result<SynthDataset, MarketDataError> {
    let transactions = crate::market_data::load_transactions(&dir.join(TRANSACTIONS_FILE))?;
    let exogenous = crate::market_data::load_exogenous(&dir.join(EXOGENOUS_DIR))?;
    Ok(SynthDataset {
        transactions,
        exogenous,
    })
}

/// First delivery day and number of days covered by a generated panel.
pub fn panel_days(panel: &ExogenousPanel) -> Option<(NaiveDate, usize)> {
    let series = panel.series(ExogenousVar::IntradayAuctionPrice);
    let first = series.start.date() + Duration::days(1);
    let last = series.end().date();
    (last >= first).then(|| (first, (last - first).num_days() as usize + 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(rho: f64) -> SynthConfig {
        SynthConfig {
            n_days: 3,
            rho,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate_dataset(&small(0.3));
        let b = generate_dataset(&small(0.3));
        assert_eq!(a.transactions, b.transactions);
        assert_eq!(a.exogenous, b.exogenous);
        let c = generate_dataset(&SynthConfig { seed: 2, ..small(0.3) });
        assert_ne!(a.transactions, c.transactions);
    }

    #[test]
    fn days_regenerate_independently() {
        let full = SynthConfig {
            n_days: 4,
            ..small(0.3)
        };
        let tail = SynthConfig {
            start: full.start + Duration::days(2),
            n_days: 2,
            ..full.clone()
        };
        let a = generate_dataset(&full);
        let b = generate_dataset(&tail);
        let day = tail.start + Duration::days(1);
        let pick = |d: &SynthDataset| -> Vec<TransactionRecord> {
            d.transactions
                .iter()
                .filter(|t| t.delivery.day == day)
                .cloned()
                .collect()
        };
        assert_eq!(pick(&a), pick(&b));
    }

    #[test]
    fn zero_intensity_means_no_trades() {
        let d = generate_dataset(&SynthConfig {
            intensity_scale: 0.0,
            ..small(0.3)
        });
        assert!(d.transactions.is_empty());
    }

    #[test]
    fn trades_respect_gate_closure_and_ticks() {
        let d = generate_dataset(&small(0.3));
        for t in &d.transactions {
            assert!(t.trade_time <= t.delivery.gate_closure());
            assert!(t.volume_dmw > 0);
        }
    }

    #[test]
    fn peak_prices_exceed_off_peak() {
        let d = generate_dataset(&SynthConfig {
            n_days: 10,
            ..small(0.3)
        });
        let (mut peak, mut off) = ((0.0, 0usize), (0.0, 0usize));
        for t in &d.transactions {
            let acc = if is_peak(t.delivery.quarter) {
                &mut peak
            } else {
                &mut off
            };
            acc.0 += t.price();
            acc.1 += 1;
        }
        assert!(peak.0 / peak.1 as f64 > off.0 / off.1 as f64);
    }

    #[test]
    fn trade_count_mode_between_30_and_60_minutes() {
        let d = generate_dataset(&SynthConfig {
            n_days: 5,
            ..small(0.3)
        });
        let mut counts = vec![0usize; 400];
        for t in &d.transactions {
            let start = t.delivery.start_time();
            let lead = ((start - t.trade_time).num_seconds() + 59) / 60;
            if (lead as usize) < counts.len() {
                counts[lead as usize] += 1;
            }
        }
        // Smooth over 10-minute bins to read the mode of the profile.
        let bins: Vec<usize> = counts.chunks(10).map(|c| c.iter().sum()).collect();
        let mode = (0..bins.len()).max_by_key(|&i| bins[i]).unwrap();
        assert!((3..6).contains(&mode), "mode bin {mode}: {bins:?}");
    }

    #[test]
    fn volatility_schedule() {
        assert!(volatility(5) > volatility(60));
        assert!(volatility(60) > volatility(600));
        assert!(intensity(45) > intensity(5) && intensity(45) > intensity(200));
    }
}
