//! Flat `key = value` study configuration.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use thiserror::Error;

use crate::evaluate::CALIBRATION_WINDOW;
use crate::features::{FeatureSet, HISTORY_DAYS, RESAMPLE_STEP};
use crate::market_data::{DATE_FORMAT, QUARTERS_PER_DAY};
use crate::scaling::LASSO_CV_DAYS;

/// Smallest training window that leaves room for the LASSO validation days.
pub const MIN_TRAINING_DAYS: usize = LASSO_CV_DAYS + 1;

pub const DEFAULT_LEADS: [i64; 6] = [30, 60, 90, 120, 150, 180];
pub const DEFAULT_HORIZONS: [i64; 10] = [30, 60, 90, 120, 150, 180, 210, 300, 390, 480];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("`{key}`: cannot parse `{value}`")]
    BadValue { key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Model {
    Naive,
    Csvr,
    Svr,
    Lasso,
    Rf,
}

impl Model {
    pub const ALL: [Model; 5] = [Model::Naive, Model::Csvr, Model::Svr, Model::Lasso, Model::Rf];

    pub fn as_str(self) -> &'static str {
        match self {
            Model::Naive => "naive",
            Model::Csvr => "cSVR",
            Model::Svr => "SVR",
            Model::Lasso => "LASSO",
            Model::Rf => "RF",
        }
    }

    /// Models whose set forecasts are combined.
    pub fn is_averaged(self) -> bool {
        matches!(self, Model::Csvr | Model::Lasso | Model::Rf)
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Model {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Model::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown model `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Averaging {
    Avg,
    WAvg,
}

impl Averaging {
    pub fn as_str(self) -> &'static str {
        match self {
            Averaging::Avg => "avg",
            Averaging::WAvg => "w.avg",
        }
    }
}

impl FromStr for Averaging {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "avg" => Ok(Averaging::Avg),
            "w.avg" | "wavg" => Ok(Averaging::WAvg),
            _ => Err(format!("unknown averaging `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    /// First day of data used by the study, including the lag history of set 1.
    pub train_start: NaiveDate,
    pub first_forecast_day: NaiveDate,
    pub last_forecast_day: NaiveDate,
    pub deliveries: BTreeSet<u8>,
    pub lead_times: Vec<i64>,
    pub horizons: Vec<i64>,
    pub models: BTreeSet<Model>,
    pub sets: BTreeSet<FeatureSet>,
    pub averaging: BTreeSet<Averaging>,
    pub calibration_window: usize,
    pub seed: u64,
    pub workers: usize,
    /// When false, `elapsed_ms` is written as 0 so forecast files stay byte-identical.
    pub record_timing: bool,
}

const KEYS: [&str; 13] = [
    "train_start",
    "first_forecast_day",
    "last_forecast_day",
    "deliveries",
    "lead_times",
    "horizons",
    "models",
    "sets",
    "averaging",
    "calibration_window",
    "seed",
    "workers",
    "record_timing",
];

fn bad(key: &str, value: &str) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| bad(key, s)))
        .collect()
}

fn parse_date(key: &str, value: &str) -> Result<NaiveDate, ConfigError> {
    NaiveDate::parse_from_str(value, DATE_FORMAT).map_err(|_| bad(key, value))
}

impl StudyConfig {
    /// A config with the full default grid over the given dates.
    pub fn new(train_start: NaiveDate, first_forecast_day: NaiveDate, last_forecast_day: NaiveDate) -> Self {
        Self {
            train_start,
            first_forecast_day,
            last_forecast_day,
            deliveries: (1..=QUARTERS_PER_DAY).collect(),
            lead_times: DEFAULT_LEADS.to_vec(),
            horizons: DEFAULT_HORIZONS.to_vec(),
            models: Model::ALL.into_iter().collect(),
            sets: FeatureSet::ALL.into_iter().collect(),
            averaging: [Averaging::Avg, Averaging::WAvg].into_iter().collect(),
            calibration_window: CALIBRATION_WINDOW,
            seed: 0,
            workers: 1,
            record_timing: false,
        }
    }

    /// First day that can be a training row: set 1 needs a week of lags before it.
    pub fn window_start(&self) -> NaiveDate {
        self.train_start + Duration::days(HISTORY_DAYS as i64)
    }

    /// Forecast days in order.
    pub fn forecast_days(&self) -> Vec<NaiveDate> {
        self.first_forecast_day
            .iter_days()
            .take_while(|d| *d <= self.last_forecast_day)
            .collect()
    }

    /// Days of data needed, from `train_start` through the last forecast day.
    pub fn data_days(&self) -> usize {
        ((self.last_forecast_day - self.train_start).num_days() + 1).max(0) as usize
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let window = (self.first_forecast_day - self.window_start()).num_days();
        if window < MIN_TRAINING_DAYS as i64 {
            return invalid(format!(
                "first forecast day must leave at least {MIN_TRAINING_DAYS} training days after the {HISTORY_DAYS}-day lag history"
            ));
        }
        if self.last_forecast_day < self.first_forecast_day {
            return invalid("last forecast day precedes the first".into());
        }
        if let Some(q) = self.deliveries.iter().find(|q| !(1..=QUARTERS_PER_DAY).contains(*q)) {
            return invalid(format!("delivery {q} outside 1..={QUARTERS_PER_DAY}"));
        }
        for (name, values) in [("lead_times", &self.lead_times), ("horizons", &self.horizons)] {
            if let Some(v) = values.iter().find(|v| **v <= 0 || **v % RESAMPLE_STEP != 0) {
                return invalid(format!("{name}: {v} is not a positive multiple of {RESAMPLE_STEP}"));
            }
        }
        if self.workers == 0 {
            return invalid("workers must be at least 1".into());
        }
        if self.calibration_window == 0 {
            return invalid("calibration_window must be at least 1".into());
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        let mut dates: [Option<NaiveDate>; 3] = [None; 3];
        let placeholder = NaiveDate::MIN;
        let mut cfg = Self::new(placeholder, placeholder, placeholder);
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: line_no })?;
            let (key, value) = (key.trim(), value.trim());
            let Some(&key) = KEYS.iter().find(|k| **k == key) else {
                return Err(ConfigError::UnknownKey {
                    line: line_no,
                    key: key.to_string(),
                });
            };
            if !seen.insert(key) {
                return Err(ConfigError::DuplicateKey {
                    line: line_no,
                    key: key.to_string(),
                });
            }
            match key {
                "train_start" => dates[0] = Some(parse_date(key, value)?),
                "first_forecast_day" => dates[1] = Some(parse_date(key, value)?),
                "last_forecast_day" => dates[2] = Some(parse_date(key, value)?),
                "deliveries" => cfg.deliveries = parse_list(key, value)?.into_iter().collect(),
                "lead_times" => cfg.lead_times = dedup_sorted(parse_list(key, value)?),
                "horizons" => cfg.horizons = dedup_sorted(parse_list(key, value)?),
                "models" => cfg.models = parse_list(key, value)?.into_iter().collect(),
                "sets" => {
                    cfg.sets = parse_list::<u8>(key, value)?
                        .into_iter()
                        .map(|id| FeatureSet::from_id(id).ok_or_else(|| bad(key, &id.to_string())))
                        .collect::<Result<_, _>>()?
                }
                "averaging" => cfg.averaging = parse_list(key, value)?.into_iter().collect(),
                "calibration_window" => cfg.calibration_window = value.parse().map_err(|_| bad(key, value))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad(key, value))?,
                "workers" => cfg.workers = value.parse().map_err(|_| bad(key, value))?,
                "record_timing" => cfg.record_timing = value.parse().map_err(|_| bad(key, value))?,
                _ => unreachable!("key list is exhaustive"),
            }
        }
        cfg.train_start = dates[0].ok_or(ConfigError::MissingKey("train_start"))?;
        cfg.first_forecast_day = dates[1].ok_or(ConfigError::MissingKey("first_forecast_day"))?;
        cfg.last_forecast_day = dates[2].ok_or(ConfigError::MissingKey("last_forecast_day"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Renders the config in the format accepted by [`StudyConfig::parse`].
    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        let lines = [
            ("train_start", self.train_start.format(DATE_FORMAT).to_string()),
            (
                "first_forecast_day",
                self.first_forecast_day.format(DATE_FORMAT).to_string(),
            ),
            (
                "last_forecast_day",
                self.last_forecast_day.format(DATE_FORMAT).to_string(),
            ),
            ("deliveries", join(self.deliveries.iter().map(u8::to_string).collect())),
            ("lead_times", join(self.lead_times.iter().map(i64::to_string).collect())),
            ("horizons", join(self.horizons.iter().map(i64::to_string).collect())),
            (
                "models",
                join(self.models.iter().map(|m| m.as_str().to_string()).collect()),
            ),
            ("sets", join(self.sets.iter().map(|s| s.id().to_string()).collect())),
            (
                "averaging",
                join(self.averaging.iter().map(|a| a.as_str().to_string()).collect()),
            ),
            ("calibration_window", self.calibration_window.to_string()),
            ("seed", self.seed.to_string()),
            ("workers", self.workers.to_string()),
            ("record_timing", self.record_timing.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn dedup_sorted(mut v: Vec<i64>) -> Vec<i64> {
    v.sort_unstable();
    v.dedup();
    v
}
