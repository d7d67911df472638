//! Forecast rows and their CSV form.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use thiserror::Error;

use crate::features::FeatureSet;
use crate::market_data::DATE_FORMAT;

use super::config::Model;

pub const FORECASTS_HEADER: &str =
    "model,variant,delivery_date,delivery_quarter,m,s,lead_min,horizon_min,forecast,actual,fallback,elapsed_ms";

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unexpected header `{0}`")]
    Header(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Which forecast of a model a row holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Trained on one feature set (cSVR, LASSO, RF).
    Set(FeatureSet),
    /// Plain Laplace kernel on set 1: 4 uses the L2 norm, 5 the L1 norm.
    Kernel(u8),
    Avg,
    WAvg,
    /// The naive forecast has no variant.
    None,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Set(s) => write!(f, "{}", s.id()),
            Variant::Kernel(k) => write!(f, "{k}"),
            Variant::Avg => f.write_str("avg"),
            Variant::WAvg => f.write_str("w.avg"),
            Variant::None => f.write_str("-"),
        }
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "1" | "2" | "3" => Variant::Set(FeatureSet::from_id(s.parse().expect("digit")).expect("valid id")),
            "4" => Variant::Kernel(4),
            "5" => Variant::Kernel(5),
            "avg" => Variant::Avg,
            "w.avg" => Variant::WAvg,
            "-" => Variant::None,
            _ => return Err(format!("unknown variant `{s}`")),
        })
    }
}

/// Why a row carries the naive forecast instead of a model forecast.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Fallback {
    None,
    /// Target constant over the training window.
    DegenerateTarget,
    /// No feature column survived filtering.
    DegenerateFeatures,
    /// Kernel widths or the kernel matrix could not be formed.
    DegenerateKernel,
    /// The SVR solver hit its iteration limit.
    MaxIter,
    /// Weighted average inside its calibration window.
    Calibration,
    /// Any other failure, with a short code.
    Error(String),
}

impl Fallback {
    pub fn is_none(&self) -> bool {
        *self == Fallback::None
    }
}

impl fmt::Display for Fallback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fallback::None => Ok(()),
            Fallback::DegenerateTarget => f.write_str("degenerate_target"),
            Fallback::DegenerateFeatures => f.write_str("degenerate_features"),
            Fallback::DegenerateKernel => f.write_str("degenerate_kernel"),
            Fallback::MaxIter => f.write_str("max_iter"),
            Fallback::Calibration => f.write_str("calibration"),
            Fallback::Error(code) => write!(f, "error:{code}"),
        }
    }
}

impl FromStr for Fallback {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "" => Fallback::None,
            "degenerate_target" => Fallback::DegenerateTarget,
            "degenerate_features" => Fallback::DegenerateFeatures,
            "degenerate_kernel" => Fallback::DegenerateKernel,
            "max_iter" => Fallback::MaxIter,
            "calibration" => Fallback::Calibration,
            other => match other.strip_prefix("error:") {
                Some(code) => Fallback::Error(code.to_string()),
                None => return Err(format!("unknown fallback `{s}`")),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRow {
    pub model: Model,
    pub variant: Variant,
    pub delivery_date: NaiveDate,
    pub delivery_quarter: u8,
    pub m: i64,
    pub s: i64,
    pub lead_min: i64,
    pub horizon_min: i64,
    pub forecast: f64,
    pub actual: f64,
    pub fallback: Fallback,
    pub elapsed_ms: u64,
}

impl ForecastRow {
    /// Canonical output order: task first, then model and variant.
    pub fn sort_key(&self) -> (NaiveDate, u8, i64, i64, Model, Variant) {
        (
            self.delivery_date,
            self.delivery_quarter,
            self.lead_min,
            self.horizon_min,
            self.model,
            self.variant,
        )
    }
}

/// Fixed six-decimal rendering; non-finite and huge values fall back to exponent form.
pub fn format_value(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v.is_finite() && v.abs() < 1e12 {
        let s = format!("{v:.6}");
        if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
            "0.000000".to_string()
        } else {
            s
        }
    } else {
        format!("{v:e}")
    }
}

pub fn write_forecasts<W: Write>(mut w: W, rows: &[ForecastRow]) -> io::Result<()> {
    writeln!(w, "{FORECASTS_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.model,
            r.variant,
            r.delivery_date.format(DATE_FORMAT),
            r.delivery_quarter,
            r.m,
            r.s,
            r.lead_min,
            r.horizon_min,
            format_value(r.forecast),
            format_value(r.actual),
            r.fallback,
            r.elapsed_ms
        )?;
    }
    Ok(())
}

pub fn save_forecasts(path: &Path, rows: &[ForecastRow]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_forecasts(&mut w, rows)?;
    w.flush()
}

fn field<T: FromStr>(parts: &[&str], i: usize, name: &str, line: usize) -> Result<T, RecordError> {
    parts[i].parse().map_err(|_| RecordError::Parse {
        line,
        message: format!("bad {name} `{}`", parts[i]),
    })
}

/// Parses a forecasts file; an empty `actual` is read as NaN.
pub fn read_forecasts<R: BufRead>(reader: R) -> Result<Vec<ForecastRow>, RecordError> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if i == 0 {
            if line.trim_end() != FORECASTS_HEADER {
                return Err(RecordError::Header(line));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 12 {
            return Err(RecordError::Parse {
                line: line_no,
                message: format!("expected 12 fields, found {}", parts.len()),
            });
        }
        let date = NaiveDate::parse_from_str(parts[2], DATE_FORMAT).map_err(|_| RecordError::Parse {
            line: line_no,
            message: format!("bad date `{}`", parts[2]),
        })?;
        let parse_err = |message: String| RecordError::Parse { line: line_no, message };
        rows.push(ForecastRow {
            model: parts[0].parse().map_err(parse_err)?,
            variant: parts[1].parse().map_err(parse_err)?,
            delivery_date: date,
            delivery_quarter: field(&parts, 3, "quarter", line_no)?,
            m: field(&parts, 4, "m", line_no)?,
            s: field(&parts, 5, "s", line_no)?,
            lead_min: field(&parts, 6, "lead", line_no)?,
            horizon_min: field(&parts, 7, "horizon", line_no)?,
            forecast: field(&parts, 8, "forecast", line_no)?,
            actual: if parts[9].is_empty() {
                f64::NAN
            } else {
                field(&parts, 9, "actual", line_no)?
            },
            fallback: parts[10].parse().map_err(parse_err)?,
            elapsed_ms: field(&parts, 11, "elapsed_ms", line_no)?,
        });
    }
    Ok(rows)
}

pub fn load_forecasts(path: &Path) -> Result<Vec<ForecastRow>, RecordError> {
    read_forecasts(BufReader::new(File::open(path)?))
}
