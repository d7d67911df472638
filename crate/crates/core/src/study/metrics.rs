//! Error measures per cell and their aggregates over deliveries, horizons and the whole study.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use thiserror::Error;

use crate::evaluate::{dm_test, mae, rmae, DmResult};

use super::config::Model;
use super::records::{format_value, Fallback, ForecastRow, RecordError, Variant};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const HORIZON_REJECTIONS_FILE: &str = "horizon_rejections.csv";
pub const OVERALL_FILE: &str = "overall.csv";
pub const METRICS_HEADER: &str =
    "model,variant,delivery_quarter,lead_min,horizon_min,mae,rmae,dm_stat,dm_p,reject_5pct";

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("no actual price for {model} {variant} on {date}, delivery {quarter}")]
    MissingActuals {
        model: Model,
        variant: Variant,
        date: NaiveDate,
        quarter: u8,
    },
    #[error("no naive forecast for {date}, delivery {quarter}, lead {lead}, horizon {horizon}")]
    MissingNaive {
        date: NaiveDate,
        quarter: u8,
        lead: i64,
        horizon: i64,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Scores of one model variant on one (delivery, lead, horizon) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub model: Model,
    pub variant: Variant,
    pub delivery_quarter: u8,
    pub lead_min: i64,
    pub horizon_min: i64,
    pub mae: f64,
    /// `None` when the naive MAE is zero.
    pub rmae: Option<f64>,
    /// `None` when the series is too short for the DM test.
    pub dm: Option<DmResult>,
}

/// Averages over deliveries for one lead and horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub model: Model,
    pub variant: Variant,
    pub lead_min: i64,
    pub horizon_min: i64,
    pub deliveries: usize,
    pub mean_rmae: Option<f64>,
    pub reject_share: Option<f64>,
}

/// Share of horizons at which the DM test rejects, per delivery and lead.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonRejectionRow {
    pub model: Model,
    pub variant: Variant,
    pub delivery_quarter: u8,
    pub lead_min: i64,
    pub horizons: usize,
    pub reject_share: Option<f64>,
}

/// Errors pooled over every scored task.
#[derive(Debug, Clone, PartialEq)]
pub struct OverallRow {
    pub model: Model,
    pub variant: Variant,
    pub n: usize,
    pub mae: f64,
    pub naive_mae: f64,
    pub rmae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: Vec<MetricRow>,
    pub summary: Vec<SummaryRow>,
    pub horizon_rejections: Vec<HorizonRejectionRow>,
    pub overall: Vec<OverallRow>,
}

type TaskKey = (NaiveDate, u8, i64, i64);
type CellKey = (Model, Variant, u8, i64, i64);

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Scores every model variant against the naive forecast on the same tasks.
/// Weighted-average rows inside their calibration window are not scored.
pub fn evaluate_forecasts(rows: &[ForecastRow]) -> Result<Evaluation, EvaluationError> {
    let mut naive: HashMap<TaskKey, f64> = HashMap::new();
    for r in rows.iter().filter(|r| r.model == Model::Naive) {
        naive.insert(
            (r.delivery_date, r.delivery_quarter, r.lead_min, r.horizon_min),
            r.forecast,
        );
    }
    // (date, forecast, naive, actual) per cell
    let mut cells: BTreeMap<CellKey, Vec<(NaiveDate, f64, f64, f64)>> = BTreeMap::new();
    for r in rows {
        if r.fallback == Fallback::Calibration {
            continue;
        }
        if !r.actual.is_finite() {
            return Err(EvaluationError::MissingActuals {
                model: r.model,
                variant: r.variant,
                date: r.delivery_date,
                quarter: r.delivery_quarter,
            });
        }
        let key = (r.delivery_date, r.delivery_quarter, r.lead_min, r.horizon_min);
        let &nv = naive.get(&key).ok_or(EvaluationError::MissingNaive {
            date: key.0,
            quarter: key.1,
            lead: key.2,
            horizon: key.3,
        })?;
        cells
            .entry((r.model, r.variant, r.delivery_quarter, r.lead_min, r.horizon_min))
            .or_default()
            .push((r.delivery_date, r.forecast, nv, r.actual));
    }

    let mut metrics = Vec::with_capacity(cells.len());
    let mut pooled: BTreeMap<(Model, Variant), (usize, f64, f64)> = BTreeMap::new();
    for ((model, variant, quarter, lead, horizon), mut series) in cells {
        series.sort_by_key(|s| s.0);
        let forecasts: Vec<f64> = series.iter().map(|s| s.1).collect();
        let naive_f: Vec<f64> = series.iter().map(|s| s.2).collect();
        let actuals: Vec<f64> = series.iter().map(|s| s.3).collect();
        let model_mae = mae(&forecasts, &actuals);
        let naive_mae = mae(&naive_f, &actuals);
        let loss_model: Vec<f64> = forecasts.iter().zip(&actuals).map(|(f, a)| (f - a).abs()).collect();
        let loss_naive: Vec<f64> = naive_f.iter().zip(&actuals).map(|(f, a)| (f - a).abs()).collect();
        let p = pooled.entry((model, variant)).or_default();
        p.0 += series.len();
        p.1 += loss_model.iter().sum::<f64>();
        p.2 += loss_naive.iter().sum::<f64>();
        metrics.push(MetricRow {
            model,
            variant,
            delivery_quarter: quarter,
            lead_min: lead,
            horizon_min: horizon,
            mae: model_mae,
            rmae: rmae(model_mae, naive_mae).ok(),
            dm: dm_test(&loss_naive, &loss_model, None).ok(),
        });
    }

    let overall = pooled
        .into_iter()
        .map(|((model, variant), (n, sm, sn))| OverallRow {
            model,
            variant,
            n,
            mae: sm / n as f64,
            naive_mae: sn / n as f64,
            rmae: rmae(sm / n as f64, sn / n as f64).ok(),
        })
        .collect();
    Ok(Evaluation {
        summary: summarize(&metrics),
        horizon_rejections: horizon_rejections(&metrics),
        overall,
        metrics,
    })
}

/// Mean rMAE and DM rejection share over deliveries, per lead and horizon.
pub fn summarize(metrics: &[MetricRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Model, Variant, i64, i64), Vec<&MetricRow>> = BTreeMap::new();
    for m in metrics {
        groups
            .entry((m.model, m.variant, m.lead_min, m.horizon_min))
            .or_default()
            .push(m);
    }
    groups
        .into_iter()
        .map(|((model, variant, lead_min, horizon_min), g)| SummaryRow {
            model,
            variant,
            lead_min,
            horizon_min,
            deliveries: g.len(),
            mean_rmae: mean(g.iter().filter_map(|m| m.rmae)),
            reject_share: mean(g.iter().filter_map(|m| m.dm).map(|d| d.reject_5pct as u8 as f64)),
        })
        .collect()
}

fn horizon_rejections(metrics: &[MetricRow]) -> Vec<HorizonRejectionRow> {
    let mut groups: BTreeMap<(Model, Variant, u8, i64), Vec<&MetricRow>> = BTreeMap::new();
    for m in metrics {
        groups
            .entry((m.model, m.variant, m.delivery_quarter, m.lead_min))
            .or_default()
            .push(m);
    }
    groups
        .into_iter()
        .map(
            |((model, variant, delivery_quarter, lead_min), g)| HorizonRejectionRow {
                model,
                variant,
                delivery_quarter,
                lead_min,
                horizons: g.len(),
                reject_share: mean(g.iter().filter_map(|m| m.dm).map(|d| d.reject_5pct as u8 as f64)),
            },
        )
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), format_value)
}

pub fn write_metrics<W: Write>(mut w: W, metrics: &[MetricRow]) -> io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for m in metrics {
        let (stat, p, reject) = match m.dm {
            Some(d) => (
                format_value(d.statistic),
                format_value(d.p_value),
                d.reject_5pct.to_string(),
            ),
            None => ("NA".into(), "NA".into(), "NA".into()),
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            m.model,
            m.variant,
            m.delivery_quarter,
            m.lead_min,
            m.horizon_min,
            format_value(m.mae),
            opt(m.rmae),
            stat,
            p,
            reject
        )?;
    }
    Ok(())
}

fn create(dir: &Path, name: &str) -> io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes the metrics table and its aggregates into `dir`.
pub fn write_evaluation(dir: &Path, eval: &Evaluation) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = create(dir, METRICS_FILE)?;
    write_metrics(&mut w, &eval.metrics)?;
    w.flush()?;

    let mut w = create(dir, SUMMARY_FILE)?;
    writeln!(
        w,
        "model,variant,lead_min,horizon_min,deliveries,mean_rmae,reject_share"
    )?;
    for s in &eval.summary {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            s.model,
            s.variant,
            s.lead_min,
            s.horizon_min,
            s.deliveries,
            opt(s.mean_rmae),
            opt(s.reject_share)
        )?;
    }
    w.flush()?;

    let mut w = create(dir, HORIZON_REJECTIONS_FILE)?;
    writeln!(w, "model,variant,delivery_quarter,lead_min,horizons,reject_share")?;
    for r in &eval.horizon_rejections {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.model,
            r.variant,
            r.delivery_quarter,
            r.lead_min,
            r.horizons,
            opt(r.reject_share)
        )?;
    }
    w.flush()?;

    let mut w = create(dir, OVERALL_FILE)?;
    writeln!(w, "model,variant,n,mae,naive_mae,rmae")?;
    for o in &eval.overall {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            o.model,
            o.variant,
            o.n,
            format_value(o.mae),
            format_value(o.naive_mae),
            opt(o.rmae)
        )?;
    }
    w.flush()
}

/// Parses a file written by [`write_metrics`].
pub fn read_metrics<R: BufRead>(reader: R) -> Result<Vec<MetricRow>, EvaluationError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let err = |message: String| EvaluationError::Parse { line: line_no, message };
        if i == 0 {
            if line.trim_end() != METRICS_HEADER {
                return Err(err(format!("unexpected header `{line}`")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let p: Vec<&str> = line.split(',').collect();
        if p.len() != 10 {
            return Err(err(format!("expected 10 fields, found {}", p.len())));
        }
        let num = |s: &str| -> Result<Option<f64>, EvaluationError> {
            if s == "NA" {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| err(format!("bad number `{s}`")))
            }
        };
        let int =
            |s: &str| -> Result<i64, EvaluationError> { s.parse().map_err(|_| err(format!("bad integer `{s}`"))) };
        let dm = match (num(p[7])?, num(p[8])?, p[9]) {
            (Some(statistic), Some(p_value), r) => Some(DmResult {
                statistic,
                p_value,
                reject_5pct: r == "true",
            }),
            _ => None,
        };
        out.push(MetricRow {
            model: p[0].parse().map_err(err)?,
            variant: p[1].parse().map_err(err)?,
            delivery_quarter: int(p[2])? as u8,
            lead_min: int(p[3])?,
            horizon_min: int(p[4])?,
            mae: num(p[5])?.ok_or_else(|| err("missing MAE".into()))?,
            rmae: num(p[6])?,
            dm,
        });
    }
    Ok(out)
}

pub fn load_metrics(path: &Path) -> Result<Vec<MetricRow>, EvaluationError> {
    read_metrics(BufReader::new(File::open(path)?))
}
