//! Expanding-window study over the task grid.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use thiserror::Error;

use crate::benchmarks::forest::{rf_train, RfConfig};
use crate::benchmarks::lars::{lasso_cv_train, predict_linear};
use crate::evaluate::{arithmetic_average, invert_transform, weighted_average, TrailingErrors};
use crate::features::{
    set1_deliveries, set2_deliveries, ColumnKind, FeatureBuilder, FeatureSet, ForecastTask, RawBlock, TaskCell,
};
use crate::kernels::{cross_kernel, kernel_matrix, KernelKind, KernelSpec};
use crate::market_data::{ExogenousPanel, TransactionRecord};
use crate::preprocessing::{PreprocessError, TrajectoryStore};
use crate::rng::derive_seed;
use crate::scaling::{
    correlation_filter, lasso_dimension_filter, mean_std, standardize_features, standardize_target, DropReason,
    FeatureMatrix, ScalingError, StandardizedTarget, LASSO_CV_DAYS, S1_THRESHOLD, S2_THRESHOLD, SIGMA_FLOOR,
};
use crate::svr::{train_svr, SvrConfig, SvrError};

use super::config::{Averaging, ConfigError, Model, StudyConfig};
use super::records::{format_value, save_forecasts, Fallback, ForecastRow, Variant};
use super::tasks::{enumerate_tasks, DroppedCell, TaskError};

pub const FORECASTS_FILE: &str = "forecasts.csv";
pub const REJECTIONS_FILE: &str = "filter_rejections.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const DROPPED_FILE: &str = "dropped_tasks.csv";

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tasks(#[from] TaskError),
    #[error("data does not cover the study: {0}")]
    MissingData(String),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Correlation-filter counts for one set, lead and horizon, summed over deliveries and days.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectionRow {
    pub set: FeatureSet,
    pub lead_min: i64,
    pub horizon_min: i64,
    pub candidates: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub model: Model,
    pub variant: Variant,
    pub tasks: usize,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutput {
    pub forecasts: Vec<ForecastRow>,
    pub rejections: Vec<RejectionRow>,
    pub timing: Vec<TimingRow>,
    pub dropped: Vec<DroppedCell>,
}

/// Deliveries whose trajectories the configured cells read.
pub fn required_quarters(cfg: &StudyConfig) -> BTreeSet<u8> {
    cfg.deliveries
        .iter()
        .flat_map(|&q| set1_deliveries(q).chain(set2_deliveries(q)))
        .collect()
}

/// Builds the trajectories the study needs from raw trades.
pub fn build_store(
    cfg: &StudyConfig,
    trades: &[TransactionRecord],
    exogenous: ExogenousPanel,
) -> Result<TrajectoryStore, StudyError> {
    Ok(TrajectoryStore::build(
        trades,
        exogenous,
        cfg.train_start,
        cfg.data_days(),
        &required_quarters(cfg),
    )?)
}

fn check_coverage(cfg: &StudyConfig, store: &TrajectoryStore) -> Result<(), StudyError> {
    for day in [cfg.train_start, cfg.last_forecast_day] {
        if store.day_index(day).is_none() {
            return Err(StudyError::MissingData(format!("day {day} is not in the data")));
        }
    }
    for q in required_quarters(cfg) {
        if !store.contains(cfg.train_start, q) {
            return Err(StudyError::MissingData(format!("delivery {q} was not prepared")));
        }
    }
    Ok(())
}

/// Raw inputs of one cell over every day from the window start to the last forecast day.
struct CellInputs {
    days: Vec<NaiveDate>,
    raw: BTreeMap<FeatureSet, Vec<Option<(Vec<String>, Vec<ColumnKind>, Vec<f64>)>>>,
    targets: Vec<f64>,
    naive: Vec<f64>,
    actual: Vec<f64>,
}

impl CellInputs {
    fn collect(
        builder: &FeatureBuilder,
        cell: TaskCell,
        days: Vec<NaiveDate>,
        sets: &BTreeSet<FeatureSet>,
    ) -> Result<Self, StudyError> {
        let mut raw = BTreeMap::new();
        let mut targets = Vec::with_capacity(days.len());
        let mut naive = Vec::with_capacity(days.len());
        let mut actual = Vec::with_capacity(days.len());
        for &day in &days {
            let task = ForecastTask { day, cell };
            let lookup = |e: crate::features::FeatureError| StudyError::MissingData(e.to_string());
            targets.push(builder.target(&task).map_err(lookup)?);
            naive.push(builder.last_price(&task).map_err(lookup)?);
            actual.push(builder.actual(&task).map_err(lookup)?);
        }
        for &set in sets {
            let vectors = days
                .iter()
                .map(|&day| match builder.build(set, &ForecastTask { day, cell }) {
                    Ok(v) => Some((v.names, v.kinds, v.values)),
                    Err(e) => {
                        log::warn!("{set} features for {day}, delivery {}: {e}", cell.quarter);
                        None
                    }
                })
                .collect();
            raw.insert(set, vectors);
        }
        Ok(Self {
            days,
            raw,
            targets,
            naive,
            actual,
        })
    }

    /// Filtered, standardised matrix over rows `0..=t`, with the correlation-filter counts.
    fn prepare(&self, set: FeatureSet, t: usize) -> Result<(FeatureMatrix, usize, usize), Fallback> {
        let rows = &self.raw[&set][..=t];
        let Some(Some((names, kinds, _))) = rows.first() else {
            return Err(Fallback::Error("features".into()));
        };
        let mut block = RawBlock {
            names: names.clone(),
            kinds: kinds.clone(),
            rows: Vec::with_capacity(rows.len()),
        };
        for r in rows {
            match r {
                Some((n, _, v)) if n == names => block.rows.push(v.clone()),
                _ => return Err(Fallback::Error("features".into())),
            }
        }
        block.drop_constant_trajectories();
        if block.n_cols() == 0 {
            return Err(Fallback::DegenerateFeatures);
        }
        let fm = standardize_features(block.names.clone(), block.kinds.clone(), block.columns())
            .map_err(|_| Fallback::Error("too_few_rows".into()))?;
        let candidates = fm.n_cols();
        let fm = match set {
            FeatureSet::S1 => correlation_filter(fm, S1_THRESHOLD),
            FeatureSet::S2 => correlation_filter(fm, S2_THRESHOLD),
            FeatureSet::S3 => fm,
        };
        let rejected = fm.count_dropped(DropReason::Correlation);
        if fm.n_cols() == 0 {
            return Err(Fallback::DegenerateFeatures);
        }
        Ok((fm, candidates, rejected))
    }
}

/// Training rows, query row and standardised naive forecasts shared by the kernel models.
struct Design<'a> {
    rows: Vec<Vec<f64>>,
    naive_z: &'a [f64],
    t: usize,
}

fn svr_forecast(kind: KernelKind, d: &Design, y: &StandardizedTarget) -> Result<f64, Fallback> {
    let (train, query) = (&d.rows[..d.t], &d.rows[d.t]);
    let naive_train = &d.naive_z[..d.t];
    let spec = KernelSpec::fit(kind, train, naive_train).map_err(|_| Fallback::DegenerateKernel)?;
    let k = kernel_matrix(&spec, train, naive_train).map_err(|_| Fallback::DegenerateKernel)?;
    let sol = match train_svr(&k, &y.values, &SvrConfig::default()) {
        Ok(sol) => sol,
        Err(SvrError::MaxIterExceeded(_)) => return Err(Fallback::MaxIter),
        Err(SvrError::DegenerateKernel(_)) => return Err(Fallback::DegenerateKernel),
        Err(e) => return Err(Fallback::Error(format!("svr:{}", short_code(&e.to_string())))),
    };
    let kq = cross_kernel(&spec, train, naive_train, query, d.naive_z[d.t]).map_err(|_| Fallback::DegenerateKernel)?;
    Ok(sol.predict_from_kernel(&kq))
}

fn lasso_forecast(set: FeatureSet, fm: &FeatureMatrix, t: usize, y: &StandardizedTarget) -> Result<f64, Fallback> {
    let fm = if set == FeatureSet::S1 {
        match lasso_dimension_filter(fm.clone(), t - LASSO_CV_DAYS) {
            Ok(m) => m,
            Err(ScalingError::CapUnreachable { .. }) => return Err(Fallback::Error("lasso_cap".into())),
            Err(_) => return Err(Fallback::Error("lasso".into())),
        }
    } else {
        fm.clone()
    };
    let train: Vec<Vec<f64>> = fm.columns.iter().map(|c| c[..t].to_vec()).collect();
    let fit = lasso_cv_train(&train, &y.values).map_err(|_| Fallback::Error("lasso".into()))?;
    let query: Vec<f64> = fm.columns.iter().map(|c| c[t]).collect();
    Ok(predict_linear(&fit.coef, &query))
}

fn rf_forecast(d: &Design, y: &StandardizedTarget, seed: u64) -> f64 {
    let forest = rf_train(
        &d.rows[..d.t],
        &y.values,
        &RfConfig {
            seed,
            ..Default::default()
        },
    );
    forest.predict(&d.rows[d.t])
}

fn short_code(message: &str) -> String {
    message
        .split_whitespace()
        .take(3)
        .collect::<Vec<_>>()
        .join("_")
        .replace(|c: char| !c.is_ascii_alphanumeric() && c != '_', "")
}

#[derive(Default)]
struct CellResult {
    rows: Vec<ForecastRow>,
    rejections: BTreeMap<(FeatureSet, i64, i64), (usize, usize)>,
    timing: BTreeMap<(Model, Variant), (usize, f64)>,
}

struct Context<'a> {
    cfg: &'a StudyConfig,
    builder: FeatureBuilder<'a>,
    /// Sets whose matrices are built: the configured ones plus set 1 for the plain SVR.
    needed_sets: BTreeSet<FeatureSet>,
}

impl Context<'_> {
    fn wants(&self, model: Model, set: FeatureSet) -> bool {
        self.cfg.models.contains(&model) && self.cfg.sets.contains(&set)
    }

    fn run_cell(&self, cell: TaskCell) -> Result<CellResult, StudyError> {
        let cfg = self.cfg;
        let window_start = cfg.window_start();
        let days: Vec<NaiveDate> = window_start
            .iter_days()
            .take_while(|d| *d <= cfg.last_forecast_day)
            .collect();
        let first_t = (cfg.first_forecast_day - window_start).num_days() as usize;
        let inputs = CellInputs::collect(&self.builder, cell, days, &self.needed_sets)?;
        let mut out = CellResult::default();
        let full_sets = FeatureSet::ALL.iter().all(|s| cfg.sets.contains(s));
        let mut trailing: BTreeMap<Model, TrailingErrors> = BTreeMap::new();

        for (i, t) in (first_t..inputs.days.len()).enumerate() {
            let day = inputs.days[t];
            let task = ForecastTask { day, cell };
            let naive_t = inputs.naive[t];
            let actual = inputs.actual[t];
            let push =
                |out: &mut CellResult, model: Model, variant: Variant, forecast: f64, fallback: Fallback, ms: f64| {
                    let e = out.timing.entry((model, variant)).or_insert((0, 0.0));
                    e.0 += 1;
                    e.1 += ms;
                    out.rows.push(ForecastRow {
                        model,
                        variant,
                        delivery_date: day,
                        delivery_quarter: cell.quarter,
                        m: task.m(),
                        s: task.s(),
                        lead_min: cell.lead,
                        horizon_min: cell.horizon,
                        forecast,
                        actual,
                        fallback,
                        elapsed_ms: if cfg.record_timing { ms.round() as u64 } else { 0 },
                    });
                };
            if cfg.models.contains(&Model::Naive) {
                push(&mut out, Model::Naive, Variant::None, naive_t, Fallback::None, 0.0);
            }

            let target = standardize_target(&inputs.targets[..t]);
            let (nmu, nsd) = mean_std(&inputs.naive[..=t]);
            let naive_z: Vec<f64> = inputs.naive[..=t]
                .iter()
                .map(|v| if nsd >= SIGMA_FLOOR { (v - nmu) / nsd } else { 0.0 })
                .collect();
            let mut set_forecasts: BTreeMap<Model, BTreeMap<FeatureSet, f64>> = BTreeMap::new();

            for &set in &self.needed_sets {
                let started = Instant::now();
                let prepared = inputs.prepare(set, t);
                let prep_ms = started.elapsed().as_secs_f64() * 1e3;
                if let Ok((_, cand, rej)) = &prepared {
                    if set != FeatureSet::S3 {
                        let e = out.rejections.entry((set, cell.lead, cell.horizon)).or_insert((0, 0));
                        e.0 += cand;
                        e.1 += rej;
                    }
                }
                let ready: Result<(&FeatureMatrix, &StandardizedTarget), Fallback> = match (&prepared, &target) {
                    (Err(f), _) => Err(f.clone()),
                    (_, Err(ScalingError::DegenerateTarget)) => Err(Fallback::DegenerateTarget),
                    (_, Err(_)) => Err(Fallback::Error("target".into())),
                    (Ok((fm, _, _)), Ok(y)) => Ok((fm, y)),
                };
                let design = ready.as_ref().ok().map(|(fm, _)| Design {
                    rows: fm.rows(),
                    naive_z: &naive_z,
                    t,
                });
                let run = |out: &mut CellResult, model: Model, variant: Variant, f: &dyn Fn(&FeatureMatrix, &Design, &StandardizedTarget) -> Result<f64, Fallback>| {
                    let started = Instant::now();
                    let result = match (&ready, &design) {
                        (Ok((fm, y)), Some(d)) => f(fm, d, y).map(|z| invert_transform(z, y.mu, y.sigma, naive_t)),
                        (Err(fb), _) => Err(fb.clone()),
                        _ => unreachable!("design exists whenever inputs are ready"),
                    };
                    let ms = prep_ms + started.elapsed().as_secs_f64() * 1e3;
                    let (forecast, fallback) = match result {
                        Ok(v) if v.is_finite() => (v, Fallback::None),
                        Ok(_) => (naive_t, Fallback::Error("non_finite".into())),
                        Err(fb) => (naive_t, fb),
                    };
                    push(out, model, variant, forecast, fallback, ms);
                    forecast
                };
                if self.wants(Model::Csvr, set) {
                    let f = run(&mut out, Model::Csvr, Variant::Set(set), &|_, d, y| {
                        svr_forecast(KernelKind::Corrected, d, y)
                    });
                    set_forecasts.entry(Model::Csvr).or_default().insert(set, f);
                }
                if set == FeatureSet::S1 && cfg.models.contains(&Model::Svr) {
                    run(&mut out, Model::Svr, Variant::Kernel(4), &|_, d, y| {
                        svr_forecast(KernelKind::LaplaceL2, d, y)
                    });
                    run(&mut out, Model::Svr, Variant::Kernel(5), &|_, d, y| {
                        svr_forecast(KernelKind::LaplaceL1, d, y)
                    });
                }
                if self.wants(Model::Lasso, set) {
                    let f = run(&mut out, Model::Lasso, Variant::Set(set), &|fm, _, y| {
                        lasso_forecast(set, fm, t, y)
                    });
                    set_forecasts.entry(Model::Lasso).or_default().insert(set, f);
                }
                if self.wants(Model::Rf, set) {
                    let seed = derive_seed(
                        cfg.seed,
                        &[
                            cell.quarter as u64,
                            cell.lead as u64,
                            cell.horizon as u64,
                            day.num_days_from_ce() as u64,
                            set.id() as u64,
                        ],
                    );
                    let f = run(&mut out, Model::Rf, Variant::Set(set), &|_, d, y| {
                        Ok(rf_forecast(d, y, seed))
                    });
                    set_forecasts.entry(Model::Rf).or_default().insert(set, f);
                }
            }

            if !full_sets {
                continue;
            }
            for (model, per_set) in set_forecasts {
                let f = [
                    per_set[&FeatureSet::S1],
                    per_set[&FeatureSet::S2],
                    per_set[&FeatureSet::S3],
                    naive_t,
                ];
                if cfg.averaging.contains(&Averaging::Avg) {
                    push(
                        &mut out,
                        model,
                        Variant::Avg,
                        arithmetic_average(&f),
                        Fallback::None,
                        0.0,
                    );
                }
                let errors = trailing
                    .entry(model)
                    .or_insert_with(|| TrailingErrors::new(cfg.calibration_window));
                if cfg.averaging.contains(&Averaging::WAvg) {
                    match errors.maes() {
                        Ok(maes) if i >= cfg.calibration_window => push(
                            &mut out,
                            model,
                            Variant::WAvg,
                            weighted_average(&f, &maes),
                            Fallback::None,
                            0.0,
                        ),
                        _ => push(&mut out, model, Variant::WAvg, naive_t, Fallback::Calibration, 0.0),
                    }
                }
                errors.push(f.map(|v| (v - actual).abs()));
            }
        }
        Ok(out)
    }
}

/// Runs every configured model on every task of the grid.
///
/// Cells run in parallel on `cfg.workers` threads; within a cell the days run in
/// order because the weighted average needs the errors of earlier days.
pub fn run_study(cfg: &StudyConfig, store: &TrajectoryStore) -> Result<StudyOutput, StudyError> {
    cfg.validate()?;
    let plan = enumerate_tasks(cfg)?;
    check_coverage(cfg, store)?;
    let mut needed_sets = cfg.sets.clone();
    if cfg.models.contains(&Model::Svr) {
        needed_sets.insert(FeatureSet::S1);
    }
    if !cfg.models.iter().any(|m| *m != Model::Naive) {
        needed_sets.clear();
    }
    let ctx = Context {
        cfg,
        builder: FeatureBuilder::new(store),
        needed_sets,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| StudyError::Pool(e.to_string()))?;
    let results: Vec<Result<CellResult, StudyError>> =
        pool.install(|| plan.cells.par_iter().map(|&cell| ctx.run_cell(cell)).collect());

    let mut forecasts = Vec::new();
    let mut rejections: BTreeMap<(FeatureSet, i64, i64), (usize, usize)> = BTreeMap::new();
    let mut timing: BTreeMap<(Model, Variant), (usize, f64)> = BTreeMap::new();
    for r in results {
        let r = r?;
        forecasts.extend(r.rows);
        for (k, (c, j)) in r.rejections {
            let e = rejections.entry(k).or_default();
            e.0 += c;
            e.1 += j;
        }
        for (k, (n, ms)) in r.timing {
            let e = timing.entry(k).or_default();
            e.0 += n;
            e.1 += ms;
        }
    }
    forecasts.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    Ok(StudyOutput {
        forecasts,
        rejections: rejections
            .into_iter()
            .map(|((set, lead_min, horizon_min), (candidates, rejected))| RejectionRow {
                set,
                lead_min,
                horizon_min,
                candidates,
                rejected,
            })
            .collect(),
        timing: timing
            .into_iter()
            .map(|((model, variant), (tasks, total_ms))| TimingRow {
                model,
                variant,
                tasks,
                total_ms,
            })
            .collect(),
        dropped: plan.dropped,
    })
}

/// Writes the forecasts, filter counts, timing summary and dropped cells into `dir`.
pub fn write_study_outputs(dir: &Path, out: &StudyOutput) -> Result<(), StudyError> {
    std::fs::create_dir_all(dir)?;
    save_forecasts(&dir.join(FORECASTS_FILE), &out.forecasts)?;

    let mut w = BufWriter::new(File::create(dir.join(REJECTIONS_FILE))?);
    writeln!(w, "set,lead_min,horizon_min,candidates,rejected,rejected_share")?;
    for r in &out.rejections {
        let share = if r.candidates > 0 {
            r.rejected as f64 / r.candidates as f64
        } else {
            0.0
        };
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.set.id(),
            r.lead_min,
            r.horizon_min,
            r.candidates,
            r.rejected,
            format_value(share)
        )?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(dir.join(TIMING_FILE))?);
    writeln!(w, "model,variant,tasks,total_ms,mean_ms")?;
    for r in &out.timing {
        writeln!(
            w,
            "{},{},{},{:.3},{:.3}",
            r.model,
            r.variant,
            r.tasks,
            r.total_ms,
            r.total_ms / r.tasks.max(1) as f64
        )?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(dir.join(DROPPED_FILE))?);
    writeln!(w, "delivery_quarter,lead_min,horizon_min,reason")?;
    for d in &out.dropped {
        writeln!(
            w,
            "{},{},{},{}",
            d.quarter,
            d.lead,
            d.horizon,
            d.reason.replace(',', ";")
        )?;
    }
    w.flush()?;
    Ok(())
}
