//! The task grid: deliveries x lead times x horizons x forecast days.

use thiserror::Error;

use crate::features::{ForecastTask, TaskCell};

use super::config::StudyConfig;

#[derive(Debug, Error, PartialEq)]
pub enum TaskError {
    #[error("the configured grid contains no forecastable task")]
    EmptyGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroppedCell {
    pub quarter: u8,
    pub lead: i64,
    pub horizon: i64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskPlan {
    /// Cells that are forecast every day, in canonical order.
    pub cells: Vec<TaskCell>,
    /// Every task, ordered by day and then by cell.
    pub tasks: Vec<ForecastTask>,
    pub dropped: Vec<DroppedCell>,
}

impl TaskPlan {
    pub fn tasks_per_day(&self) -> usize {
        self.cells.len()
    }
}

/// Why a cell cannot be forecast, if it cannot.
///
/// Forecast moments before the grid opens are kept: the price trajectory is
/// extended backwards with its pre-open value, so only targets that precede
/// the opening of the grid are rejected.
fn drop_reason(quarter: u8, lead: i64, horizon: i64) -> Option<String> {
    let cell = match TaskCell::new(quarter, lead, horizon) {
        Ok(c) => c,
        Err(e) => return Some(e.to_string()),
    };
    if cell.s() < 0 {
        return Some(format!("target minute {} precedes the opening of the grid", cell.s()));
    }
    if cell.m() >= cell.s() {
        return Some("forecast moment does not precede the target".into());
    }
    None
}

pub fn enumerate_tasks(cfg: &StudyConfig) -> Result<TaskPlan, TaskError> {
    let mut cells = Vec::new();
    let mut dropped = Vec::new();
    for &quarter in &cfg.deliveries {
        for &lead in &cfg.lead_times {
            for &horizon in &cfg.horizons {
                match drop_reason(quarter, lead, horizon) {
                    None => cells.push(TaskCell::new(quarter, lead, horizon).expect("checked")),
                    Some(reason) => {
                        log::info!("dropping delivery {quarter}, lead {lead}, horizon {horizon}: {reason}");
                        dropped.push(DroppedCell {
                            quarter,
                            lead,
                            horizon,
                            reason,
                        });
                    }
                }
            }
        }
    }
    let days = cfg.forecast_days();
    if cells.is_empty() || days.is_empty() {
        return Err(TaskError::EmptyGrid);
    }
    let tasks = days
        .iter()
        .flat_map(|&day| cells.iter().map(move |&cell| ForecastTask { day, cell }))
        .collect();
    Ok(TaskPlan { cells, tasks, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn cfg() -> StudyConfig {
        let d = |s| NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap();
        StudyConfig::new(d("2021-01-04"), d("2021-03-05"), d("2021-03-05"))
    }

    #[test]
    fn full_grid_has_5760_tasks_per_day() {
        let plan = enumerate_tasks(&cfg()).unwrap();
        assert_eq!(plan.tasks_per_day(), 5760);
        assert_eq!(plan.tasks.len(), 5760);
        assert!(plan.dropped.is_empty());
    }

    #[test]
    fn small_grid() {
        let mut c = cfg();
        c.deliveries = [5, 17, 33, 41, 49, 69, 73, 89].into_iter().collect();
        c.lead_times = vec![60];
        c.horizons = vec![30, 120, 480];
        c.last_forecast_day = c.first_forecast_day + chrono::Duration::days(1);
        let plan = enumerate_tasks(&c).unwrap();
        assert_eq!(plan.tasks_per_day(), 24);
        assert_eq!(plan.tasks.len(), 48);
        assert!(plan.tasks[..24].iter().all(|t| t.day == c.first_forecast_day));
    }

    #[test]
    fn target_before_grid_is_dropped() {
        let mut c = cfg();
        c.deliveries = [1, 2].into_iter().collect();
        c.lead_times = vec![495];
        c.horizons = vec![30];
        let plan = enumerate_tasks(&c).unwrap();
        assert_eq!(plan.tasks_per_day(), 1);
        assert_eq!(plan.dropped.len(), 1);
        assert_eq!(plan.dropped[0].quarter, 1);
        assert!(plan.dropped[0].reason.contains("precedes"));

        c.deliveries = [1].into_iter().collect();
        assert_eq!(enumerate_tasks(&c), Err(TaskError::EmptyGrid));
    }
}
