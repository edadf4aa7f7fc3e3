//! Model × scenario grids of simulated sessions, aggregated into per-step
//! curves and written as CSV.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use relfeed_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::harness::{run_session, Scenario, SessionOutcome, SimConfig, SimData, SimModel};

#[derive(Clone, Debug)]
pub struct ExperimentOptions {
    /// Shared settings; `model` and `scenario` are overridden per cell.
    pub base: SimConfig,
    pub grid: Vec<(SimModel, Scenario)>,
    /// Run sessions one at a time so fit timings are not skewed by
    /// contention.
    pub serial: bool,
}

impl ExperimentOptions {
    pub fn full_grid(base: SimConfig) -> Self {
        let grid = SimModel::ALL
            .iter()
            .flat_map(|m| Scenario::ALL.iter().map(move |s| (*m, *s)))
            .collect();
        Self {
            base,
            grid,
            serial: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub model: SimModel,
    pub scenario: Scenario,
    pub outcomes: Vec<SessionOutcome>,
    /// Sessions that aborted, with the reason; excluded from the means.
    pub failures: Vec<(u64, String)>,
    pub mean_f1: Vec<f64>,
    pub stderr_f1: Vec<f64>,
    pub mean_step_seconds: Vec<f64>,
}

impl CellResult {
    fn aggregate(model: SimModel, scenario: Scenario, steps: usize, runs: Vec<(u64, Result<SessionOutcome>)>) -> Self {
        let mut outcomes = Vec::new();
        let mut failures = Vec::new();
        for (session, run) in runs {
            match run {
                Ok(o) => outcomes.push(o),
                Err(e) => failures.push((session, e.to_string())),
            }
        }
        let n = outcomes.len() as f64;
        let mut mean_f1 = vec![0.0; steps];
        let mut stderr_f1 = vec![0.0; steps];
        let mut mean_step_seconds = vec![0.0; steps];
        for step in 0..steps {
            if outcomes.is_empty() {
                break;
            }
            let f1: Vec<f64> = outcomes.iter().map(|o| o.f1[step]).collect();
            let mean = f1.iter().sum::<f64>() / n;
            mean_f1[step] = mean;
            if outcomes.len() > 1 {
                let var = f1.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
                stderr_f1[step] = (var / n).sqrt();
            }
            mean_step_seconds[step] = outcomes.iter().map(|o| o.fit_seconds[step]).sum::<f64>() / n;
        }
        Self {
            model,
            scenario,
            outcomes,
            failures,
            mean_f1,
            stderr_f1,
            mean_step_seconds,
        }
    }

    pub fn final_f1(&self) -> f64 {
        self.mean_f1.last().copied().unwrap_or(0.0)
    }
}

/// Runs every cell of the grid over sessions `0..sessions`. Session `s`
/// uses the same target and seed documents in every cell.
pub fn run_experiment(data: &SimData, options: &ExperimentOptions) -> Result<Vec<CellResult>> {
    options.base.validate()?;
    let jobs: Vec<(usize, u64)> = (0..options.grid.len())
        .flat_map(|c| (0..options.base.sessions as u64).map(move |s| (c, s)))
        .collect();
    let run = |&(cell, session): &(usize, u64)| {
        let (model, scenario) = options.grid[cell];
        let config = SimConfig {
            model,
            scenario,
            ..options.base.clone()
        };
        (cell, session, run_session(data, &config, session))
    };
    let results: Vec<(usize, u64, Result<SessionOutcome>)> = if options.serial {
        jobs.iter().map(run).collect()
    } else {
        jobs.par_iter().map(run).collect()
    };
    let mut per_cell: Vec<Vec<(u64, Result<SessionOutcome>)>> = (0..options.grid.len()).map(|_| Vec::new()).collect();
    for (cell, session, outcome) in results {
        per_cell[cell].push((session, outcome));
    }
    Ok(options
        .grid
        .iter()
        .zip(per_cell)
        .map(|(&(model, scenario), runs)| CellResult::aggregate(model, scenario, options.base.steps, runs))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub model: String,
    pub scenario: String,
    /// 1-based.
    pub step: usize,
    pub mean_f1: f64,
    pub stderr_f1: f64,
    pub mean_step_seconds: f64,
}

pub fn csv_rows(cells: &[CellResult]) -> Vec<CsvRow> {
    cells
        .iter()
        .flat_map(|c| {
            (0..c.mean_f1.len()).map(move |i| CsvRow {
                model: c.model.to_string(),
                scenario: c.scenario.to_string(),
                step: i + 1,
                mean_f1: c.mean_f1[i],
                stderr_f1: c.stderr_f1[i],
                mean_step_seconds: c.mean_step_seconds[i],
            })
        })
        .collect()
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format {
        what: "results csv",
        detail: e.to_string(),
    }
}

pub fn write_csv<W: Write>(writer: W, cells: &[CellResult]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for row in csv_rows(cells) {
        out.serialize(row).map_err(csv_error)?;
    }
    out.flush().map_err(|e| csv_error(e.into()))
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<CsvRow>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_error)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    MeanF1,
    StderrF1,
    StepSeconds,
}

/// One column per `model/scenario` curve, one row per step.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotData {
    pub curves: Vec<String>,
    pub steps: Vec<usize>,
    /// `values[step][curve]`; `NaN` where a curve has no such step.
    pub values: Vec<Vec<f64>>,
}

pub fn pivot(rows: &[CsvRow], metric: Metric) -> PlotData {
    let mut curves: BTreeMap<String, BTreeMap<usize, f64>> = BTreeMap::new();
    for r in rows {
        let v = match metric {
            Metric::MeanF1 => r.mean_f1,
            Metric::StderrF1 => r.stderr_f1,
            Metric::StepSeconds => r.mean_step_seconds,
        };
        curves.entry(format!("{}/{}", r.model, r.scenario)).or_default().insert(r.step, v);
    }
    let mut steps: Vec<usize> = rows.iter().map(|r| r.step).collect();
    steps.sort_unstable();
    steps.dedup();
    let values = steps
        .iter()
        .map(|s| curves.values().map(|c| c.get(s).copied().unwrap_or(f64::NAN)).collect())
        .collect();
    PlotData {
        curves: curves.into_keys().collect(),
        steps,
        values,
    }
}

pub fn write_plotdata<W: Write>(writer: W, data: &PlotData) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let header = std::iter::once("step".to_string()).chain(data.curves.iter().cloned());
    out.write_record(header).map_err(csv_error)?;
    for (step, row) in data.steps.iter().zip(&data.values) {
        let record = std::iter::once(step.to_string()).chain(row.iter().map(|v| v.to_string()));
        out.write_record(record).map_err(csv_error)?;
    }
    out.flush().map_err(|e| csv_error(e.into()))
}
