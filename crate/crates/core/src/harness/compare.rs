use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::Value;

use super::config::{distinct, RunConfig};
use super::run::{read_summary, SummaryRow};
use crate::error::{Error, Result};
use crate::metrics::{extract_front, hypervolume, shared_reference, ObjectivePoint};

/// Margin used when widening the shared hypervolume reference.
pub const REFERENCE_MARGIN: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompareMetric {
    FinalMaxLoss,
    Hypervolume,
    Criticality,
}

impl FromStr for CompareMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final-max-loss" => Ok(CompareMetric::FinalMaxLoss),
            "hypervolume" => Ok(CompareMetric::Hypervolume),
            "criticality" => Ok(CompareMetric::Criticality),
            other => Err(Error::Config(vec![format!(
                "metric: unknown metric `{other}` (known: final-max-loss, hypervolume, criticality)"
            )])),
        }
    }
}

impl fmt::Display for CompareMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CompareMetric::FinalMaxLoss => "final-max-loss",
            CompareMetric::Hypervolume => "hypervolume",
            CompareMetric::Criticality => "criticality",
        })
    }
}

/// Aggregate of one run directory.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub run: PathBuf,
    pub optimizer: String,
    /// Metric value per seed, in the run's seed order.
    pub values: Vec<(u64, f64)>,
    pub mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub std: f64,
}

struct LoadedRun {
    dir: PathBuf,
    config: RunConfig,
    m: usize,
    summary: Vec<SummaryRow>,
}

fn load_run(dir: &Path) -> Result<LoadedRun> {
    let manifest = dir.join("manifest.json");
    if !manifest.is_file() {
        return Err(Error::invalid(format!("{}: not a run directory (no manifest.json)", dir.display())));
    }
    let v: Value = serde_json::from_str(&fs::read_to_string(&manifest)?)?;
    let config: RunConfig = serde_json::from_value(v["config"].clone())
        .map_err(|e| Error::invalid(format!("{}: bad config echo: {e}", manifest.display())))?;
    let (m, summary) = read_summary(dir)?;
    if summary.is_empty() {
        return Err(Error::invalid(format!("{}: summary has no rows", dir.display())));
    }
    Ok(LoadedRun {
        dir: dir.to_owned(),
        config,
        m,
        summary,
    })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Final points of one seed's members.
fn seed_points(run: &LoadedRun, seed_idx: usize) -> Result<Vec<ObjectivePoint>> {
    run.summary
        .iter()
        .filter(|r| r.idx == seed_idx)
        .map(|r| ObjectivePoint::new(r.final_losses.clone(), r.member))
        .collect()
}

/// Per-seed values of `metric` for every run directory.
///
/// Loss and criticality are averaged over population members. Hypervolume
/// uses the final-point front of each seed, against a reference shared by
/// all runs that contain that seed.
pub fn compare_runs(dirs: &[PathBuf], metric: CompareMetric) -> Result<Vec<CompareRow>> {
    if dirs.is_empty() {
        return Err(Error::invalid("no run directories given"));
    }
    let runs: Vec<LoadedRun> = dirs.iter().map(|d| load_run(d)).collect::<Result<_>>()?;
    let problems = distinct(runs.iter().map(|r| r.config.problem.name.as_str()));
    let first = &runs[0];
    if problems.len() > 1
        || runs.iter().any(|r| r.config.problem != first.config.problem || r.m != first.m)
    {
        return Err(Error::invalid(format!(
            "runs use different problems: {}",
            runs.iter()
                .map(|r| format!("{} ({})", r.dir.display(), r.config.problem.name))
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }
    if runs.iter().any(|r| r.config.steps != first.config.steps) {
        return Err(Error::invalid("runs use different step counts"));
    }

    let mut per_run: Vec<Vec<(u64, f64)>> = Vec::new();
    match metric {
        CompareMetric::FinalMaxLoss | CompareMetric::Criticality => {
            for run in &runs {
                let mut values = Vec::new();
                for (idx, &seed) in run.config.seeds.iter().enumerate() {
                    let rows: Vec<&SummaryRow> = run.summary.iter().filter(|r| r.idx == idx).collect();
                    let v: Vec<f64> = rows
                        .iter()
                        .map(|r| if metric == CompareMetric::Criticality { r.criticality } else { r.max_loss() })
                        .collect();
                    values.push((seed, mean_std(&v).0));
                }
                per_run.push(values);
            }
        }
        CompareMetric::Hypervolume => {
            let mut fronts: Vec<BTreeMap<u64, Vec<Vec<f64>>>> = Vec::new();
            for run in &runs {
                let mut by_seed = BTreeMap::new();
                for (idx, &seed) in run.config.seeds.iter().enumerate() {
                    let front = extract_front(&seed_points(run, idx)?);
                    by_seed.insert(seed, front.into_iter().map(|p| p.values).collect::<Vec<_>>());
                }
                fronts.push(by_seed);
            }
            for (run, by_seed) in runs.iter().zip(&fronts) {
                let mut values = Vec::new();
                for &seed in &run.config.seeds {
                    let all: Vec<&[Vec<f64>]> =
                        fronts.iter().filter_map(|f| f.get(&seed)).map(Vec::as_slice).collect();
                    let reference = shared_reference(&all, REFERENCE_MARGIN)?;
                    values.push((seed, hypervolume(&by_seed[&seed], &reference)?));
                }
                per_run.push(values);
            }
        }
    }

    Ok(runs
        .iter()
        .zip(per_run)
        .map(|(run, values)| {
            let (mean, std) = mean_std(&values.iter().map(|v| v.1).collect::<Vec<_>>());
            CompareRow {
                run: run.dir.clone(),
                optimizer: run.config.optimizer.name.clone(),
                values,
                mean,
                std,
            }
        })
        .collect())
}

pub fn write_report(path: &Path, metric: CompareMetric, rows: &[CompareRow]) -> Result<()> {
    let mut csv = String::from("run,optimizer,metric,seeds,mean,std\n");
    for r in rows {
        csv.push_str(&format!(
            "{},{},{metric},{},{:.16e},{:.16e}\n",
            r.run.display(),
            r.optimizer,
            r.values.len(),
            r.mean,
            r.std
        ));
    }
    fs::write(path, csv)?;
    Ok(())
}
