use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;

use super::config::{OptimizerKind, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::{front_indices, ObjectivePoint};
use crate::minnorm::{criticality_measure, DEFAULT_TOL};
use crate::ml2o::{load_checkpoint_for, ml2o_step, GradientSource, Ml2oIterate, Ml2oParams};
use crate::optimizers::{
    composite_weight_step, dssmg_step, mgda_step, moco_like_step, scalarized_step, smg_step, OptimizerState, StepInfo,
};
use crate::problems::{MooProblem, ProblemRegistry};
use crate::record::{GuardChoice, RunRecord, TraceRow, CSV_SCHEMA_VERSION};
use crate::rng::{stream, Purpose};
use crate::safeguard::{gml2o_deterministic_run, gml2o_run};

/// Final state of one `(seed, member)` run.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    /// Position of the seed in the config's seed list.
    pub idx: usize,
    pub seed: u64,
    pub member: usize,
    pub final_losses: Vec<f64>,
    pub criticality: f64,
    pub learned_steps: Option<usize>,
}

impl SummaryRow {
    pub fn max_loss(&self) -> f64 {
        self.final_losses.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub dir: PathBuf,
    pub objectives: usize,
    pub summary: Vec<SummaryRow>,
    pub trace_files: Vec<PathBuf>,
}

pub fn trace_file_name(idx: usize, seed: u64, member: usize) -> String {
    format!("trace_{idx}_seed{seed}_m{member}.csv")
}

pub fn front_file_name(idx: usize, seed: u64) -> String {
    format!("front_{idx}_seed{seed}.csv")
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn plain_loop(
    problem: &dyn MooProblem,
    x0: Vec<f64>,
    steps: usize,
    record_iterates: bool,
    mut step: impl FnMut(&mut OptimizerState) -> Result<StepInfo>,
) -> Result<RunRecord> {
    let mut st = OptimizerState::new(x0);
    let mut rec = RunRecord::default();
    rec.rows.push(TraceRow::initial(problem.eval(&st.x)?, record_iterates.then(|| st.x.clone())));
    for _ in 0..steps {
        let info = step(&mut st)?;
        rec.rows.push(TraceRow {
            k: st.k,
            losses: problem.eval(&st.x)?,
            direction_norm: info.direction_norm,
            alpha: info.alpha,
            sample_size: info.sample_size,
            guard: None,
            criticality: None,
            iterate: record_iterates.then(|| st.x.clone()),
        });
    }
    rec.final_x = st.x;
    Ok(rec)
}

/// Runs one optimizer from one starting point.
pub fn single_run(
    problem: &dyn MooProblem,
    kind: &OptimizerKind,
    cfg: &RunConfig,
    learned: Option<&Ml2oParams>,
    seed: u64,
    member: usize,
) -> Result<RunRecord> {
    let member = member as u64;
    let x0 = problem.initial_point(&mut stream(seed, member, Purpose::Init));
    let mut noise = stream(seed, member, Purpose::Noise);
    let sched = &cfg.step_schedule;
    let keep_iterates = cfg.record_iterates || cfg.criticality;
    let need_params = || learned.ok_or_else(|| Error::invalid("learned optimizer parameters were not loaded"));
    let samples = cfg.sample_schedule;
    let mut rec = match kind {
        OptimizerKind::Mgda => plain_loop(problem, x0, cfg.steps, keep_iterates, |s| mgda_step(problem, s, sched))?,
        OptimizerKind::Smg => {
            plain_loop(problem, x0, cfg.steps, keep_iterates, |s| smg_step(problem, s, sched, &mut noise))?
        }
        OptimizerKind::Dssmg => {
            let samples = samples.ok_or_else(|| Error::invalid("dssmg needs a sample schedule"))?;
            plain_loop(problem, x0, cfg.steps, keep_iterates, |s| {
                dssmg_step(problem, s, sched, &samples, &mut noise)
            })?
        }
        OptimizerKind::Moco(p) => plain_loop(problem, x0, cfg.steps, keep_iterates, |s| {
            moco_like_step(problem, s, p, sched, &mut noise)
        })?,
        OptimizerKind::Composite { beta } => plain_loop(problem, x0, cfg.steps, keep_iterates, |s| {
            composite_weight_step(problem, s, *beta, sched, &mut noise)
        })?,
        OptimizerKind::Scalarized(rule) => plain_loop(problem, x0, cfg.steps, keep_iterates, |s| {
            scalarized_step(problem, s, rule, &mut noise)
        })?,
        OptimizerKind::Ml2o { source, .. } => {
            let params = need_params()?;
            let source = source.clone().unwrap_or(match samples {
                Some(s) => GradientSource::Dynamic { base: s.base, rate: s.rate },
                None => GradientSource::Single,
            });
            let mut it = Ml2oIterate::new(x0, params);
            let mut rec = RunRecord::default();
            rec.rows.push(TraceRow::initial(problem.eval(&it.x)?, keep_iterates.then(|| it.x.clone())));
            for _ in 0..cfg.steps {
                let info = ml2o_step(problem, &mut it, params, sched, &source, &mut noise)?;
                rec.rows.push(TraceRow {
                    k: it.k,
                    losses: problem.eval(&it.x)?,
                    direction_norm: info.direction_norm,
                    alpha: info.alpha,
                    sample_size: info.sample_size,
                    guard: None,
                    criticality: None,
                    iterate: keep_iterates.then(|| it.x.clone()),
                });
            }
            rec.final_x = it.x;
            rec
        }
        OptimizerKind::Gml2o { .. } => {
            let samples = samples.ok_or_else(|| Error::invalid("gml2o needs a sample schedule"))?;
            let mut guard = stream(seed, member, Purpose::Guard);
            gml2o_run(problem, need_params()?, x0, sched, &samples, cfg.steps, &mut noise, &mut guard, keep_iterates)?.0
        }
        OptimizerKind::Gml2oDeterministic { .. } => {
            let alpha = sched.alpha(1);
            gml2o_deterministic_run(problem, need_params()?, x0, alpha, cfg.steps, keep_iterates)?.0
        }
    };
    if cfg.criticality {
        for row in rec.rows.iter_mut() {
            let x = row.iterate.as_ref().expect("iterates kept for criticality");
            row.criticality = Some(criticality_measure(problem, x, DEFAULT_TOL)?);
        }
    }
    if !cfg.record_iterates {
        rec.rows.iter_mut().for_each(|r| r.iterate = None);
    }
    Ok(rec)
}

/// Files created so far, removed again if the experiment fails.
struct Cleanup {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<PathBuf>,
    armed: bool,
}

impl Drop for Cleanup {
    fn drop(&mut self) {
        if !self.armed {
            return;
        }
        if self.created_dir {
            let _ = fs::remove_dir_all(&self.dir);
        } else {
            for f in &self.files {
                let _ = fs::remove_file(f);
            }
        }
    }
}

/// Creates `dir` if needed and returns a guard that undoes it on failure.
fn prepare_dir(dir: &Path) -> Result<Cleanup> {
    let created_dir = !dir.exists();
    fs::create_dir_all(dir)?;
    Ok(Cleanup {
        dir: dir.to_owned(),
        created_dir,
        files: Vec::new(),
        armed: true,
    })
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_summary(path: &Path, rows: &[SummaryRow], m: usize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut header = vec!["idx".to_owned(), "seed".into(), "member".into()];
    header.extend((0..m).map(|i| format!("loss_{i}")));
    header.extend(["max_loss", "criticality", "learned_steps"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        let mut cells = vec![r.idx.to_string(), r.seed.to_string(), r.member.to_string()];
        cells.extend(r.final_losses.iter().map(|v| num(*v)));
        cells.push(num(r.max_loss()));
        cells.push(num(r.criticality));
        cells.push(r.learned_steps.map(|c| c.to_string()).unwrap_or_default());
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn write_front(path: &Path, rows: &[&SummaryRow], m: usize) -> Result<()> {
    let points: Vec<ObjectivePoint> = rows
        .iter()
        .map(|r| ObjectivePoint::new(r.final_losses.clone(), r.member))
        .collect::<Result<_>>()?;
    let mut w = BufWriter::new(File::create(path)?);
    let mut header = vec!["member".to_owned()];
    header.extend((0..m).map(|i| format!("loss_{i}")));
    writeln!(w, "{}", header.join(","))?;
    for i in front_indices(&points) {
        let p = &points[i];
        let mut cells = vec![p.source.to_string()];
        cells.extend(p.values.iter().map(|v| num(*v)));
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every `(seed, member)` pair of `cfg` and writes traces, a summary,
/// per-seed fronts (for populations), wall times and a manifest into `out`.
///
/// Everything except `timing.csv` depends only on the config.
pub fn run_experiment(
    cfg: &RunConfig,
    registry: &ProblemRegistry,
    out: &Path,
    threads: Option<usize>,
) -> Result<ExperimentOutput> {
    let kind = cfg.validate(registry)?;
    let mut cleanup = prepare_dir(out)?;

    let problems: Vec<Arc<dyn MooProblem>> = cfg
        .seeds
        .iter()
        .map(|&s| registry.build(&cfg.problem.name, &cfg.problem.params, s))
        .collect::<Result<_>>()?;
    let m = problems[0].objectives();
    let learned = match kind.checkpoint() {
        Some(path) => Some(load_checkpoint_for(path, m, None)?),
        None => None,
    };

    let population = cfg.population();
    let jobs: Vec<(usize, u64, usize)> = cfg
        .seeds
        .iter()
        .enumerate()
        .flat_map(|(idx, &seed)| (0..population).map(move |member| (idx, seed, member)))
        .collect();
    cleanup.files.extend(jobs.iter().map(|&(i, s, mb)| out.join(trace_file_name(i, s, mb))));

    let work = || -> Result<Vec<(SummaryRow, f64)>> {
        jobs.par_iter()
            .map(|&(idx, seed, member)| {
                let t0 = Instant::now();
                let problem = problems[idx].as_ref();
                let rec = single_run(problem, &kind, cfg, learned.as_ref(), seed, member)?;
                rec.validate(m)?;
                let mut w = BufWriter::new(File::create(out.join(trace_file_name(idx, seed, member)))?);
                rec.write_csv(&mut w, m)?;
                w.flush()?;
                let last = rec.last().expect("initial row always present");
                let learned_steps = last
                    .guard
                    .map(|_| rec.rows.iter().filter(|r| r.guard == Some(GuardChoice::Learned)).count());
                let row = SummaryRow {
                    idx,
                    seed,
                    member,
                    final_losses: last.losses.clone(),
                    criticality: criticality_measure(problem, &rec.final_x, DEFAULT_TOL)?,
                    learned_steps,
                };
                Ok((row, t0.elapsed().as_secs_f64()))
            })
            .collect()
    };
    let results = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let (summary, times): (Vec<SummaryRow>, Vec<f64>) = results.into_iter().unzip();

    let summary_path = out.join("summary.csv");
    cleanup.files.push(summary_path.clone());
    write_summary(&summary_path, &summary, m)?;

    let mut fronts = Vec::new();
    if population > 1 {
        for (idx, &seed) in cfg.seeds.iter().enumerate() {
            let rows: Vec<&SummaryRow> = summary.iter().filter(|r| r.idx == idx).collect();
            let name = front_file_name(idx, seed);
            cleanup.files.push(out.join(&name));
            write_front(&out.join(&name), &rows, m)?;
            fronts.push(name);
        }
    }

    let timing_path = out.join("timing.csv");
    cleanup.files.push(timing_path.clone());
    let mut timing = String::from("idx,seed,member,wall_seconds\n");
    for (r, t) in summary.iter().zip(&times) {
        timing.push_str(&format!("{},{},{},{t:.6}\n", r.idx, r.seed, r.member));
    }
    fs::write(&timing_path, timing)?;

    let mut echo = cfg.clone();
    echo.outputs = None;
    let manifest = json!({
        "toolkit": "ml2o",
        "version": env!("CARGO_PKG_VERSION"),
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "config": echo,
        "objectives": m,
        "seeds": cfg.seeds,
        "population": population,
        "traces": jobs.iter().map(|&(i, s, mb)| trace_file_name(i, s, mb)).collect::<Vec<_>>(),
        "fronts": fronts,
        "summary": "summary.csv",
        "timing": "timing.csv",
    });
    let manifest_path = out.join("manifest.json");
    cleanup.files.push(manifest_path.clone());
    write_atomic(&manifest_path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;

    cleanup.armed = false;
    Ok(ExperimentOutput {
        dir: out.to_owned(),
        objectives: m,
        summary,
        trace_files: jobs.iter().map(|&(i, s, mb)| out.join(trace_file_name(i, s, mb))).collect(),
    })
}

/// Reads `summary.csv` written by [`run_experiment`].
pub fn read_summary(dir: &Path) -> Result<(usize, Vec<SummaryRow>)> {
    let text = fs::read_to_string(dir.join("summary.csv"))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::invalid("empty summary.csv"))?.split(',').collect();
    let m = header.iter().filter(|h| h.starts_with("loss_")).count();
    let bad = |line: usize| Error::invalid(format!("{}: malformed line {line}", dir.join("summary.csv").display()));
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 3 + m + 3 {
            return Err(bad(i + 2));
        }
        let f = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 2));
        rows.push(SummaryRow {
            idx: cells[0].parse().map_err(|_| bad(i + 2))?,
            seed: cells[1].parse().map_err(|_| bad(i + 2))?,
            member: cells[2].parse().map_err(|_| bad(i + 2))?,
            final_losses: cells[3..3 + m].iter().map(|c| f(c)).collect::<Result<_>>()?,
            criticality: f(cells[3 + m + 1])?,
            learned_steps: match cells[3 + m + 2] {
                "" => None,
                c => Some(c.parse().map_err(|_| bad(i + 2))?),
            },
        });
    }
    Ok((m, rows))
}
