//! Guarded learned optimizer.
//!
//! Each step builds a fallback candidate from a convergent method and a
//! learned candidate from the LSTM, both from the same base point `z_k`
//! and the same gradient rows, and keeps whichever has the smaller
//! worst-case loss increase. Ties go to the fallback.

use crate::error::{Error, Result};
use crate::minnorm::{solve_min_norm_default, GradientMatrix};
use crate::ml2o::{ml2o_direction, Ml2oParams, Ml2oState};
use crate::numerics::norm;
use crate::optimizers::{dssmg_direction, SampleSchedule, StepSchedule};
use crate::problems::MooProblem;
use crate::record::{RunRecord, TraceRow};
use crate::rng::SimRng;

pub use crate::record::GuardChoice;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuardDecision {
    pub chosen: GuardChoice,
    /// `max_i f_i(x_{k+1}) - f_i(z_k)`
    pub fallback_delta: f64,
    /// `max_i f_i(u_{k+1}) - f_i(z_k)`
    pub learned_delta: f64,
}

fn max_delta(f: &[f64], base: &[f64]) -> Result<f64> {
    if f.len() != base.len() || f.is_empty() {
        return Err(Error::shape("guard", format!("{} losses against {} base losses", f.len(), base.len())));
    }
    Ok(f.iter().zip(base).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max))
}

/// Decision from already evaluated losses. A non-finite learned delta
/// always loses; a non-finite fallback delta is an error.
pub fn guard_decide(f_z: &[f64], f_fallback: &[f64], f_learned: &[f64]) -> Result<GuardDecision> {
    let fallback_delta = max_delta(f_fallback, f_z)?;
    let mut learned_delta = max_delta(f_learned, f_z)?;
    if f_learned.iter().any(|v| !v.is_finite()) {
        learned_delta = f64::INFINITY;
    }
    if !fallback_delta.is_finite() {
        return Err(Error::NonFinite("fallback candidate losses".into()));
    }
    let chosen = if !(fallback_delta > learned_delta) {
        GuardChoice::Fallback
    } else {
        GuardChoice::Learned
    };
    Ok(GuardDecision {
        chosen,
        fallback_delta,
        learned_delta,
    })
}

/// Evaluates `z` and both candidates and returns the decision with the
/// chosen point.
pub fn guard_select(
    z: &[f64],
    fallback: &[f64],
    learned: &[f64],
    evaluator: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<(GuardDecision, Vec<f64>)> {
    let f_z = evaluator(z)?;
    let f_x = evaluator(fallback)?;
    let f_u = evaluator(learned)?;
    let d = guard_decide(&f_z, &f_x, &f_u)?;
    let next = match d.chosen {
        GuardChoice::Fallback => fallback.to_vec(),
        GuardChoice::Learned => learned.to_vec(),
    };
    Ok((d, next))
}

/// Iterate, learned-optimizer state and decision history of a guarded run.
#[derive(Clone, Debug)]
pub struct GuardedRunState {
    pub z: Vec<f64>,
    pub k: usize,
    pub learner: Ml2oState,
    pub decisions: Vec<GuardDecision>,
    /// Exact losses at `z`, cached when the guard compares exact losses.
    f_z: Option<Vec<f64>>,
}

impl GuardedRunState {
    pub fn new(z: Vec<f64>, params: &Ml2oParams) -> Self {
        let learner = Ml2oState::zeros(params, z.len());
        GuardedRunState {
            z,
            k: 0,
            learner,
            decisions: Vec::new(),
            f_z: None,
        }
    }
}

/// Where the guard's fallback comes from.
enum Fallback<'a> {
    Dssmg { samples: &'a SampleSchedule, rng: &'a mut SimRng },
    Mgda,
}

fn step_along(z: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    let mut x = z.to_vec();
    for (xi, di) in x.iter_mut().zip(d) {
        *xi += alpha * di;
    }
    x
}

fn guarded_step(
    problem: &dyn MooProblem,
    params: &Ml2oParams,
    st: &mut GuardedRunState,
    schedule: &StepSchedule,
    fallback: &mut Fallback<'_>,
    guard_rng: Option<&mut SimRng>,
) -> Result<TraceRow> {
    let k = st.k + 1;
    let alpha = schedule.alpha(k);
    let (y, sol, samples): (GradientMatrix, _, _) = match fallback {
        Fallback::Dssmg { samples, rng } => {
            let (y, sol, n) = dssmg_direction(problem, &st.z, k, samples, rng)?;
            (y, sol, Some(n))
        }
        Fallback::Mgda => {
            let y = problem.full_jacobian(&st.z)?;
            let sol = solve_min_norm_default(&y)?;
            (y, sol, None)
        }
    };
    let x_cand = step_along(&st.z, alpha, &sol.descent_direction);
    let (g, next_state) = ml2o_direction(&y, &st.learner, params)?;
    st.learner = next_state;
    let u_cand: Vec<f64> = st.z.iter().zip(&g).map(|(z, gi)| z - alpha * gi).collect();
    let u_finite = u_cand.iter().all(|v| v.is_finite());

    let batch = guard_rng.and_then(|r| problem.draw_guard_batch(r));
    let (f_z, f_x, f_u) = match &batch {
        None => {
            let f_z = match st.f_z.take() {
                Some(f) => f,
                None => problem.eval(&st.z)?,
            };
            let f_x = problem.eval(&x_cand)?;
            let f_u = if u_finite { problem.eval(&u_cand)? } else { vec![f64::INFINITY; f_x.len()] };
            (f_z, f_x, f_u)
        }
        Some(b) => {
            let f_z = problem.eval_batch(&st.z, Some(b))?;
            let f_x = problem.eval_batch(&x_cand, Some(b))?;
            let f_u = if u_finite { problem.eval_batch(&u_cand, Some(b))? } else { vec![f64::INFINITY; f_x.len()] };
            (f_z, f_x, f_u)
        }
    };
    let d = guard_decide(&f_z, &f_x, &f_u)?;
    let (z_next, f_next) = match d.chosen {
        GuardChoice::Fallback => (x_cand, f_x),
        GuardChoice::Learned => (u_cand, f_u),
    };
    let realized = max_delta(&f_next, &f_z)?;
    if realized > d.fallback_delta {
        return Err(Error::GuardViolation {
            step: k,
            chosen: realized,
            fallback: d.fallback_delta,
        });
    }
    let losses = match batch {
        None => {
            st.f_z = Some(f_next.clone());
            f_next
        }
        Some(_) => problem.eval(&z_next)?,
    };
    st.z = z_next;
    st.k = k;
    st.decisions.push(d);
    Ok(TraceRow {
        k,
        losses,
        direction_norm: norm(&sol.descent_direction),
        alpha,
        sample_size: samples,
        guard: Some(d.chosen),
        criticality: None,
        iterate: None,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_loop(
    problem: &dyn MooProblem,
    params: &Ml2oParams,
    z0: Vec<f64>,
    schedule: &StepSchedule,
    steps: usize,
    mut fallback: Fallback<'_>,
    mut guard_rng: Option<&mut SimRng>,
    record_iterates: bool,
) -> Result<(RunRecord, GuardedRunState)> {
    if params.objectives() != problem.objectives() {
        return Err(Error::shape(
            "gml2o",
            format!("{}-objective optimizer on a {}-objective problem", params.objectives(), problem.objectives()),
        ));
    }
    let mut st = GuardedRunState::new(z0, params);
    let f0 = problem.eval(&st.z)?;
    let mut rec = RunRecord::default();
    rec.rows.push(TraceRow::initial(f0.clone(), record_iterates.then(|| st.z.clone())));
    st.f_z = Some(f0);
    for _ in 0..steps {
        let mut row = guarded_step(problem, params, &mut st, schedule, &mut fallback, guard_rng.as_deref_mut())?;
        if record_iterates {
            row.iterate = Some(st.z.clone());
        }
        rec.rows.push(row);
    }
    rec.final_x = st.z.clone();
    Ok((rec, st))
}

/// Guarded run with the dynamic-sampling fallback.
///
/// `noise_rng` drives the gradient samples exactly as a plain dynamic-sampling
/// run would; `guard_rng` draws guard batches on problems that use them.
/// Row `direction_norm` is the norm of the min-norm direction at `z_{k-1}`.
#[allow(clippy::too_many_arguments)]
pub fn gml2o_run(
    problem: &dyn MooProblem,
    params: &Ml2oParams,
    x0: Vec<f64>,
    schedule: &StepSchedule,
    samples: &SampleSchedule,
    steps: usize,
    noise_rng: &mut SimRng,
    guard_rng: &mut SimRng,
    record_iterates: bool,
) -> Result<(RunRecord, Vec<GuardDecision>)> {
    samples.validate()?;
    let fallback = Fallback::Dssmg { samples, rng: noise_rng };
    let (rec, st) = run_loop(problem, params, x0, schedule, steps, fallback, Some(guard_rng), record_iterates)?;
    Ok((rec, st.decisions))
}

/// Guarded run with exact gradients and the full-gradient min-norm fallback.
/// Losses are always compared exactly.
pub fn gml2o_deterministic_run(
    problem: &dyn MooProblem,
    params: &Ml2oParams,
    x0: Vec<f64>,
    alpha: f64,
    steps: usize,
    record_iterates: bool,
) -> Result<(RunRecord, Vec<GuardDecision>)> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("step size must be finite and non-negative, got {alpha}")));
    }
    let schedule = StepSchedule::Constant { alpha };
    let (rec, st) = run_loop(problem, params, x0, &schedule, steps, Fallback::Mgda, None, record_iterates)?;
    Ok((rec, st.decisions))
}
