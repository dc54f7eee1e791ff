//! Truncated backpropagation through time for the learned optimizer.
//!
//! A run of `K` learner steps is split into `K / K_bar` periods. Each period
//! is unrolled on a fresh tape, the mean of `max_i (f_i(x_k) - f_i(x_{k-1}))`
//! over the period is differentiated w.r.t. the network weights, and a plain
//! gradient step is taken. Learner gradients fed to the network are
//! constants. Losses enter the tape through their first-order expansion at
//! the current iterate, which has the exact value and exact derivative.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::network::{bind, encode_inputs, forward, Ml2oParams, Ml2oState, StateVars};
use super::{meta_loss, GradientSource, Ml2oIterate};
use crate::error::{Error, Result};
use crate::minnorm::GradientMatrix;
use crate::numerics::{dot, norm, Tape, Tensor, Var};
use crate::optimizers::StepSchedule;
use crate::problems::MooProblem;
use crate::rng::{stream, Purpose, SimRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaTrainConfig {
    /// Learner steps per run (`K`).
    pub horizon: usize,
    /// Steps per period (`K_bar`); must divide `horizon`.
    pub truncation: usize,
    pub meta_lr: f64,
    pub epochs: usize,
    /// Learner step sizes.
    pub step: StepSchedule,
    pub source: GradientSource,
    pub seed: u64,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        MetaTrainConfig {
            horizon: 100,
            truncation: 20,
            meta_lr: 0.0005,
            epochs: 200,
            step: StepSchedule::Constant { alpha: 0.01 },
            source: GradientSource::Exact,
            seed: 0,
        }
    }
}

impl MetaTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.truncation == 0 || self.horizon == 0 || self.horizon % self.truncation != 0 {
            errs.push(format!(
                "truncation {} must be positive and divide horizon {}",
                self.truncation, self.horizon
            ));
        }
        if !(self.meta_lr >= 0.0) || !self.meta_lr.is_finite() {
            errs.push(format!("meta_lr must be finite and non-negative, got {}", self.meta_lr));
        }
        if let Err(e) = self.step.validate() {
            errs.push(e.to_string());
        }
        if let Err(e) = self.source.validate() {
            errs.push(e.to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn periods(&self) -> usize {
        self.horizon / self.truncation
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetaTraceRow {
    pub epoch: usize,
    pub period: usize,
    pub meta_loss: f64,
    pub grad_norm: f64,
}

/// Result of one unrolled period.
#[derive(Clone, Debug)]
pub struct WindowOutcome {
    /// Mean meta-loss over the period, from exact losses.
    pub loss: f64,
    pub x: Vec<f64>,
    pub f: Vec<f64>,
    pub state: Ml2oState,
    /// Gradient rows fed to the network at each step.
    pub inputs: Vec<GradientMatrix>,
    pub direction_norm: f64,
}

fn diverged(loss: f64, x: &[f64], g: &[f64]) -> Error {
    Error::Diverged {
        epoch: 0,
        period: 0,
        loss,
        iterate_norm: norm(x),
        direction_norm: norm(g),
    }
}

/// Unrolls `len` learner steps from `(x0, state)` and accumulates the
/// gradient of the mean meta-loss into `params`' gradient buffers.
/// Iteration indices run from `k0 + 1` to `k0 + len`.
#[allow(clippy::too_many_arguments)]
pub fn unroll_window(
    problem: &dyn MooProblem,
    params: &mut Ml2oParams,
    state: &Ml2oState,
    x0: &[f64],
    f0: &[f64],
    k0: usize,
    len: usize,
    step: &StepSchedule,
    source: &GradientSource,
    rng: &mut SimRng,
) -> Result<WindowOutcome> {
    if len == 0 {
        return Err(Error::invalid("window length must be at least 1"));
    }
    let n = x0.len();
    let m = problem.objectives();
    if f0.len() != m {
        return Err(Error::shape("unroll_window", format!("{} initial losses for {m} objectives", f0.len())));
    }
    let mut tape = Tape::new();
    let net = bind(&mut tape, params, true)?;
    let ones = tape.constant(Tensor::filled(&[n, 1], 1.0));
    let mut sv = StateVars::constants(&mut tape, state);
    let mut x_var = tape.constant(Tensor::matrix(n, 1, x0.to_vec())?);
    let mut x_val = x0.to_vec();
    let mut f_prev_vals = f0.to_vec();
    let mut f_prev_vars: Vec<Var> = f0.iter().map(|v| tape.constant(Tensor::scalar(*v))).collect();
    let mut total: Option<Var> = None;
    let mut exact_total = 0.0;
    let mut inputs = Vec::with_capacity(len);
    let mut cached: Option<GradientMatrix> = None;
    let mut direction_norm = 0.0;

    for t in 0..len {
        let k = k0 + t + 1;
        let alpha = step.alpha(k);
        let y = match cached.take() {
            Some(j) => j,
            None => source.draw(problem, &x_val, k, rng)?.0,
        };
        let encoded = encode_inputs(&mut tape, &y)?;
        inputs.push(y);
        let (g, next) = forward(&mut tape, &net, ones, &encoded, &sv)?;
        sv = next;
        let g_val = tape.value(g).data().to_vec();
        direction_norm = norm(&g_val);
        let delta = tape.scale(g, -alpha)?;
        x_var = tape.add(x_var, delta)?;
        x_val = tape.value(x_var).data().to_vec();
        if x_val.iter().any(|v| !v.is_finite()) {
            return Err(diverged(f64::NAN, &x_val, &g_val));
        }

        let f_vals = problem.eval(&x_val)?;
        let jac = problem.full_jacobian(&x_val)?;
        let mut diffs = Vec::with_capacity(m);
        let mut f_vars = Vec::with_capacity(m);
        for i in 0..m {
            let gi = tape.constant(Tensor::matrix(n, 1, jac.row(i).to_vec())?);
            let prod = tape.mul(gi, x_var)?;
            let lin = tape.sum(prod)?;
            let offset = tape.constant(Tensor::scalar(f_vals[i] - dot(jac.row(i), &x_val)));
            let fi = tape.add(lin, offset)?;
            diffs.push(tape.sub(fi, f_prev_vars[i])?);
            f_vars.push(fi);
        }
        let lk = tape.max(&diffs)?;
        total = Some(match total {
            None => lk,
            Some(acc) => tape.add(acc, lk)?,
        });
        exact_total += meta_loss(&f_vals, &f_prev_vals)?;
        if matches!(source, GradientSource::Exact) {
            cached = Some(jac);
        }
        f_prev_vars = f_vars;
        f_prev_vals = f_vals;
    }

    let total = total.expect("len >= 1");
    let mean = tape.scale(total, 1.0 / len as f64)?;
    let loss = exact_total / len as f64;
    if !loss.is_finite() || !tape.value(mean).is_finite() {
        return Err(diverged(loss, &x_val, &[direction_norm]));
    }
    tape.backward(mean, params.store_mut())?;
    Ok(WindowOutcome {
        loss,
        x: x_val,
        f: f_prev_vals,
        state: sv.values(&tape),
        inputs,
        direction_norm,
    })
}

/// Mean meta-loss of a period replayed with fixed gradient inputs. Used as
/// the finite-difference reference for [`unroll_window`].
pub fn replay_window_loss(
    problem: &dyn MooProblem,
    params: &Ml2oParams,
    state: &Ml2oState,
    x0: &[f64],
    k0: usize,
    inputs: &[GradientMatrix],
    step: &StepSchedule,
) -> Result<f64> {
    let mut it = Ml2oIterate {
        x: x0.to_vec(),
        k: k0,
        state: state.clone(),
    };
    let mut f_prev = problem.eval(x0)?;
    let mut total = 0.0;
    for y in inputs {
        let alpha = step.alpha(it.k + 1);
        super::ml2o_apply(&mut it, y, params, alpha)?;
        let f = problem.eval(&it.x)?;
        total += meta_loss(&f, &f_prev)?;
        f_prev = f;
    }
    Ok(total / inputs.len() as f64)
}

/// Mean meta-loss of a `horizon`-step inference run from `x0`.
pub fn evaluate_meta_loss(
    problem: &dyn MooProblem,
    params: &Ml2oParams,
    x0: &[f64],
    horizon: usize,
    step: &StepSchedule,
    source: &GradientSource,
    rng: &mut SimRng,
) -> Result<f64> {
    let mut it = Ml2oIterate::new(x0.to_vec(), params);
    let mut f_prev = problem.eval(x0)?;
    let mut total = 0.0;
    for _ in 0..horizon {
        super::ml2o_step(problem, &mut it, params, step, source, rng)?;
        let f = problem.eval(&it.x)?;
        total += meta_loss(&f, &f_prev)?;
        f_prev = f;
    }
    Ok(total / horizon.max(1) as f64)
}

/// Problem generator for meta-training; called once per epoch.
pub type TaskSampler<'a> = dyn FnMut(usize, &mut SimRng) -> Result<Arc<dyn MooProblem>> + 'a;

/// Meta-trains `params` for epochs `start_epoch..cfg.epochs`.
///
/// Epoch `e` draws everything from its own stream, so training `0..b` in one
/// call gives the same weights as `0..a` followed by `a..b`.
pub fn meta_train(
    sampler: &mut TaskSampler<'_>,
    params: &mut Ml2oParams,
    cfg: &MetaTrainConfig,
    start_epoch: usize,
) -> Result<Vec<MetaTraceRow>> {
    cfg.validate()?;
    let mut trace = Vec::with_capacity(cfg.epochs.saturating_sub(start_epoch) * cfg.periods());
    for epoch in start_epoch..cfg.epochs {
        let mut rng = stream(cfg.seed, epoch as u64, Purpose::Meta);
        let problem = sampler(epoch, &mut rng)?;
        if problem.objectives() != params.objectives() {
            return Err(Error::shape(
                "meta_train",
                format!("{} objectives for a {}-objective optimizer", problem.objectives(), params.objectives()),
            ));
        }
        let mut x = problem.initial_point(&mut rng);
        let mut f = problem.eval(&x)?;
        let mut state = Ml2oState::zeros(params, x.len());
        for period in 0..cfg.periods() {
            params.store_mut().zero_grads();
            let out = unroll_window(
                problem.as_ref(),
                params,
                &state,
                &x,
                &f,
                period * cfg.truncation,
                cfg.truncation,
                &cfg.step,
                &cfg.source,
                &mut rng,
            )
            .map_err(|e| match e {
                Error::Diverged {
                    loss,
                    iterate_norm,
                    direction_norm,
                    ..
                } => Error::Diverged {
                    epoch,
                    period,
                    loss,
                    iterate_norm,
                    direction_norm,
                },
                other => other,
            })?;
            let grad_norm = params.store().grad_norm();
            if !grad_norm.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    period,
                    loss: out.loss,
                    iterate_norm: norm(&out.x),
                    direction_norm: out.direction_norm,
                });
            }
            params.store_mut().descend(cfg.meta_lr);
            params.store_mut().zero_grads();
            trace.push(MetaTraceRow {
                epoch,
                period,
                meta_loss: out.loss,
                grad_norm,
            });
            x = out.x;
            f = out.f;
            state = out.state;
        }
    }
    Ok(trace)
}
