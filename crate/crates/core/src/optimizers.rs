//! Hand-designed multi-objective optimizers and scalarized baselines.
//!
//! Every step mutates an [`OptimizerState`] in place and returns a
//! [`StepInfo`]. The iteration index used for schedules is `state.k + 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minnorm::{project_simplex, solve_min_norm_default, GradientMatrix, MinNormSolution};
use crate::numerics::norm;
use crate::problems::MooProblem;
use crate::rng::SimRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    Constant { alpha: f64 },
    /// `1 / k`
    Harmonic,
    /// `scale / k`
    ScaledHarmonic { scale: f64 },
}

impl StepSchedule {
    pub fn alpha(&self, k: usize) -> f64 {
        let k = k.max(1) as f64;
        match self {
            StepSchedule::Constant { alpha } => *alpha,
            StepSchedule::Harmonic => 1.0 / k,
            StepSchedule::ScaledHarmonic { scale } => scale / k,
        }
    }

    /// Step sizes must be positive; a zero constant is accepted only
    /// through [`StepSchedule::Constant`] built in code, never from config.
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            StepSchedule::Constant { alpha } => *alpha > 0.0 && alpha.is_finite(),
            StepSchedule::Harmonic => true,
            StepSchedule::ScaledHarmonic { scale } => *scale > 0.0 && scale.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("step schedule {self:?} must give positive step sizes")))
        }
    }
}

/// Dynamic sample size `N_k = max(N_B, ceil(k^q))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSchedule {
    pub base: usize,
    pub rate: f64,
}

impl SampleSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.base == 0 || !(self.rate > 0.0) || !self.rate.is_finite() {
            return Err(Error::invalid(format!(
                "sample schedule needs base >= 1 and rate > 0, got base {} rate {}",
                self.base, self.rate
            )));
        }
        Ok(())
    }
}

pub fn sample_size(k: usize, schedule: &SampleSchedule) -> usize {
    let grown = (k.max(1) as f64).powf(schedule.rate);
    // k^q that is an integer up to rounding must not be bumped by ceil
    let nearest = grown.round();
    let rounded = if (grown - nearest).abs() <= 1e-9 * nearest.max(1.0) { nearest } else { grown.ceil() };
    let rounded = if rounded >= usize::MAX as f64 { usize::MAX } else { rounded as usize };
    schedule.base.max(rounded)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarRule {
    Sgd {
        #[serde(default = "default_scalar_lr")]
        lr: f64,
    },
    Momentum {
        #[serde(default = "default_scalar_lr")]
        lr: f64,
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
    Adam {
        #[serde(default = "default_scalar_lr")]
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Rmsprop {
        #[serde(default = "default_scalar_lr")]
        lr: f64,
        #[serde(default = "default_rms_rho")]
        rho: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Adadelta {
        #[serde(default = "default_adadelta_lr")]
        lr: f64,
        #[serde(default = "default_adadelta_rho")]
        rho: f64,
        #[serde(default = "default_adadelta_eps")]
        eps: f64,
    },
}

fn default_scalar_lr() -> f64 {
    1e-4
}
fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_rms_rho() -> f64 {
    0.99
}
fn default_adadelta_lr() -> f64 {
    1.0
}
fn default_adadelta_rho() -> f64 {
    0.9
}
fn default_adadelta_eps() -> f64 {
    1e-6
}

impl ScalarRule {
    /// Builds a rule with default hyperparameters from its name.
    pub fn from_name(name: &str) -> Result<Self> {
        serde_json::from_value(serde_json::json!({ "rule": name }))
            .map_err(|_| Error::NotFound(format!("scalarized rule `{name}`")))
    }
}

/// Hyperparameters of the momentum-tracking variant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingParams {
    pub beta: f64,
    pub gamma: f64,
    #[serde(default)]
    pub rho: f64,
    /// Half-width of the box the tracking variables are clipped to.
    #[serde(default = "default_tracking_bound")]
    pub bound: f64,
}

fn default_tracking_bound() -> f64 {
    1e3
}

#[derive(Clone, Debug, PartialEq)]
pub enum Memory {
    None,
    Tracking { y: Vec<Vec<f64>>, lambda: Vec<f64> },
    Blend { lambda: Vec<f64> },
    Scalar { first: Vec<f64>, second: Vec<f64>, delta: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub x: Vec<f64>,
    /// Completed steps.
    pub k: usize,
    pub memory: Memory,
}

impl OptimizerState {
    pub fn new(x: Vec<f64>) -> Self {
        OptimizerState {
            x,
            k: 0,
            memory: Memory::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub alpha: f64,
    pub direction_norm: f64,
    pub sample_size: Option<usize>,
    pub solver_converged: bool,
}

fn move_along(x: &mut [f64], alpha: f64, direction: &[f64]) {
    for (xi, di) in x.iter_mut().zip(direction) {
        *xi += alpha * di;
    }
}

fn finish(state: &mut OptimizerState, sol: &MinNormSolution, alpha: f64, samples: Option<usize>) -> Result<StepInfo> {
    move_along(&mut state.x, alpha, &sol.descent_direction);
    state.k += 1;
    if state.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("iterate after step {}", state.k)));
    }
    Ok(StepInfo {
        alpha,
        direction_norm: norm(&sol.descent_direction),
        sample_size: samples,
        solver_converged: sol.converged,
    })
}

/// Full-gradient multiple gradient descent.
pub fn mgda_step(problem: &dyn MooProblem, state: &mut OptimizerState, schedule: &StepSchedule) -> Result<StepInfo> {
    let alpha = schedule.alpha(state.k + 1);
    let jac = problem.full_jacobian(&state.x)?;
    let sol = solve_min_norm_default(&jac)?;
    finish(state, &sol, alpha, None)
}

/// MGDA applied to a single stochastic gradient draw.
pub fn smg_step(
    problem: &dyn MooProblem,
    state: &mut OptimizerState,
    schedule: &StepSchedule,
    rng: &mut SimRng,
) -> Result<StepInfo> {
    let alpha = schedule.alpha(state.k + 1);
    let w = problem.sample_gradient(&state.x, rng)?;
    let sol = solve_min_norm_default(&w)?;
    finish(state, &sol, alpha, Some(1))
}

/// Dynamic-sampling stochastic multi-gradient step: average `N_k` draws,
/// then take the min-norm direction of the averages.
pub fn dssmg_step(
    problem: &dyn MooProblem,
    state: &mut OptimizerState,
    schedule: &StepSchedule,
    samples: &SampleSchedule,
    rng: &mut SimRng,
) -> Result<StepInfo> {
    let k = state.k + 1;
    let alpha = schedule.alpha(k);
    let n_k = sample_size(k, samples);
    let y = problem.sample_gradient_mean(&state.x, n_k, rng)?;
    let sol = solve_min_norm_default(&y)?;
    finish(state, &sol, alpha, Some(n_k))
}

/// Averaged gradients `Y_k` and the min-norm direction for iteration `k`.
pub fn dssmg_direction(
    problem: &dyn MooProblem,
    x: &[f64],
    k: usize,
    samples: &SampleSchedule,
    rng: &mut SimRng,
) -> Result<(GradientMatrix, MinNormSolution, usize)> {
    let n_k = sample_size(k, samples);
    let y = problem.sample_gradient_mean(x, n_k, rng)?;
    let sol = solve_min_norm_default(&y)?;
    Ok((y, sol, n_k))
}

/// Momentum-tracking variant: per-objective tracking variables and a
/// projected-gradient update of the weights.
pub fn moco_like_step(
    problem: &dyn MooProblem,
    state: &mut OptimizerState,
    params: &TrackingParams,
    schedule: &StepSchedule,
    rng: &mut SimRng,
) -> Result<StepInfo> {
    let m = problem.objectives();
    let n = problem.dim();
    if !matches!(state.memory, Memory::Tracking { .. }) {
        state.memory = Memory::Tracking {
            y: vec![vec![0.0; n]; m],
            lambda: vec![1.0 / m as f64; m],
        };
    }
    let alpha = schedule.alpha(state.k + 1);
    let g = problem.sample_gradient(&state.x, rng)?;
    let Memory::Tracking { y, lambda } = &mut state.memory else {
        unreachable!()
    };
    let b = params.bound;
    for (i, yi) in y.iter_mut().enumerate() {
        for (v, gv) in yi.iter_mut().zip(g.row(i)) {
            *v = (params.beta * gv + (1.0 - params.beta) * *v).clamp(-b, b);
        }
    }
    let ym = GradientMatrix::from_rows(y)?;
    let gram = ym.gram();
    let mut moved = lambda.clone();
    for i in 0..m {
        let mut s = params.rho * lambda[i];
        for j in 0..m {
            s += gram[i * m + j] * lambda[j];
        }
        moved[i] = lambda[i] - params.gamma * s;
    }
    *lambda = project_simplex(&moved);
    let d = ym.combine(lambda);
    for (xi, di) in state.x.iter_mut().zip(&d) {
        *xi -= alpha * di;
    }
    state.k += 1;
    Ok(StepInfo {
        alpha,
        direction_norm: norm(&d),
        sample_size: Some(1),
        solver_converged: true,
    })
}

/// Composite-weights variant: exponential blend of past and fresh min-norm weights.
pub fn composite_weight_step(
    problem: &dyn MooProblem,
    state: &mut OptimizerState,
    beta: f64,
    schedule: &StepSchedule,
    rng: &mut SimRng,
) -> Result<StepInfo> {
    let m = problem.objectives();
    if !matches!(state.memory, Memory::Blend { .. }) {
        state.memory = Memory::Blend {
            lambda: vec![1.0 / m as f64; m],
        };
    }
    let alpha = schedule.alpha(state.k + 1);
    let w = problem.sample_gradient(&state.x, rng)?;
    let sol = solve_min_norm_default(&w)?;
    let Memory::Blend { lambda } = &mut state.memory else {
        unreachable!()
    };
    for (l, fresh) in lambda.iter_mut().zip(sol.weights.as_slice()) {
        *l = beta * *l + (1.0 - beta) * fresh;
    }
    let d = w.combine(lambda);
    for (xi, di) in state.x.iter_mut().zip(&d) {
        *xi -= alpha * di;
    }
    state.k += 1;
    Ok(StepInfo {
        alpha,
        direction_norm: norm(&d),
        sample_size: Some(1),
        solver_converged: sol.converged,
    })
}

/// Single-objective update on the equally weighted loss `(1/M) sum_i f_i`.
pub fn scalarized_step(
    problem: &dyn MooProblem,
    state: &mut OptimizerState,
    rule: &ScalarRule,
    rng: &mut SimRng,
) -> Result<StepInfo> {
    let n = problem.dim();
    if !matches!(state.memory, Memory::Scalar { .. }) {
        state.memory = Memory::Scalar {
            first: vec![0.0; n],
            second: vec![0.0; n],
            delta: vec![0.0; n],
        };
    }
    let w = problem.sample_gradient(&state.x, rng)?;
    let m = w.rows();
    let g = w.combine(&vec![1.0 / m as f64; m]);
    let k = state.k + 1;
    let Memory::Scalar { first, second, delta } = &mut state.memory else {
        unreachable!()
    };
    let mut step = vec![0.0; n];
    let lr = match *rule {
        ScalarRule::Sgd { lr } => {
            step.copy_from_slice(&g);
            lr
        }
        ScalarRule::Momentum { lr, momentum } => {
            for ((s, buf), gi) in step.iter_mut().zip(first.iter_mut()).zip(&g) {
                *buf = momentum * *buf + gi;
                *s = *buf;
            }
            lr
        }
        ScalarRule::Adam { lr, beta1, beta2, eps } => {
            let c1 = 1.0 - beta1.powi(k as i32);
            let c2 = 1.0 - beta2.powi(k as i32);
            for i in 0..n {
                first[i] = beta1 * first[i] + (1.0 - beta1) * g[i];
                second[i] = beta2 * second[i] + (1.0 - beta2) * g[i] * g[i];
                step[i] = (first[i] / c1) / ((second[i] / c2).sqrt() + eps);
            }
            lr
        }
        ScalarRule::Rmsprop { lr, rho, eps } => {
            for i in 0..n {
                second[i] = rho * second[i] + (1.0 - rho) * g[i] * g[i];
                step[i] = g[i] / (second[i].sqrt() + eps);
            }
            lr
        }
        ScalarRule::Adadelta { lr, rho, eps } => {
            for i in 0..n {
                second[i] = rho * second[i] + (1.0 - rho) * g[i] * g[i];
                let upd = (delta[i] + eps).sqrt() / (second[i] + eps).sqrt() * g[i];
                delta[i] = rho * delta[i] + (1.0 - rho) * upd * upd;
                step[i] = upd;
            }
            lr
        }
    };
    for (xi, si) in state.x.iter_mut().zip(&step) {
        *xi -= lr * si;
    }
    state.k += 1;
    Ok(StepInfo {
        alpha: lr,
        direction_norm: norm(&step),
        sample_size: Some(1),
        solver_converged: true,
    })
}
