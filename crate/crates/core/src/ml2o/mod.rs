//! Learned multi-objective optimizer.
//!
//! A per-objective LSTM reads each objective's gradient, a shared LSTM mixes
//! their hidden states, and a linear head emits the update direction `g_k`.
//! The learner moves by `x_{k+1} = x_k - alpha_k g_k`.

mod checkpoint;
mod meta;
mod network;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minnorm::GradientMatrix;
use crate::numerics::norm;
use crate::optimizers::{sample_size, SampleSchedule, StepInfo, StepSchedule};
use crate::problems::MooProblem;
use crate::rng::SimRng;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, CHECKPOINT_VERSION};
pub use meta::{
    evaluate_meta_loss, meta_train, replay_window_loss, unroll_window, MetaTraceRow, MetaTrainConfig, WindowOutcome,
};
pub use network::{
    lstm_cell, ml2o_direction, preprocess_gradient, LstmCellParams, Ml2oParams, Ml2oState, PreprocessedGradient,
    DEFAULT_SCALE, INPUT_CHANNELS,
};

/// How the learner's gradient rows are obtained at each step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GradientSource {
    Exact,
    /// One stochastic draw.
    Single,
    /// Average of `N_k` draws.
    Dynamic { base: usize, rate: f64 },
}

impl GradientSource {
    pub fn validate(&self) -> Result<()> {
        match self {
            GradientSource::Dynamic { base, rate } => SampleSchedule { base: *base, rate: *rate }.validate(),
            _ => Ok(()),
        }
    }

    /// Gradient rows at `x` for iteration `k`, with the sample count used.
    pub fn draw(&self, problem: &dyn MooProblem, x: &[f64], k: usize, rng: &mut SimRng) -> Result<(GradientMatrix, Option<usize>)> {
        match self {
            GradientSource::Exact => Ok((problem.full_jacobian(x)?, None)),
            GradientSource::Single => Ok((problem.sample_gradient(x, rng)?, Some(1))),
            GradientSource::Dynamic { base, rate } => {
                let n = sample_size(k, &SampleSchedule { base: *base, rate: *rate });
                Ok((problem.sample_gradient_mean(x, n, rng)?, Some(n)))
            }
        }
    }
}

/// Iterate and recurrent state of a learned-optimizer run.
#[derive(Clone, Debug, PartialEq)]
pub struct Ml2oIterate {
    pub x: Vec<f64>,
    pub k: usize,
    pub state: Ml2oState,
}

impl Ml2oIterate {
    pub fn new(x: Vec<f64>, params: &Ml2oParams) -> Self {
        let state = Ml2oState::zeros(params, x.len());
        Ml2oIterate { x, k: 0, state }
    }
}

/// `x <- x - alpha_k g_k`, with `g_k` from the gradient rows `y`.
pub fn ml2o_apply(it: &mut Ml2oIterate, y: &GradientMatrix, params: &Ml2oParams, alpha: f64) -> Result<Vec<f64>> {
    let (g, next) = ml2o_direction(y, &it.state, params)?;
    for (xi, gi) in it.x.iter_mut().zip(&g) {
        *xi -= alpha * gi;
    }
    it.state = next;
    it.k += 1;
    if it.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("learned iterate after step {}", it.k)));
    }
    Ok(g)
}

pub fn ml2o_step(
    problem: &dyn MooProblem,
    it: &mut Ml2oIterate,
    params: &Ml2oParams,
    schedule: &StepSchedule,
    source: &GradientSource,
    rng: &mut SimRng,
) -> Result<StepInfo> {
    let k = it.k + 1;
    let alpha = schedule.alpha(k);
    let (y, samples) = source.draw(problem, &it.x, k, rng)?;
    let g = ml2o_apply(it, &y, params, alpha)?;
    Ok(StepInfo {
        alpha,
        direction_norm: norm(&g),
        sample_size: samples,
        solver_converged: true,
    })
}

/// `max_i (f_curr_i - f_prev_i)`.
pub fn meta_loss(f_curr: &[f64], f_prev: &[f64]) -> Result<f64> {
    if f_curr.is_empty() || f_curr.len() != f_prev.len() {
        return Err(Error::shape("meta_loss", format!("{} vs {} objectives", f_curr.len(), f_prev.len())));
    }
    Ok(f_curr.iter().zip(f_prev).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use crate::problems::make_quadratic_pair;
    use crate::rng::seeded;

    #[test]
    fn meta_loss_examples() {
        assert!((meta_loss(&[1.0, 2.0], &[1.5, 1.8]).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(meta_loss(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert_eq!(meta_loss(&[1.0], &[3.0]).unwrap(), -2.0);
        assert!(meta_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_step_advances_state_only() {
        let p = make_quadratic_pair(3, 1, 0.0).unwrap();
        let params = Ml2oParams::random(2, 3, &mut seeded(2)).unwrap();
        let x0 = vec![0.5, -0.2, 0.1];
        let mut it = Ml2oIterate::new(x0.clone(), &params);
        let before = it.state.clone();
        let sched = StepSchedule::Constant { alpha: 0.0 };
        ml2o_step(&p, &mut it, &params, &sched, &GradientSource::Exact, &mut seeded(0)).unwrap();
        assert_eq!(it.x, x0);
        assert_ne!(it.state, before);
        assert_eq!(it.k, 1);
    }

    #[test]
    fn zero_head_keeps_iterate() {
        let p = make_quadratic_pair(4, 1, 0.1).unwrap();
        let mut params = Ml2oParams::random(2, 3, &mut seeded(5)).unwrap();
        params.set("head.w", Tensor::zeros(&[6, 1])).unwrap();
        params.set("head.b", Tensor::zeros(&[1, 1])).unwrap();
        let x0 = vec![0.5, -0.2, 0.1, 1.0];
        let mut it = Ml2oIterate::new(x0.clone(), &params);
        let sched = StepSchedule::Constant { alpha: 0.3 };
        let info = ml2o_step(&p, &mut it, &params, &sched, &GradientSource::Single, &mut seeded(0)).unwrap();
        assert_eq!(it.x, x0);
        assert_eq!(info.direction_norm, 0.0);
    }
}
