//! Differentiable multi-objective problems.
//!
//! A problem exposes exact losses, the exact Jacobian, and a stochastic
//! gradient oracle. Sampling always takes an explicit RNG so problems stay
//! immutable and shareable across threads.

mod quadratic;
mod registry;
mod toy_mtl;

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::minnorm::GradientMatrix;
use crate::rng::SimRng;

pub use quadratic::{make_quadratic_pair, QuadraticPair};
pub use registry::{FnProblem, ProblemFactory, ProblemRegistry};
pub use toy_mtl::{make_toy_mtl, MtlArchitecture, ToyMtl};

/// Axis-aligned box, used for sampling initial points only.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::invalid("box bounds must have equal length and lower <= upper"));
        }
        Ok(BoxDomain { lower, upper })
    }

    pub fn cube(dim: usize, half_width: f64) -> Self {
        BoxDomain {
            lower: vec![-half_width; dim],
            upper: vec![half_width; dim],
        }
    }

    pub fn sample(&self, rng: &mut SimRng) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| if l == u { *l } else { rng.gen_range(*l..*u) })
            .collect()
    }
}

pub trait MooProblem: Send + Sync {
    fn name(&self) -> &str;

    /// Decision dimension `N`.
    fn dim(&self) -> usize;

    /// Objective count `M`.
    fn objectives(&self) -> usize;

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn full_jacobian(&self, x: &[f64]) -> Result<GradientMatrix>;

    /// One stochastic draw of every objective's gradient.
    fn sample_gradient(&self, x: &[f64], rng: &mut SimRng) -> Result<GradientMatrix>;

    /// Average of `n` stochastic draws.
    fn sample_gradient_mean(&self, x: &[f64], n: usize, rng: &mut SimRng) -> Result<GradientMatrix> {
        if n == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        let first = self.sample_gradient(x, rng)?;
        let (m, dim) = (first.rows(), first.cols());
        let mut acc = first.data().to_vec();
        for _ in 1..n {
            let g = self.sample_gradient(x, rng)?;
            acc.iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
        }
        let inv = 1.0 / n as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        GradientMatrix::new(m, dim, acc)
    }

    fn domain(&self) -> Option<&BoxDomain> {
        None
    }

    /// Starting point: uniform in the domain if there is one, else standard normal.
    fn initial_point(&self, rng: &mut SimRng) -> Vec<f64> {
        match self.domain() {
            Some(d) => d.sample(rng),
            None => (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect(),
        }
    }

    /// Distance to the Pareto set, for problems where it is known.
    fn distance_to_front(&self, _x: &[f64]) -> Result<f64> {
        Err(Error::Unsupported(format!("{} has no known Pareto set", self.name())))
    }

    /// Common Lipschitz constant of the gradients, when known.
    fn lipschitz(&self) -> Option<f64> {
        None
    }

    /// Per-objective bound on `E|g(x, xi) - grad f(x)|^2`, when known.
    fn noise_variance(&self) -> Option<f64> {
        None
    }

    /// Subset of data on which both guard candidates are compared.
    /// `None` means the exact losses are used.
    fn draw_guard_batch(&self, _rng: &mut SimRng) -> Option<Vec<usize>> {
        None
    }

    fn eval_batch(&self, x: &[f64], batch: Option<&[usize]>) -> Result<Vec<f64>> {
        match batch {
            None => self.eval(x),
            Some(_) => Err(Error::Unsupported(format!("{} has no data batches", self.name()))),
        }
    }
}

pub(crate) fn check_dim(problem: &dyn MooProblem, x: &[f64]) -> Result<()> {
    if x.len() != problem.dim() {
        return Err(Error::shape(
            "problem input",
            format!("{} expects dimension {}, got {}", problem.name(), problem.dim(), x.len()),
        ));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("iterate passed to {}", problem.name())));
    }
    Ok(())
}

/// Largest relative deviation between `full_jacobian` and a central
/// finite-difference Jacobian of `eval` at `x`. Entries are compared relative
/// to `max(|fd|, |analytic|, 1)`.
pub fn jacobian_fd_error(problem: &dyn MooProblem, x: &[f64], eps: f64) -> Result<f64> {
    let jac = problem.full_jacobian(x)?;
    let mut worst: f64 = 0.0;
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        xp[j] = x[j] + eps;
        let fp = problem.eval(&xp)?;
        xp[j] = x[j] - eps;
        let fm = problem.eval(&xp)?;
        xp[j] = x[j];
        for i in 0..jac.rows() {
            let fd = (fp[i] - fm[i]) / (2.0 * eps);
            let an = jac.row(i)[j];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1.0);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Wraps a problem and counts loss evaluations.
pub struct CountingProblem<'a> {
    inner: &'a dyn MooProblem,
    evals: AtomicUsize,
}

impl<'a> CountingProblem<'a> {
    pub fn new(inner: &'a dyn MooProblem) -> Self {
        CountingProblem {
            inner,
            evals: AtomicUsize::new(0),
        }
    }

    pub fn evaluations(&self) -> usize {
        self.evals.load(Ordering::SeqCst)
    }
}

impl MooProblem for CountingProblem<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn objectives(&self) -> usize {
        self.inner.objectives()
    }
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.evals.fetch_add(1, Ordering::SeqCst);
        self.inner.eval(x)
    }
    fn full_jacobian(&self, x: &[f64]) -> Result<GradientMatrix> {
        self.inner.full_jacobian(x)
    }
    fn sample_gradient(&self, x: &[f64], rng: &mut SimRng) -> Result<GradientMatrix> {
        self.inner.sample_gradient(x, rng)
    }
    fn sample_gradient_mean(&self, x: &[f64], n: usize, rng: &mut SimRng) -> Result<GradientMatrix> {
        self.inner.sample_gradient_mean(x, n, rng)
    }
    fn domain(&self) -> Option<&BoxDomain> {
        self.inner.domain()
    }
    fn initial_point(&self, rng: &mut SimRng) -> Vec<f64> {
        self.inner.initial_point(rng)
    }
    fn distance_to_front(&self, x: &[f64]) -> Result<f64> {
        self.inner.distance_to_front(x)
    }
    fn lipschitz(&self) -> Option<f64> {
        self.inner.lipschitz()
    }
    fn noise_variance(&self) -> Option<f64> {
        self.inner.noise_variance()
    }
    fn draw_guard_batch(&self, rng: &mut SimRng) -> Option<Vec<usize>> {
        self.inner.draw_guard_batch(rng)
    }
    fn eval_batch(&self, x: &[f64], batch: Option<&[usize]>) -> Result<Vec<f64>> {
        self.evals.fetch_add(1, Ordering::SeqCst);
        self.inner.eval_batch(x, batch)
    }
}
