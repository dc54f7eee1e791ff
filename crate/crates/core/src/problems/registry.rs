use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Deserialize;
use serde_json::Value;

use super::{check_dim, make_quadratic_pair, make_toy_mtl, BoxDomain, MooProblem};
use crate::error::{Error, Result};
use crate::minnorm::GradientMatrix;
use crate::rng::SimRng;

type EvalFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
type JacobianFn = dyn Fn(&[f64]) -> Vec<Vec<f64>> + Send + Sync;

/// A problem assembled from closures. Stochastic gradients are exact.
pub struct FnProblem {
    name: String,
    dim: usize,
    objectives: usize,
    eval: Box<EvalFn>,
    jacobian: Box<JacobianFn>,
    domain: Option<BoxDomain>,
}

impl FnProblem {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        objectives: usize,
        eval: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        jacobian: impl Fn(&[f64]) -> Vec<Vec<f64>> + Send + Sync + 'static,
        domain: Option<BoxDomain>,
    ) -> Self {
        FnProblem {
            name: name.into(),
            dim,
            objectives,
            eval: Box::new(eval),
            jacobian: Box::new(jacobian),
            domain,
        }
    }
}

impl MooProblem for FnProblem {
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn objectives(&self) -> usize {
        self.objectives
    }
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self, x)?;
        let f = (self.eval)(x);
        if f.len() != self.objectives {
            return Err(Error::shape("eval", format!("{} returned {} losses", self.name, f.len())));
        }
        Ok(f)
    }
    fn full_jacobian(&self, x: &[f64]) -> Result<GradientMatrix> {
        check_dim(self, x)?;
        GradientMatrix::from_rows(&(self.jacobian)(x))
    }
    fn sample_gradient(&self, x: &[f64], _rng: &mut SimRng) -> Result<GradientMatrix> {
        self.full_jacobian(x)
    }
    fn domain(&self) -> Option<&BoxDomain> {
        self.domain.as_ref()
    }
}

/// Builds a problem from JSON parameters and a derived seed.
pub type ProblemFactory = Box<dyn Fn(&Value, u64) -> Result<Arc<dyn MooProblem>> + Send + Sync>;

enum Entry {
    Instance(Arc<dyn MooProblem>),
    Factory(ProblemFactory),
}

/// Name -> problem lookup used by experiment configs.
#[derive(Default)]
pub struct ProblemRegistry {
    entries: BTreeMap<String, Entry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QuadraticParams {
    dim: usize,
    #[serde(default)]
    noise_sigma: f64,
    seed: Option<u64>,
    half_width: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ToyMtlParams {
    #[serde(default = "default_samples")]
    samples: usize,
    #[serde(default = "default_classes")]
    classes: usize,
    #[serde(default = "default_batch")]
    batch: usize,
    seed: Option<u64>,
}

fn default_samples() -> usize {
    2048
}
fn default_classes() -> usize {
    10
}
fn default_batch() -> usize {
    64
}

fn parse<T: for<'de> Deserialize<'de>>(name: &str, params: &Value) -> Result<T> {
    let v = if params.is_null() { Value::Object(Default::default()) } else { params.clone() };
    serde_json::from_value(v).map_err(|e| Error::Config(vec![format!("problem.params ({name}): {e}")]))
}

impl ProblemRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry with `quadratic_pair` and `toy_mtl` factories.
    pub fn with_builtins() -> Self {
        let mut r = ProblemRegistry::new();
        r.register_factory(
            "quadratic_pair",
            Box::new(|params, seed| {
                let p: QuadraticParams = parse("quadratic_pair", params)?;
                let mut q = make_quadratic_pair(p.dim, p.seed.unwrap_or(seed), p.noise_sigma)?;
                if let Some(h) = p.half_width {
                    q = q.with_domain(BoxDomain::cube(p.dim, h))?;
                }
                Ok(Arc::new(q) as Arc<dyn MooProblem>)
            }),
        )
        .expect("fresh registry");
        r.register_factory(
            "toy_mtl",
            Box::new(|params, seed| {
                let p: ToyMtlParams = parse("toy_mtl", params)?;
                let m = make_toy_mtl(p.seed.unwrap_or(seed), p.samples, p.classes, p.batch)?;
                Ok(Arc::new(m) as Arc<dyn MooProblem>)
            }),
        )
        .expect("fresh registry");
        r
    }

    fn insert(&mut self, name: &str, entry: Entry) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Duplicate(format!("problem `{name}`")));
        }
        self.entries.insert(name.to_owned(), entry);
        Ok(())
    }

    pub fn register_named_problem(&mut self, name: &str, problem: Arc<dyn MooProblem>) -> Result<()> {
        self.insert(name, Entry::Instance(problem))
    }

    pub fn register_factory(&mut self, name: &str, factory: ProblemFactory) -> Result<()> {
        self.insert(name, Entry::Factory(factory))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Fetches a registered instance, or builds one from a factory with
    /// empty parameters.
    pub fn get(&self, name: &str) -> Result<Arc<dyn MooProblem>> {
        self.build(name, &Value::Null, 0)
    }

    pub fn build(&self, name: &str, params: &Value, seed: u64) -> Result<Arc<dyn MooProblem>> {
        match self.entries.get(name) {
            None => Err(Error::NotFound(format!("problem `{name}`"))),
            Some(Entry::Instance(p)) => Ok(Arc::clone(p)),
            Some(Entry::Factory(f)) => f(params, seed),
        }
    }
}
