use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::ml2o::{GradientSource, MetaTrainConfig};
use crate::optimizers::{SampleSchedule, ScalarRule, StepSchedule, TrackingParams};
use crate::problems::ProblemRegistry;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub name: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub name: String,
    #[serde(default)]
    pub params: Value,
}

/// One experiment: a problem, an optimizer, and the seeds to run it with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub optimizer: OptimizerSpec,
    pub steps: usize,
    pub step_schedule: StepSchedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_schedule: Option<SampleSchedule>,
    pub seeds: Vec<u64>,
    /// Initial points per seed; 1 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<usize>,
    /// Adds iterate columns to every trace.
    #[serde(default)]
    pub record_iterates: bool,
    /// Adds an exact criticality column to every trace.
    #[serde(default)]
    pub criticality: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<PathBuf>,
}

const RUN_FIELDS: &[&str] = &[
    "problem",
    "optimizer",
    "steps",
    "step_schedule",
    "sample_schedule",
    "seeds",
    "population",
    "record_iterates",
    "criticality",
    "outputs",
];

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct Empty {}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompositeParams {
    beta: f64,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct LearnedParams {
    checkpoint: PathBuf,
    #[serde(default)]
    source: Option<GradientSource>,
}

/// Optimizer with parsed hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub enum OptimizerKind {
    Mgda,
    Smg,
    Dssmg,
    Moco(TrackingParams),
    Composite { beta: f64 },
    Scalarized(ScalarRule),
    /// Learner gradients come from `source`, or from the sample schedule
    /// (single draws without one).
    Ml2o { checkpoint: PathBuf, source: Option<GradientSource> },
    Gml2o { checkpoint: PathBuf },
    Gml2oDeterministic { checkpoint: PathBuf },
}

pub const OPTIMIZER_NAMES: &[&str] = &[
    "mgda",
    "smg",
    "dssmg",
    "moco",
    "composite",
    "scalarized",
    "ml2o",
    "gml2o",
    "gml2o_deterministic",
];

fn params_or_empty(v: &Value) -> Value {
    if v.is_null() {
        Value::Object(Default::default())
    } else {
        v.clone()
    }
}

fn parse_params<T: for<'de> Deserialize<'de>>(v: &Value) -> std::result::Result<T, String> {
    serde_json::from_value(params_or_empty(v)).map_err(|e| e.to_string())
}

impl OptimizerKind {
    pub fn parse(spec: &OptimizerSpec) -> std::result::Result<Self, String> {
        let p = &spec.params;
        Ok(match spec.name.as_str() {
            "mgda" => parse_params::<Empty>(p).map(|_| OptimizerKind::Mgda)?,
            "smg" => parse_params::<Empty>(p).map(|_| OptimizerKind::Smg)?,
            "dssmg" => parse_params::<Empty>(p).map(|_| OptimizerKind::Dssmg)?,
            "moco" => OptimizerKind::Moco(parse_params(p)?),
            "composite" => OptimizerKind::Composite {
                beta: parse_params::<CompositeParams>(p)?.beta,
            },
            "scalarized" => OptimizerKind::Scalarized(parse_params(p)?),
            "ml2o" => {
                let l: LearnedParams = parse_params(p)?;
                OptimizerKind::Ml2o {
                    checkpoint: l.checkpoint,
                    source: l.source,
                }
            }
            "gml2o" | "gml2o_deterministic" => {
                let l: LearnedParams = parse_params(p)?;
                if l.source.is_some() {
                    return Err("`source` is not accepted by guarded runs".into());
                }
                if spec.name == "gml2o" {
                    OptimizerKind::Gml2o { checkpoint: l.checkpoint }
                } else {
                    OptimizerKind::Gml2oDeterministic { checkpoint: l.checkpoint }
                }
            }
            other => return Err(format!("unknown optimizer `{other}` (known: {})", OPTIMIZER_NAMES.join(", "))),
        })
    }

    pub fn needs_sample_schedule(&self) -> bool {
        matches!(self, OptimizerKind::Dssmg | OptimizerKind::Gml2o { .. })
    }

    pub fn checkpoint(&self) -> Option<&Path> {
        match self {
            OptimizerKind::Ml2o { checkpoint, .. }
            | OptimizerKind::Gml2o { checkpoint }
            | OptimizerKind::Gml2oDeterministic { checkpoint } => Some(checkpoint),
            _ => None,
        }
    }
}

fn unknown_fields(v: &Value, known: &[&str], errs: &mut Vec<String>) {
    if let Value::Object(map) = v {
        for k in map.keys() {
            if !known.contains(&k.as_str()) {
                errs.push(format!("{k}: unknown field"));
            }
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("not valid JSON: {e}")]))?;
        let mut errs = Vec::new();
        unknown_fields(&v, RUN_FIELDS, &mut errs);
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        serde_json::from_value(v).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
        Self::from_json(&text)
    }

    pub fn population(&self) -> usize {
        self.population.unwrap_or(1)
    }

    /// Checks every field and reports all violations together.
    pub fn validate(&self, registry: &ProblemRegistry) -> Result<OptimizerKind> {
        let mut errs = Vec::new();
        if !registry.contains(&self.problem.name) {
            errs.push(format!(
                "problem.name: unknown problem `{}` (known: {})",
                self.problem.name,
                registry.names().collect::<Vec<_>>().join(", ")
            ));
        }
        let kind = match OptimizerKind::parse(&self.optimizer) {
            Ok(k) => Some(k),
            Err(e) if e.starts_with("unknown optimizer") => {
                errs.push(format!("optimizer.name: {e}"));
                None
            }
            Err(e) => {
                errs.push(format!("optimizer.params: {e}"));
                None
            }
        };
        if self.steps == 0 {
            errs.push("steps: must be at least 1".into());
        }
        if self.seeds.is_empty() {
            errs.push("seeds: at least one seed is required".into());
        }
        if self.population == Some(0) {
            errs.push("population: must be at least 1".into());
        }
        if let Err(e) = self.step_schedule.validate() {
            errs.push(format!("step_schedule: {e}"));
        }
        if let Some(s) = &self.sample_schedule {
            if let Err(e) = s.validate() {
                errs.push(format!("sample_schedule: {e}"));
            }
        }
        if let Some(k) = &kind {
            if k.needs_sample_schedule() && self.sample_schedule.is_none() {
                errs.push(format!("sample_schedule: required by optimizer `{}`", self.optimizer.name));
            }
            if let OptimizerKind::Ml2o { source: Some(s), .. } = k {
                if let Err(e) = s.validate() {
                    errs.push(format!("optimizer.params.source: {e}"));
                }
            }
            if let OptimizerKind::Gml2oDeterministic { .. } = k {
                if !matches!(self.step_schedule, StepSchedule::Constant { .. }) {
                    errs.push("step_schedule: gml2o_deterministic needs a constant step size".into());
                }
            }
            if let Some(path) = k.checkpoint() {
                if !path.is_file() {
                    errs.push(format!("optimizer.params.checkpoint: `{}` does not exist", path.display()));
                }
            }
        }
        if errs.is_empty() {
            Ok(kind.expect("parsed when there are no errors"))
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Meta-training job for `train-ml2o`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Problem family; epoch `e` builds it with a seed derived from `(meta.seed, e)`.
    pub problem: ProblemSpec,
    pub hidden: usize,
    /// Seed of the `U[-0.1, 0.1]` initialization.
    #[serde(default)]
    pub init_seed: u64,
    pub meta: MetaTrainConfig,
    /// Continue from a checkpoint written by an earlier run of the same job.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resume: Option<ResumeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResumeSpec {
    pub checkpoint: PathBuf,
    pub start_epoch: usize,
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
        Self::from_json(&text)
    }

    pub fn validate(&self, registry: &ProblemRegistry) -> Result<()> {
        let mut errs = Vec::new();
        if !registry.contains(&self.problem.name) {
            errs.push(format!("problem.name: unknown problem `{}`", self.problem.name));
        }
        if self.hidden == 0 {
            errs.push("hidden: must be at least 1".into());
        }
        if let Err(Error::Config(e)) = self.meta.validate() {
            errs.extend(e.into_iter().map(|m| format!("meta: {m}")));
        }
        if let Some(r) = &self.resume {
            if !r.checkpoint.is_file() {
                errs.push(format!("resume.checkpoint: `{}` does not exist", r.checkpoint.display()));
            }
            if r.start_epoch > self.meta.epochs {
                errs.push(format!("resume.start_epoch: {} exceeds meta.epochs {}", r.start_epoch, self.meta.epochs));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Distinct names, used to reject mixed comparisons.
pub(crate) fn distinct<'a>(it: impl Iterator<Item = &'a str>) -> BTreeSet<&'a str> {
    it.collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Value {
        serde_json::json!({
            "problem": {"name": "quadratic_pair", "params": {"dim": 2}},
            "optimizer": {"name": "dssmg"},
            "steps": 10,
            "step_schedule": {"kind": "harmonic"},
            "sample_schedule": {"base": 4, "rate": 0.1},
            "seeds": [1]
        })
    }

    #[test]
    fn valid_config_parses() {
        let cfg = RunConfig::from_json(&base().to_string()).unwrap();
        let kind = cfg.validate(&ProblemRegistry::with_builtins()).unwrap();
        assert_eq!(kind, OptimizerKind::Dssmg);
    }

    #[test]
    fn every_violation_is_listed() {
        let mut v = base();
        v["optimizer"]["name"] = "adamw_mo".into();
        v["steps"] = 0.into();
        v["seeds"] = serde_json::json!([]);
        let cfg = RunConfig::from_json(&v.to_string()).unwrap();
        let Err(Error::Config(errs)) = cfg.validate(&ProblemRegistry::with_builtins()) else {
            panic!("expected config error")
        };
        assert_eq!(errs.len(), 3, "{errs:?}");
        assert!(errs[0].starts_with("optimizer.name"));
    }

    #[test]
    fn unknown_fields_are_named() {
        let mut v = base();
        v["stepz"] = 3.into();
        v["colour"] = 1.into();
        let Err(Error::Config(errs)) = RunConfig::from_json(&v.to_string()) else {
            panic!("expected config error")
        };
        assert_eq!(errs, vec!["colour: unknown field".to_owned(), "stepz: unknown field".to_owned()]);
    }

    #[test]
    fn missing_sample_schedule() {
        let mut v = base();
        v.as_object_mut().unwrap().remove("sample_schedule");
        let cfg = RunConfig::from_json(&v.to_string()).unwrap();
        assert!(cfg.validate(&ProblemRegistry::with_builtins()).is_err());
    }
}
