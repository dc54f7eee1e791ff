use std::fs;
use std::path::{Path, PathBuf};

use rand::RngCore;
use serde_json::json;

use super::config::TrainConfig;
use super::run::write_atomic;
use crate::error::{Error, Result};
use crate::ml2o::{load_checkpoint_for, meta_train, save_checkpoint, MetaTraceRow, Ml2oParams};
use crate::problems::ProblemRegistry;
use crate::rng::{stream, Purpose};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const META_LOSS_FILE: &str = "meta_loss.csv";

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub trace: Vec<MetaTraceRow>,
}

/// Seed of the problem instance meta-trained on in epoch `epoch`.
pub fn epoch_problem_seed(meta_seed: u64, epoch: usize) -> u64 {
    stream(meta_seed, epoch as u64, Purpose::Problem).next_u64()
}

/// Parameters before any meta-training step.
pub fn initial_params(cfg: &TrainConfig, registry: &ProblemRegistry) -> Result<Ml2oParams> {
    let probe = registry.build(&cfg.problem.name, &cfg.problem.params, epoch_problem_seed(cfg.meta.seed, 0))?;
    Ml2oParams::random(probe.objectives(), cfg.hidden, &mut stream(cfg.init_seed, 0, Purpose::Params))
}

/// Meta-trains from scratch or from `cfg.resume`, then writes the
/// checkpoint, the per-period meta-loss trace and a manifest into `out`.
pub fn train_ml2o(cfg: &TrainConfig, registry: &ProblemRegistry, out: &Path) -> Result<TrainOutput> {
    cfg.validate(registry)?;
    let (mut params, start) = match &cfg.resume {
        Some(r) => {
            let m = initial_params(cfg, registry)?.objectives();
            (load_checkpoint_for(&r.checkpoint, m, Some(cfg.hidden))?, r.start_epoch)
        }
        None => (initial_params(cfg, registry)?, 0),
    };
    let mut sampler = |epoch: usize, _: &mut crate::rng::SimRng| {
        registry.build(&cfg.problem.name, &cfg.problem.params, epoch_problem_seed(cfg.meta.seed, epoch))
    };
    let trace = meta_train(&mut sampler, &mut params, &cfg.meta, start)?;

    fs::create_dir_all(out)?;
    let checkpoint = out.join(CHECKPOINT_FILE);
    save_checkpoint(&params, &checkpoint)?;
    let mut csv = String::from("epoch,period,meta_loss,grad_norm\n");
    for r in &trace {
        csv.push_str(&format!("{},{},{:.16e},{:.16e}\n", r.epoch, r.period, r.meta_loss, r.grad_norm));
    }
    fs::write(out.join(META_LOSS_FILE), csv)?;
    let mut echo = cfg.clone();
    echo.outputs = None;
    let manifest = json!({
        "toolkit": "ml2o",
        "version": env!("CARGO_PKG_VERSION"),
        "config": echo,
        "start_epoch": start,
        "checkpoint": CHECKPOINT_FILE,
        "meta_loss": META_LOSS_FILE,
        "rows": trace.len(),
    });
    write_atomic(&out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())
        .map_err(|e| Error::invalid(format!("writing manifest: {e}")))?;
    Ok(TrainOutput { checkpoint, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ResumeSpec;
    use crate::ml2o::{load_checkpoint, MetaTrainConfig};

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            problem: super::super::config::ProblemSpec {
                name: "quadratic_pair".into(),
                params: json!({"dim": 3}),
            },
            hidden: 4,
            init_seed: 5,
            meta: MetaTrainConfig {
                horizon: 6,
                truncation: 3,
                meta_lr: 0.1,
                epochs,
                seed: 2,
                ..MetaTrainConfig::default()
            },
            resume: None,
            outputs: None,
        }
    }

    #[test]
    fn zero_epochs_writes_initialization() {
        let dir = tempfile::tempdir().unwrap();
        let reg = ProblemRegistry::with_builtins();
        let out = train_ml2o(&cfg(0), &reg, dir.path()).unwrap();
        assert!(out.trace.is_empty());
        let loaded = load_checkpoint(&out.checkpoint).unwrap();
        assert_eq!(loaded.store(), initial_params(&cfg(0), &reg).unwrap().store());
    }

    #[test]
    fn trace_has_epochs_times_periods_rows() {
        let dir = tempfile::tempdir().unwrap();
        let out = train_ml2o(&cfg(3), &ProblemRegistry::with_builtins(), dir.path()).unwrap();
        assert_eq!(out.trace.len(), 6);
        let text = fs::read_to_string(dir.path().join(META_LOSS_FILE)).unwrap();
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let reg = ProblemRegistry::with_builtins();
        let full = tempfile::tempdir().unwrap();
        let whole = train_ml2o(&cfg(4), &reg, full.path()).unwrap();

        let first = tempfile::tempdir().unwrap();
        let half = train_ml2o(&cfg(2), &reg, first.path()).unwrap();
        let mut rest = cfg(4);
        rest.resume = Some(ResumeSpec {
            checkpoint: half.checkpoint.clone(),
            start_epoch: 2,
        });
        let second = tempfile::tempdir().unwrap();
        let tail = train_ml2o(&rest, &reg, second.path()).unwrap();

        assert_eq!(
            load_checkpoint(&whole.checkpoint).unwrap().store(),
            load_checkpoint(&tail.checkpoint).unwrap().store()
        );
        assert_eq!(&whole.trace[4..], &tail.trace[..]);
    }
}
