//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::json;

use ml2o::harness::check::{
    descent_invariant, dssmg_monitor, guard_invariant, guarded_stationarity, holder_property, oracle_equivalence,
    sampling_variance, bptt_relative_error,
};
use ml2o::harness::{compare_runs, run_experiment, CompareMetric, RunConfig};
use ml2o::ml2o::{
    evaluate_meta_loss, meta_train, ml2o_step, save_checkpoint, GradientSource, MetaTrainConfig, Ml2oIterate, Ml2oParams,
};
use ml2o::optimizers::{dssmg_step, mgda_step, OptimizerState, SampleSchedule, StepSchedule};
use ml2o::problems::{make_quadratic_pair, make_toy_mtl, MooProblem, ProblemRegistry};
use ml2o::rng::{seeded, stream, Purpose, SimRng};
use ml2o::safeguard::gml2o_run;
use ml2o::Error;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn within(t: Duration, limit_s: u64) -> bool {
    t <= Duration::from_secs(limit_s)
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn c1_oracle() -> Outcome {
    let t = Instant::now();
    let r = oracle_equivalence(1000, 200, 500, 101).unwrap();
    let el = t.elapsed();
    outcome(r.passed && within(el, 10), format!("{} ({el:.1?})", r.detail))
}

fn c2_descent() -> Outcome {
    let r = descent_invariant(5000, 102).unwrap();
    outcome(r.passed, r.detail)
}

fn c3_holder() -> Outcome {
    let r = holder_property(1000, 103).unwrap();
    outcome(r.passed, r.detail)
}

fn c4_variance() -> Outcome {
    let r = sampling_variance(&[1, 8, 64, 512], 1000, 0.1, 104).unwrap();
    outcome(r.passed, r.detail)
}

fn c5_monitor() -> Outcome {
    let t = Instant::now();
    let mut good = 0;
    let mut worst_tail: f64 = 0.0;
    let mut worst_best: f64 = 0.0;
    for seed in 0..10 {
        let (tail, best) = dssmg_monitor(seed, 8, 0.1, 5000, SampleSchedule { base: 32, rate: 0.1 }).unwrap();
        worst_tail = worst_tail.max(tail);
        worst_best = worst_best.max(best);
        if tail < 0.05 && best < 0.05 {
            good += 1;
        }
    }
    let el = t.elapsed();
    outcome(
        good >= 9 && within(el, 120),
        format!("{good}/10 seeds; worst tail share {:.3}%, worst best-iterate criticality {worst_best:.2e} ({el:.1?})", 100.0 * worst_tail),
    )
}

fn front_config(optimizer: &str) -> RunConfig {
    RunConfig::from_json(
        &json!({
            "problem": {"name": "quadratic_pair", "params": {"dim": 2, "noise_sigma": 0.5, "half_width": 2.0}},
            "optimizer": {"name": optimizer},
            "steps": 100,
            "step_schedule": {"kind": "harmonic"},
            "sample_schedule": {"base": 32, "rate": 0.1},
            "seeds": (0..10).collect::<Vec<u64>>(),
            "population": 200
        })
        .to_string(),
    )
    .unwrap()
}

fn c6_fronts(tmp: &Path) -> Outcome {
    let t = Instant::now();
    let reg = ProblemRegistry::with_builtins();
    let dirs: Vec<_> = ["smg", "dssmg"]
        .iter()
        .map(|opt| {
            let out = tmp.join(format!("front_{opt}"));
            run_experiment(&front_config(opt), &reg, &out, None).unwrap();
            out
        })
        .collect();
    let rows = compare_runs(&dirs, CompareMetric::Hypervolume).unwrap();
    let wins = rows[0].values.iter().zip(&rows[1].values).filter(|(s, d)| d.1 >= s.1).count();
    let el = t.elapsed();
    outcome(
        wins >= 8 && within(el, 300),
        format!("DSSMG >= SMG in {wins}/10 seeds; mean hypervolume {:.4} vs {:.4} ({el:.1?})", rows[1].mean, rows[0].mean),
    )
}

fn c7_bptt() -> Outcome {
    let errs: Vec<f64> = (0..20).map(|s| bptt_relative_error(s).unwrap()).collect();
    let fails = errs.iter().filter(|e| **e >= 1e-4).count();
    outcome(fails == 0, format!("{fails}/20 seeds above 1e-4; worst relative error {:.2e}", max_of(&errs)))
}

/// Meta-trains on random eight-dimensional quadratic pairs.
fn train_on_quadratics(seed: u64, alpha: f64) -> (Ml2oParams, Ml2oParams) {
    let init = Ml2oParams::random(2, 8, &mut stream(seed, 0, Purpose::Params)).unwrap();
    let mut p = init.clone();
    let cfg = MetaTrainConfig {
        horizon: 100,
        truncation: 20,
        meta_lr: 0.5,
        epochs: 200,
        step: StepSchedule::Constant { alpha },
        source: GradientSource::Exact,
        seed,
    };
    let mut sampler = move |e: usize, _: &mut SimRng| {
        Ok(Arc::new(make_quadratic_pair(8, seed * 100_000 + e as u64, 0.0)?) as Arc<dyn MooProblem>)
    };
    meta_train(&mut sampler, &mut p, &cfg, 0).unwrap();
    (init, p)
}

fn c8_learning_signal() -> Outcome {
    let t = Instant::now();
    let alpha = 0.01;
    let sched = StepSchedule::Constant { alpha };
    let (mut meta_wins, mut worst_beat) = (0, 50);
    for seed in 0..10 {
        let (init, trained) = train_on_quadratics(seed, alpha);
        let (mut held_trained, mut held_init, mut beat) = (0.0, 0.0, 0);
        for j in 0..50u64 {
            let q = make_quadratic_pair(8, 9_000_000 + j, 0.0).unwrap();
            let x0 = q.initial_point(&mut stream(j, 0, Purpose::Init));
            held_trained += evaluate_meta_loss(&q, &trained, &x0, 100, &sched, &GradientSource::Exact, &mut seeded(0)).unwrap();
            held_init += evaluate_meta_loss(&q, &init, &x0, 100, &sched, &GradientSource::Exact, &mut seeded(0)).unwrap();
            let mut it = Ml2oIterate::new(x0.clone(), &trained);
            let mut st = OptimizerState::new(x0);
            for _ in 0..100 {
                ml2o_step(&q, &mut it, &trained, &sched, &GradientSource::Exact, &mut seeded(0)).unwrap();
                mgda_step(&q, &mut st, &sched).unwrap();
            }
            if max_of(&q.eval(&it.x).unwrap()) < max_of(&q.eval(&st.x).unwrap()) {
                beat += 1;
            }
        }
        if held_trained < held_init {
            meta_wins += 1;
        }
        worst_beat = worst_beat.min(beat);
    }
    let el = t.elapsed();
    outcome(
        meta_wins >= 9 && worst_beat >= 35 && within(el, 900),
        format!("held-out meta-loss improved in {meta_wins}/10 seeds; beats MGDA at step 100 on at least {worst_beat}/50 problems per seed ({el:.1?})"),
    )
}

/// Guarded and unguarded runs on the toy network, plus every guarded run's
/// status for the invariant tally.
struct MtlResult {
    means: [[f64; 2]; 3],
    guarded_runs: usize,
    violations: usize,
    elapsed: Duration,
}

fn mtl_params() -> Ml2oParams {
    let (_, mut params) = train_on_quadratics(0, 0.01);
    let cfg = MetaTrainConfig {
        horizon: 100,
        truncation: 20,
        meta_lr: 0.5,
        epochs: 10,
        step: StepSchedule::Constant { alpha: 0.1 },
        source: GradientSource::Dynamic { base: 32, rate: 0.5 },
        seed: 77,
    };
    let mut sampler =
        |e: usize, _: &mut SimRng| Ok(Arc::new(make_toy_mtl(1000 + e as u64, 2048, 10, 64)?) as Arc<dyn MooProblem>);
    meta_train(&mut sampler, &mut params, &cfg, 0).unwrap();
    params
}

fn run_mtl() -> MtlResult {
    let t = Instant::now();
    let params = mtl_params();
    let steps = 700;
    let sched = StepSchedule::Constant { alpha: 0.1 };
    let samples = SampleSchedule { base: 32, rate: 0.5 };
    let source = GradientSource::Dynamic { base: 32, rate: 0.5 };
    let mut sums = [[0.0; 2]; 3];
    let mut violations = 0;
    for s in 0..10u64 {
        let p = make_toy_mtl(s, 2048, 10, 64).unwrap();
        let x0 = p.initial_point(&mut stream(s, 0, Purpose::Init));

        let mut st = OptimizerState::new(x0.clone());
        let mut noise = stream(s, 0, Purpose::Noise);
        for _ in 0..steps {
            dssmg_step(&p, &mut st, &sched, &samples, &mut noise).unwrap();
        }
        let f_dssmg = p.eval(&st.x).unwrap();

        let mut it = Ml2oIterate::new(x0.clone(), &params);
        let mut noise = stream(s, 0, Purpose::Noise);
        let f_ml2o = (0..steps)
            .try_for_each(|_| ml2o_step(&p, &mut it, &params, &sched, &source, &mut noise).map(|_| ()))
            .and_then(|_| p.eval(&it.x))
            .unwrap_or_else(|_| vec![f64::INFINITY; 2]);

        let f_gml2o = match gml2o_run(
            &p,
            &params,
            x0,
            &sched,
            &samples,
            steps,
            &mut stream(s, 0, Purpose::Noise),
            &mut stream(s, 0, Purpose::Guard),
            false,
        ) {
            Ok((rec, _)) => rec.final_losses().unwrap().to_vec(),
            Err(Error::GuardViolation { .. }) => {
                violations += 1;
                vec![f64::INFINITY; 2]
            }
            Err(e) => panic!("guarded run failed: {e}"),
        };
        for i in 0..2 {
            sums[0][i] += f_dssmg[i];
            sums[1][i] += f_ml2o[i];
            sums[2][i] += f_gml2o[i];
        }
    }
    MtlResult {
        means: sums.map(|r| r.map(|v| v / 10.0)),
        guarded_runs: 10,
        violations,
        elapsed: t.elapsed(),
    }
}

fn c10_dominance(r: &MtlResult) -> Outcome {
    let [d, l, g] = r.means;
    let ok = (0..2).all(|i| g[i] <= d[i].min(l[i]) + 0.05);
    outcome(
        ok && within(r.elapsed, 600),
        format!("mean final losses dssmg {d:.4?}, ml2o {l:.4?}, gml2o {g:.4?} ({:.1?} incl. meta-training)", r.elapsed),
    )
}

fn c11_stationarity() -> (Outcome, usize) {
    let hits: Vec<Option<usize>> = (0..10).map(|s| guarded_stationarity(s, 8, 8, 5000, 1e-4).unwrap()).collect();
    let reached = hits.iter().filter(|h| h.is_some()).count();
    let latest = hits.iter().flatten().max().copied().unwrap_or(0);
    (outcome(reached == 10, format!("{reached}/10 seeds below 1e-4; latest at step {latest}")), 10)
}

fn c9_guard(mtl: &MtlResult, deterministic_runs: usize) -> Outcome {
    let r = guard_invariant(50, 200, 109).unwrap();
    let total = 100 + mtl.guarded_runs + deterministic_runs;
    outcome(
        r.passed && mtl.violations == 0,
        format!("{} violations over {total} guarded runs ({})", mtl.violations, r.detail),
    )
}

fn c12_determinism(tmp: &Path) -> Outcome {
    let reg = ProblemRegistry::with_builtins();
    let ck = tmp.join("ck.json");
    save_checkpoint(&Ml2oParams::random(2, 4, &mut seeded(3)).unwrap(), &ck).unwrap();
    let mut diffs = Vec::new();
    for opt in ["mgda", "smg", "dssmg", "moco", "ml2o", "gml2o"] {
        let params = match opt {
            "moco" => json!({"beta": 0.5, "gamma": 0.1}),
            "ml2o" | "gml2o" => json!({"checkpoint": ck}),
            _ => json!({}),
        };
        let cfg = RunConfig::from_json(
            &json!({
                "problem": {"name": "quadratic_pair", "params": {"dim": 4, "noise_sigma": 0.3, "half_width": 1.5}},
                "optimizer": {"name": opt, "params": params},
                "steps": 50,
                "step_schedule": {"kind": "scaled_harmonic", "scale": 0.5},
                "sample_schedule": {"base": 4, "rate": 0.2},
                "seeds": [4, 4, 9],
                "population": 3,
                "criticality": true
            })
            .to_string(),
        )
        .unwrap();
        let outs: Vec<_> = ["a", "b"]
            .iter()
            .map(|tag| {
                let out = tmp.join(format!("det_{opt}_{tag}"));
                run_experiment(&cfg, &reg, &out, Some(2)).unwrap();
                out
            })
            .collect();
        for entry in std::fs::read_dir(&outs[0]).unwrap() {
            let name = entry.unwrap().file_name();
            if name == "timing.csv" || !name.to_string_lossy().ends_with(".csv") {
                continue;
            }
            if std::fs::read(outs[0].join(&name)).unwrap() != std::fs::read(outs[1].join(&name)).unwrap() {
                diffs.push(format!("{opt}/{}", name.to_string_lossy()));
            }
        }
    }
    outcome(diffs.is_empty(), format!("6 optimizers, {} differing CSVs {diffs:?}", diffs.len()))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().unwrap();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |n: u32, name: &'static str, o: Outcome| {
        println!("criterion {n:>2} {}: {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "min-norm oracle equivalence", c1_oracle());
    report(2, "descent invariant", c2_descent());
    report(3, "half-Hölder continuity of the direction", c3_holder());
    report(4, "variance of averaged gradients", c4_variance());
    report(5, "criticality monitor for dynamic sampling", c5_monitor());
    report(6, "front hypervolume, DSSMG vs SMG", c6_fronts(tmp.path()));
    report(7, "BPTT against finite differences", c7_bptt());
    report(8, "learning signal of the learned optimizer", c8_learning_signal());
    let mtl = run_mtl();
    let (c11, det_runs) = c11_stationarity();
    report(9, "guard invariant", c9_guard(&mtl, det_runs));
    report(10, "guarded optimizer on the toy network", c10_dominance(&mtl));
    report(11, "stationarity of the deterministic guarded run", c11);
    report(12, "byte-identical reruns", c12_determinism(tmp.path()));
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.passed).map(|r| r.0).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {failed:?}");
        ExitCode::FAILURE
    }
}
