//! Invariant suites behind the `check` subcommand. Each function takes its
//! sample counts as arguments so the same code serves quick checks and the
//! full acceptance runs.

use rand::Rng;

use crate::error::{Error, Result};
use crate::metrics::theorem_monitor;
use crate::minnorm::{
    dual_objective, min_norm_2obj_oracle, simplex_grid_oracle, solve_min_norm_default, GradientMatrix, DEFAULT_TOL,
};
use crate::ml2o::{replay_window_loss, unroll_window, GradientSource, Ml2oParams, Ml2oState};
use crate::numerics::{dot, finite_diff_gradient, norm};
use crate::optimizers::{SampleSchedule, StepSchedule};
use crate::problems::{make_quadratic_pair, MooProblem};
use crate::rng::{seeded, stream, Purpose, SimRng};
use crate::safeguard::{gml2o_deterministic_run, gml2o_run};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckReport {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckReport {
            name: name.to_owned(),
            passed,
            detail,
        }
    }
}

/// Entries uniform in `[-1, 1]`.
fn random_matrix(m: usize, n: usize, rng: &mut SimRng) -> GradientMatrix {
    let data = (0..m * n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    GradientMatrix::new(m, n, data).expect("finite gaussian entries")
}

/// Frank-Wolfe against the closed form (M=2) and the simplex grid (M=3).
///
/// An M=3 instance agrees when the Frank-Wolfe value is no worse than the
/// grid's and the grid optimum is either within one grid step of the
/// Frank-Wolfe weights or no worse than what one grid step away from them
/// can cost, `4 h |W|_F^2` for step `h`.
pub fn oracle_equivalence(m2: usize, m3: usize, resolution: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = seeded(seed);
    let mut worst2: f64 = 0.0;
    let mut fails = 0;
    for _ in 0..m2 {
        let n = rng.gen_range(1..=10);
        let w = random_matrix(2, n, &mut rng);
        let fw = solve_min_norm_default(&w)?;
        let oracle = min_norm_2obj_oracle(w.row(0), w.row(1))?;
        let diff = (fw.dual_norm_sq - dual_objective(&w, oracle.as_slice())).abs();
        worst2 = worst2.max(diff);
        if diff > 1e-6 {
            fails += 1;
        }
    }
    let step = 1.0 / resolution as f64;
    let mut worst3: f64 = 0.0;
    for _ in 0..m3 {
        let n = rng.gen_range(2..=10);
        let w = random_matrix(3, n, &mut rng);
        let fw = solve_min_norm_default(&w)?;
        let grid = simplex_grid_oracle(&w, resolution)?;
        let dist = fw
            .weights
            .as_slice()
            .iter()
            .zip(grid.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let grid_val = dual_objective(&w, grid.as_slice());
        // moving the optimum by one grid step changes the objective by at most this
        let slack = 4.0 * step * w.frobenius_norm().powi(2);
        let close = dist <= step + 1e-12 || (grid_val - fw.dual_norm_sq).abs() <= slack;
        worst3 = worst3.max(dist / step);
        if !close || fw.dual_norm_sq > grid_val + DEFAULT_TOL {
            fails += 1;
        }
    }
    Ok(CheckReport::new(
        "min-norm oracle equivalence",
        fails == 0,
        format!("{fails} disagreements; worst M=2 |dual diff| {worst2:.2e}; worst M=3 weight distance {worst3:.2} grid steps"),
    ))
}

/// Every converged solve gives a direction that decreases all objectives.
pub fn descent_invariant(instances: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = seeded(seed);
    let (mut solved, mut violations) = (0, 0);
    for _ in 0..instances {
        let m = rng.gen_range(2..=5);
        let n = rng.gen_range(1..=10);
        let w = random_matrix(m, n, &mut rng);
        let sol = solve_min_norm_default(&w)?;
        if sol.gap > DEFAULT_TOL {
            continue;
        }
        solved += 1;
        let d = &sol.descent_direction;
        let bound = -dot(d, d) + 10.0 * DEFAULT_TOL;
        if (0..m).any(|i| dot(w.row(i), d) > bound) {
            violations += 1;
        }
    }
    Ok(CheckReport::new(
        "descent invariant",
        violations == 0 && solved > 0,
        format!("{violations} violations over {solved} converged solves of {instances}"),
    ))
}

/// Exact two-objective direction `-(W^T lambda*)`.
fn exact_direction(w: &GradientMatrix) -> Result<Vec<f64>> {
    let l = min_norm_2obj_oracle(w.row(0), w.row(1))?;
    Ok(w.combine(l.as_slice()).into_iter().map(|v| -v).collect())
}

fn scaled_to(w: GradientMatrix, c: f64) -> GradientMatrix {
    let f = w.frobenius_norm();
    if f > c {
        w.scaled(c / f)
    } else {
        w
    }
}

/// Half-Hölder continuity of the exact direction on `{|W| <= C}`.
pub fn holder_property(pairs: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = seeded(seed);
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for p in 0..pairs {
        let c: f64 = rng.gen_range(0.1..10.0);
        let n = rng.gen_range(1..=8);
        let w = random_matrix(2, n, &mut rng);
        let w = w.scaled(c * rng.gen_range(0.0..1.0f64) / w.frobenius_norm());
        // half the pairs are close together, where the square root matters
        let spread = if p % 2 == 0 { 10f64.powf(rng.gen_range(-8.0..-1.0)) } else { c };
        let noise = random_matrix(2, n, &mut rng).scaled(spread);
        let v = GradientMatrix::new(2, n, w.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect())?;
        let v = scaled_to(v, c);
        let gap = norm(&exact_direction(&w)?.iter().zip(exact_direction(&v)?).map(|(a, b)| a - b).collect::<Vec<_>>());
        let dist = GradientMatrix::new(2, n, w.data().iter().zip(v.data()).map(|(a, b)| a - b).collect())?
            .frobenius_norm();
        let bound = (2.0 * c).sqrt() * dist.sqrt() + 1e-8;
        worst = worst.max(gap / bound);
        if gap > bound {
            violations += 1;
        }
    }
    Ok(CheckReport::new(
        "Hölder continuity of the direction",
        violations == 0,
        format!("{violations} violations over {pairs} pairs; worst ratio to bound {worst:.3}"),
    ))
}

/// Entrywise variance of averaged gradients against `1.5 sigma^2 / N`.
pub fn sampling_variance(sizes: &[usize], repeats: usize, sigma: f64, seed: u64) -> Result<CheckReport> {
    let q = make_quadratic_pair(4, seed, sigma)?;
    let x = vec![0.3, -0.2, 0.5, 0.1];
    let mut rng = stream(seed, 0, Purpose::Noise);
    let mut worst: f64 = 0.0;
    let mut fails = 0;
    for &n in sizes {
        let draws: Vec<GradientMatrix> =
            (0..repeats).map(|_| q.sample_gradient_mean(&x, n, &mut rng)).collect::<Result<_>>()?;
        let entries = draws[0].data().len();
        let bound = 1.5 * sigma * sigma / n as f64;
        for e in 0..entries {
            let vals: Vec<f64> = draws.iter().map(|d| d.data()[e]).collect();
            let mean = vals.iter().sum::<f64>() / repeats as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (repeats as f64 - 1.0);
            worst = worst.max(var / bound);
            if var > bound {
                fails += 1;
            }
        }
    }
    Ok(CheckReport::new(
        "variance of averaged gradients",
        fails == 0,
        format!("{fails} entries above bound; worst ratio to bound {worst:.3}"),
    ))
}

/// Dynamic-sampling run on an identity quadratic pair with the criticality
/// partial sums. Returns `(tail increment ratio, best criticality)`.
pub fn dssmg_monitor(seed: u64, n: usize, sigma: f64, steps: usize, samples: SampleSchedule) -> Result<(f64, f64)> {
    use crate::optimizers::{dssmg_step, OptimizerState};
    use crate::record::{RunRecord, TraceRow};

    let q = make_quadratic_pair(n, seed, sigma)?;
    let mut st = OptimizerState::new(q.initial_point(&mut stream(seed, 0, Purpose::Init)));
    let mut noise = stream(seed, 0, Purpose::Noise);
    let sched = StepSchedule::Harmonic;
    let mut rec = RunRecord::default();
    rec.rows.push(TraceRow::initial(q.eval(&st.x)?, Some(st.x.clone())));
    for _ in 0..steps {
        let info = dssmg_step(&q, &mut st, &sched, &samples, &mut noise)?;
        let mut row = TraceRow::initial(q.eval(&st.x)?, Some(st.x.clone()));
        row.k = st.k;
        row.alpha = info.alpha;
        row.sample_size = info.sample_size;
        rec.rows.push(row);
    }
    let series = theorem_monitor(&rec, &q)?;
    let best = series.best().map_or(f64::INFINITY, |b| b.1);
    Ok((series.tail_increment_ratio(0.1), best))
}

/// Deterministic guarded run with `alpha = 1/L`; the first step at which the
/// min-norm direction at the current iterate drops below `threshold`.
pub fn guarded_stationarity(seed: u64, n: usize, hidden: usize, steps: usize, threshold: f64) -> Result<Option<usize>> {
    let q = make_quadratic_pair(n, seed, 0.0)?;
    let lipschitz = q.lipschitz().ok_or_else(|| Error::invalid("problem has no Lipschitz constant"))?;
    let params = Ml2oParams::random(2, hidden, &mut stream(seed, 0, Purpose::Params))?;
    let x0 = q.initial_point(&mut stream(seed, 0, Purpose::Init));
    let (rec, _) = gml2o_deterministic_run(&q, &params, x0, 1.0 / lipschitz, steps, true)?;
    for row in &rec.rows {
        let x = row.iterate.as_ref().expect("iterates recorded");
        let d = solve_min_norm_default(&q.full_jacobian(x)?)?;
        if d.dual_norm_sq.sqrt() < threshold {
            return Ok(Some(row.k));
        }
    }
    Ok(None)
}

/// Guarded runs on stochastic and deterministic quadratics; any violated
/// step surfaces as an error from the run itself.
pub fn guard_invariant(runs: usize, steps: usize, seed: u64) -> Result<CheckReport> {
    let mut violations = 0;
    let mut other = Vec::new();
    for r in 0..runs as u64 {
        let s = seed.wrapping_add(r);
        let q = make_quadratic_pair(4, s, 0.2)?;
        let params = Ml2oParams::random(2, 4, &mut stream(s, 0, Purpose::Params))?;
        let x0 = q.initial_point(&mut stream(s, 0, Purpose::Init));
        let samples = SampleSchedule { base: 4, rate: 0.1 };
        let res = gml2o_run(
            &q,
            &params,
            x0.clone(),
            &StepSchedule::ScaledHarmonic { scale: 0.5 },
            &samples,
            steps,
            &mut stream(s, 0, Purpose::Noise),
            &mut stream(s, 0, Purpose::Guard),
            false,
        )
        .map(|_| ())
        .and_then(|_| gml2o_deterministic_run(&q, &params, x0, 0.5, steps, false).map(|_| ()));
        match res {
            Ok(()) => {}
            Err(Error::GuardViolation { .. }) => violations += 1,
            Err(e) => other.push(e.to_string()),
        }
    }
    Ok(CheckReport::new(
        "guard invariant",
        violations == 0 && other.is_empty(),
        format!("{violations} violations over {} guarded runs; other errors: {other:?}", 2 * runs),
    ))
}

/// Worst relative deviation between truncated BPTT and central differences
/// on a tiny window (N=2, M=2, H=3, four steps).
pub fn bptt_relative_error(seed: u64) -> Result<f64> {
    let q = make_quadratic_pair(2, seed, 0.0)?;
    let mut params = Ml2oParams::random(2, 3, &mut stream(seed, 0, Purpose::Params))?;
    let mut rng = stream(seed, 0, Purpose::Init);
    let x0 = q.initial_point(&mut rng);
    let f0 = q.eval(&x0)?;
    let state = Ml2oState::zeros(&params, 2);
    let step = StepSchedule::Constant { alpha: 0.1 };
    params.store_mut().zero_grads();
    let out = unroll_window(&q, &mut params, &state, &x0, &f0, 0, 4, &step, &GradientSource::Exact, &mut rng)?;
    let fd = finite_diff_gradient(
        params.store(),
        |store| {
            let p = Ml2oParams::from_store(2, 3, 1, store.clone())?;
            replay_window_loss(&q, &p, &state, &x0, 0, &out.inputs, &step)
        },
        1e-4,
    )?;
    let mut worst: f64 = 0.0;
    for (name, g) in params.store().grads() {
        for (a, b) in g.data().iter().zip(fd[name].data()) {
            worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1e-6));
        }
    }
    Ok(worst)
}

/// Reduced versions of every suite, for the `check` subcommand.
pub fn quick_suite() -> Result<Vec<CheckReport>> {
    let mut out = vec![
        oracle_equivalence(200, 20, 200, 1)?,
        descent_invariant(500, 2)?,
        holder_property(500, 3)?,
        sampling_variance(&[1, 8, 64], 400, 0.1, 4)?,
        guard_invariant(4, 50, 5)?,
    ];
    let bptt = (0..3).map(bptt_relative_error).collect::<Result<Vec<_>>>()?;
    let worst = bptt.iter().copied().fold(0.0, f64::max);
    out.push(CheckReport::new(
        "BPTT against finite differences",
        worst < 1e-4,
        format!("worst relative error {worst:.2e} over 3 seeds"),
    ));
    let (tail, best) = dssmg_monitor(0, 8, 0.1, 500, SampleSchedule { base: 32, rate: 0.1 })?;
    out.push(CheckReport::new(
        "criticality partial sums",
        tail < 0.05 && best < 0.05,
        format!("last-10% increment {:.2}% of total; best criticality {best:.2e}", 100.0 * tail),
    ));
    let hit = guarded_stationarity(0, 8, 4, 500, 1e-4)?;
    out.push(CheckReport::new(
        "guarded run reaches stationarity",
        hit.is_some(),
        format!("|d| < 1e-4 at step {hit:?}"),
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        let r = oracle_equivalence(50, 5, 100, 0).unwrap();
        assert!(r.passed, "{}", r.detail);
        assert!(descent_invariant(100, 0).unwrap().passed);
        assert!(holder_property(100, 0).unwrap().passed);
        assert!(guard_invariant(2, 20, 0).unwrap().passed);
    }

    #[test]
    fn bptt_error_is_small() {
        assert!(bptt_relative_error(3).unwrap() < 1e-4);
    }
}
