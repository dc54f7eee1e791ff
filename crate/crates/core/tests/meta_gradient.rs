use ml2o::ml2o::{replay_window_loss, unroll_window, GradientSource, Ml2oParams, Ml2oState};
use ml2o::numerics::finite_diff_gradient;
use ml2o::optimizers::StepSchedule;
use ml2o::problems::{make_quadratic_pair, MooProblem};
use ml2o::rng::{seeded, stream, Purpose};

/// Worst relative deviation between BPTT and central differences over all
/// weights, with values below `floor` compared absolutely.
fn bptt_fd_error(seed: u64, floor: f64, eps: f64) -> f64 {
    let n = 2;
    let problem = make_quadratic_pair(n, seed, 0.0).unwrap();
    let mut params = Ml2oParams::random(2, 3, &mut stream(seed, 0, Purpose::Params)).unwrap();
    let mut rng = stream(seed, 0, Purpose::Init);
    let x0 = problem.initial_point(&mut rng);
    let f0 = problem.eval(&x0).unwrap();
    let state = Ml2oState::zeros(&params, n);
    let step = StepSchedule::Constant { alpha: 0.1 };
    params.store_mut().zero_grads();
    let out = unroll_window(&problem, &mut params, &state, &x0, &f0, 0, 4, &step, &GradientSource::Exact, &mut rng)
        .unwrap();
    let fd = finite_diff_gradient(
        params.store(),
        |store| {
            let p = Ml2oParams::from_store(2, 3, 1, store.clone())?;
            replay_window_loss(&problem, &p, &state, &x0, 0, &out.inputs, &step)
        },
        eps,
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    for (name, g) in params.store().grads() {
        for (a, b) in g.data().iter().zip(fd[name].data()) {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn bptt_matches_finite_differences() {
    for seed in 0..20 {
        let e = bptt_fd_error(seed, 1e-6, 1e-4);
        assert!(e < 1e-4, "seed {seed}: relative error {e}");
    }
}

#[test]
fn exact_source_reuses_jacobian() {
    let problem = make_quadratic_pair(3, 1, 0.0).unwrap();
    let mut params = Ml2oParams::random(2, 2, &mut seeded(0)).unwrap();
    let x0 = vec![0.2, 0.1, -0.3];
    let f0 = problem.eval(&x0).unwrap();
    let state = Ml2oState::zeros(&params, 3);
    let step = StepSchedule::Constant { alpha: 0.05 };
    let out = unroll_window(&problem, &mut params, &state, &x0, &f0, 0, 3, &step, &GradientSource::Exact, &mut seeded(1))
        .unwrap();
    assert_eq!(out.inputs[0], problem.full_jacobian(&x0).unwrap());
}
