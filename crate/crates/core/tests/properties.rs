use proptest::prelude::*;
use rand::Rng;

use ml2o::metrics::{extract_front, hypervolume, ObjectivePoint};
use ml2o::minnorm::{criticality_measure, DEFAULT_TOL, dual_objective, simplex_grid_oracle, solve_min_norm_default, GradientMatrix};
use ml2o::ml2o::{meta_loss, ml2o_direction, Ml2oParams, Ml2oState};
use ml2o::numerics::Tensor;
use ml2o::optimizers::{mgda_step, OptimizerState, StepSchedule};
use ml2o::problems::{make_quadratic_pair, make_toy_mtl, MooProblem, QuadraticPair};
use ml2o::rng::{seeded, stream, Purpose};

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let cols = t.shape()[1];
    let mut data = Vec::with_capacity(t.data().len());
    for &p in perm {
        data.extend_from_slice(&t.data()[p * cols..(p + 1) * cols]);
    }
    Tensor::matrix(perm.len(), cols, data).unwrap()
}

fn permute_state(s: &Ml2oState, perm: &[usize]) -> Ml2oState {
    Ml2oState {
        specific_h: s.specific_h.iter().map(|t| permute_rows(t, perm)).collect(),
        specific_c: s.specific_c.iter().map(|t| permute_rows(t, perm)).collect(),
        shared_h: permute_rows(&s.shared_h, perm),
        shared_c: permute_rows(&s.shared_c, perm),
    }
}

fn permute_matrix(y: &GradientMatrix, perm: &[usize]) -> GradientMatrix {
    let rows: Vec<Vec<f64>> = y.to_rows().iter().map(|r| perm.iter().map(|&p| r[p]).collect()).collect();
    GradientMatrix::from_rows(&rows).unwrap()
}

fn points(v: &[(f64, f64)]) -> Vec<ObjectivePoint> {
    v.iter().enumerate().map(|(i, &(a, b))| ObjectivePoint::new(vec![a, b], i).unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn learned_direction_is_permutation_covariant(seed in 0u64..1000, n in 2usize..7, shift in 1usize..6) {
        let params = Ml2oParams::random(2, 3, &mut seeded(seed)).unwrap();
        let mut rng = seeded(seed + 1);
        let rows: Vec<Vec<f64>> = (0..2).map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let y = GradientMatrix::from_rows(&rows).unwrap();
        // warm the state up so it is not all zeros
        let (_, state) = ml2o_direction(&y, &Ml2oState::zeros(&params, n), &params).unwrap();
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();

        let (g, next) = ml2o_direction(&y, &state, &params).unwrap();
        let (gp, nextp) = ml2o_direction(&permute_matrix(&y, &perm), &permute_state(&state, &perm), &params).unwrap();
        let want: Vec<f64> = perm.iter().map(|&p| g[p]).collect();
        prop_assert_eq!(gp, want);
        prop_assert_eq!(permute_state(&next, &perm).shared_h, nextp.shared_h);
    }

    #[test]
    fn state_advance_is_deterministic(seed in 0u64..1000) {
        let params = Ml2oParams::random(2, 2, &mut seeded(seed)).unwrap();
        let y = GradientMatrix::from_rows(&[vec![0.3, -1.0, 2.0], vec![0.1, 0.0, -0.5]]).unwrap();
        let s = Ml2oState::zeros(&params, 3);
        let a = ml2o_direction(&y, &s, &params).unwrap();
        let b = ml2o_direction(&y, &s, &params).unwrap();
        prop_assert_eq!(a.0, b.0);
        prop_assert_eq!(a.1.specific_c, b.1.specific_c);
    }

    #[test]
    fn meta_loss_is_zero_on_itself_and_monotone(f in prop::collection::vec(-5.0f64..5.0, 2..5), i in 0usize..5, bump in 0.0f64..3.0) {
        prop_assert_eq!(meta_loss(&f, &f).unwrap(), 0.0);
        let i = i % f.len();
        let base: Vec<f64> = f.iter().map(|v| v * 0.5).collect();
        let mut up = f.clone();
        up[i] += bump;
        prop_assert!(meta_loss(&up, &base).unwrap() >= meta_loss(&f, &base).unwrap());
    }

    #[test]
    fn extract_front_is_idempotent(v in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 0..60)) {
        let once = extract_front(&points(&v));
        let twice = extract_front(&once);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn hypervolume_never_drops_when_a_point_is_added(v in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 1..40), extra in (0.0f64..10.0, 0.0f64..10.0)) {
        let reference = [11.0, 11.0];
        let front: Vec<Vec<f64>> = extract_front(&points(&v)).into_iter().map(|p| p.values).collect();
        let before = hypervolume(&front, &reference).unwrap();
        let mut all = v.clone();
        all.push(extra);
        let grown: Vec<Vec<f64>> = extract_front(&points(&all)).into_iter().map(|p| p.values).collect();
        prop_assert!(hypervolume(&grown, &reference).unwrap() >= before - 1e-12);
    }

    #[test]
    fn mgda_never_raises_the_worst_objective(seed in 0u64..500, n in 1usize..6) {
        let q = make_quadratic_pair(n, seed, 0.0).unwrap();
        let alpha = 1.0 / q.lipschitz().unwrap();
        let mut st = OptimizerState::new(q.initial_point(&mut stream(seed, 0, Purpose::Init)));
        for _ in 0..30 {
            let before = q.eval(&st.x).unwrap();
            mgda_step(&q, &mut st, &StepSchedule::Constant { alpha }).unwrap();
            let after = q.eval(&st.x).unwrap();
            prop_assert!(meta_loss(&after, &before).unwrap() <= 1e-12);
        }
    }
}

#[test]
fn criticality_vanishes_exactly_on_the_segment() {
    let mut rng = seeded(5);
    for i in 0..100 {
        let n = rng.gen_range(1..6);
        let q = make_quadratic_pair(n, i, 0.0).unwrap();
        let [c1, c2] = q.centers().clone();
        let t: f64 = rng.gen_range(0.0..=1.0);
        let on: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| a + t * (b - a)).collect();
        assert!(criticality_measure(&q, &on, 1e-12).unwrap() < 1e-9);
        // a random offset of length >= 0.1 along a random direction
        let dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        let len = rng.gen_range(0.1..2.0);
        let mut off: Vec<f64> = on.iter().zip(&dir).map(|(p, d)| p + len * d / norm).collect();
        while q.distance_to_front(&off).unwrap() < 0.1 {
            off.iter_mut().zip(&dir).for_each(|(p, d)| *p += 0.1 * d / norm);
        }
        assert!(criticality_measure(&q, &off, 1e-12).unwrap() > 0.01, "point {i}");
    }
}

#[test]
fn zero_criticality_iff_zero_in_hull() {
    // the first two rows straddle zero only when unshifted; otherwise the
    // third row has to pull the hull back across the axis
    for (shift, inside) in [(0.0, true), (0.25, false), (-0.25, false)] {
        for extra in [-1.0, 1.0] {
            let w = GradientMatrix::from_rows(&[vec![1.0, shift], vec![-1.0, shift], vec![0.0, extra]]).unwrap();
            let grid = simplex_grid_oracle(&w, 400).unwrap();
            // the solver stops on a duality gap of 1e-10, which bounds the value, not its square root
            let grid_zero = dual_objective(&w, grid.as_slice()) < DEFAULT_TOL;
            let fw_zero = solve_min_norm_default(&w).unwrap().dual_norm_sq < DEFAULT_TOL;
            let hull_zero = inside || shift * extra < 0.0;
            assert_eq!(grid_zero, hull_zero, "shift {shift} extra {extra}");
            assert_eq!(fw_zero, hull_zero, "shift {shift} extra {extra}");
        }
    }
}

/// Least-squares slope of `log err` against `log n`.
fn slope(ns: &[usize], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = ns.iter().map(|n| (*n as f64).ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / xs.len() as f64, ys.iter().sum::<f64>() / ys.len() as f64);
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

/// Root-mean-square error of running means of single draws at each `n`,
/// over `paths` independent streams.
fn mean_error_curve(p: &dyn MooProblem, x: &[f64], ns: &[usize], paths: u64) -> Vec<f64> {
    let exact = p.full_jacobian(x).unwrap();
    let mut sq = vec![0.0; ns.len()];
    for path in 0..paths {
        let mut rng = stream(path, 0, Purpose::Noise);
        let mut acc = vec![0.0; exact.data().len()];
        let mut drawn = 0;
        for (slot, &n) in ns.iter().enumerate() {
            while drawn < n {
                let g = p.sample_gradient(x, &mut rng).unwrap();
                acc.iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
                drawn += 1;
            }
            let err: f64 = acc.iter().zip(exact.data()).map(|(a, e)| (a / n as f64 - e).powi(2)).sum();
            sq[slot] += err / paths as f64;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

#[test]
fn sampled_gradients_are_unbiased_at_root_n_rate() {
    let ns = [100, 300, 1_000, 3_000, 10_000, 30_000, 100_000];
    let q = make_quadratic_pair(20, 3, 0.5).unwrap();
    let x = q.initial_point(&mut seeded(1));
    let s = slope(&ns, &mean_error_curve(&q, &x, &ns, 8));
    assert!((-0.6..=-0.4).contains(&s), "quadratic slope {s}");

    let m = make_toy_mtl(2, 512, 10, 16).unwrap();
    let x = m.initial_point(&mut seeded(1));
    let s = slope(&ns, &mean_error_curve(&m, &x, &ns, 1));
    assert!((-0.6..=-0.4).contains(&s), "toy network slope {s}");
}

#[test]
fn quadratic_from_explicit_centers() {
    let q = QuadraticPair::new(vec![0.0, 0.0], vec![2.0, 0.0], 0.0).unwrap();
    assert_eq!(criticality_measure(&q, &[1.0, 0.0], 1e-12).unwrap(), 0.0);
    assert!((criticality_measure(&q, &[1.0, 1.0], 1e-12).unwrap() - 1.0).abs() < 1e-9);
}
