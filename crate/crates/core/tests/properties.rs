use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scmpc::complexity::{admissibility_bound, beta_tail, expected_violation_bound, min_sample_size};
use scmpc::model::{sample_scenarios, Polytope, ScalarDistribution, Scenario, StageCost, SystemModel, SystemRealization};
use scmpc::program::{assemble, condense, StateConstraint};
use scmpc::qp::{kkt_residuals, solve_qp, HessianFactor, QpOptions, QpOutcome, Rows};
use scmpc::removal::{remove_greedy, remove_marginal, remove_optimal, GreedyMetric};
use scmpc::rng::{domain, StreamKey};
use scmpc::benchmark;

fn matrix(rows: usize, cols: usize, range: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-range..range, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn realization(n: usize, m: usize) -> impl Strategy<Value = SystemRealization<f64>> {
    (matrix(n, n, 1.2), matrix(n, m, 1.5), prop::collection::vec(-1.0..1.0, n)).prop_map(|(a, b, w)| {
        SystemRealization {
            a,
            b,
            w: DVector::from_vec(w),
        }
    })
}

fn scenarios(n: usize, m: usize, horizon: usize, k: usize) -> impl Strategy<Value = Vec<Scenario<f64>>> {
    prop::collection::vec(
        prop::collection::vec(realization(n, m), horizon).prop_map(|stages| Scenario { stages }),
        k,
    )
}

/// Dims, scenarios, state and stacked input.
fn condensation_case() -> impl Strategy<Value = (Vec<Scenario<f64>>, DVector<f64>, DVector<f64>, usize)> {
    (1usize..4, 1usize..3, 1usize..6, 1usize..4).prop_flat_map(|(n, m, horizon, k)| {
        (
            scenarios(n, m, horizon, k),
            prop::collection::vec(-2.0..2.0, n).prop_map(DVector::from_vec),
            prop::collection::vec(-2.0..2.0, horizon * m).prop_map(DVector::from_vec),
            Just(m),
        )
    })
}

/// 1-D program `x⁺ = a x + b u + w`, `x ≥ 1` on every predicted state.
fn scalar_program(seed: u64, k: usize, horizon: usize) -> scmpc::program::ScenarioProgram<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scen: Vec<_> = (0..k)
        .map(|_| Scenario {
            stages: (0..horizon)
                .map(|_| SystemRealization {
                    a: DMatrix::from_element(1, 1, rng.random_range(0.5..1.0)),
                    b: DMatrix::from_element(1, 1, rng.random_range(0.5..1.5)),
                    w: DVector::from_element(1, rng.random_range(-1.0..1.0)),
                })
                .collect(),
        })
        .collect();
    let x = Polytope::halfspace(&[-1.0], -1.0);
    assemble(
        &DVector::from_element(1, rng.random_range(-1.0..1.0)),
        &scen,
        &StageCost::identity(1, 1),
        &[StateConstraint::first(&x, k)],
        &Polytope::bounds(&[-20.0], &[20.0]).unwrap(),
        0.0,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn beta_tail_monotone_and_complete(k in 1usize..200, q_frac in 0.0..1.0f64, nu in 0.0..1.0f64, dnu in 0.0..0.2f64) {
        let q = ((k as f64) * q_frac) as usize;
        let a: f64 = beta_tail(nu, k, q).unwrap();
        let b: f64 = beta_tail((nu + dnu).min(1.0), k, q).unwrap();
        prop_assert!(b <= a + 1e-12);
        if q < k {
            let c: f64 = beta_tail(nu, k, q + 1).unwrap();
            prop_assert!(c + 1e-12 >= a);
        }
        let full: f64 = beta_tail(nu, k, k).unwrap();
        prop_assert!((full - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_removal_bound_matches_closed_form(rho1 in 1usize..8, extra in 0usize..300) {
        let k = rho1 + extra;
        let q: f64 = expected_violation_bound(k, 0, rho1).unwrap();
        prop_assert!((q - rho1 as f64 / (k as f64 + 1.0)).abs() <= 1e-6);
    }

    #[test]
    fn min_sample_size_is_tight(r in 0usize..40, rho1 in 1usize..4, eps in 0.02..0.3f64) {
        let k = min_sample_size(r, rho1, eps).unwrap();
        let at: f64 = admissibility_bound(k, r, rho1).unwrap();
        prop_assert!(at <= eps);
        if k > r + rho1 {
            let below: f64 = admissibility_bound(k - 1, r, rho1).unwrap();
            prop_assert!(below > eps);
        }
    }

    #[test]
    fn polytope_membership_is_componentwise(h in matrix(3, 2, 2.0), b in prop::collection::vec(-1.0..1.0f64, 3), p in prop::collection::vec(-2.0..2.0f64, 2)) {
        let poly = Polytope::new(h.clone(), DVector::from_vec(b.clone())).unwrap();
        let point = DVector::from_vec(p);
        let lhs = &h * &point;
        let expected = (0..3).all(|i| lhs[i] <= b[i] + 1e-9);
        prop_assert_eq!(poly.contains(&point).unwrap(), expected);
    }

    #[test]
    fn condensed_prediction_matches_iteration((scen, x0, u, m) in condensation_case()) {
        let traj = condense(&x0, &scen).unwrap();
        for (k, s) in scen.iter().enumerate() {
            let mut x = x0.clone();
            for (i, r) in s.stages.iter().enumerate() {
                x = r.step(&x, &u.rows(i * m, m).into_owned());
                prop_assert!((traj.predict(k, i + 1, &u) - &x).amax() <= 1e-9);
            }
        }
    }

    #[test]
    fn sampling_is_reproducible(seed in any::<u64>(), t in 0u64..1000) {
        let model = benchmark::model::<f64>();
        let key = StreamKey::new(seed, domain::SCENARIOS, t);
        let a = sample_scenarios(&model, 4, 3, key).unwrap();
        let b = sample_scenarios(&model, 6, 3, key).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (p, q) in x.stages.iter().zip(&y.stages) {
                prop_assert_eq!(&p.a, &q.a);
                prop_assert_eq!(&p.w, &q.w);
            }
        }
    }

    #[test]
    fn box_qp_meets_kkt(h in matrix(4, 4, 1.0), g in prop::collection::vec(-3.0..3.0f64, 4), lo in prop::collection::vec(-2.0..0.0f64, 4), width in prop::collection::vec(0.1..2.0f64, 4)) {
        let hess = &h * h.transpose() + DMatrix::identity(4, 4) * 0.1;
        let grad = DVector::from_vec(g);
        let mut rows = Rows::new(4);
        for i in 0..4 {
            let mut e = vec![0.0; 4];
            e[i] = 1.0;
            rows.push(&e, lo[i] + width[i]);
            e[i] = -1.0;
            rows.push(&e, -lo[i]);
        }
        let factor = HessianFactor::new(&hess).unwrap();
        let QpOutcome::Optimal(res) = solve_qp(&factor, &hess, &grad, &rows, None, &QpOptions::default()).unwrap() else {
            return Err(TestCaseError::fail("box QP reported infeasible"));
        };
        let kkt = kkt_residuals(&hess, &grad, &rows, None, &res.x, &res.multipliers);
        prop_assert!(kkt.max() <= 1e-6, "{kkt:?}");
        prop_assert!(res.multipliers.iter().all(|l| *l >= 0.0));
    }

    #[test]
    fn removing_rows_relaxes_and_scaling_keeps_minimizer(seed in any::<u64>(), drop in prop::collection::vec(any::<bool>(), 6)) {
        let p = scalar_program(seed, 6, 2);
        let full = p.solve().unwrap();
        let mut sel = p.full_selection();
        for (b, d) in drop.iter().enumerate() {
            sel.enabled[0][b] = !d;
        }
        let relaxed = p.solve_selection(&sel, &QpOptions::default()).unwrap();
        prop_assert!(relaxed.objective <= full.objective + 1e-9);

        let mut scaled = p.clone();
        scaled.hessian *= 7.5;
        scaled.gradient *= 7.5;
        let factor_input = scaled.hessian.clone();
        let f = HessianFactor::new(&factor_input).unwrap();
        let QpOutcome::Optimal(res) = solve_qp(&f, &scaled.hessian, &scaled.gradient, &scaled.rows, None, &QpOptions::default()).unwrap() else {
            return Err(TestCaseError::fail("infeasible"));
        };
        prop_assert!((res.x[0] - full.u_stack[0]).abs() <= 1e-7);
    }

    #[test]
    fn removal_hierarchy(seed in any::<u64>(), k in 3usize..7, r in 1usize..3) {
        let p = scalar_program(seed, k, 2);
        let opt = remove_optimal(&p, &[r]).unwrap();
        let greedy = remove_greedy(&p, &[r], GreedyMetric::TotalCost).unwrap();
        let marginal = remove_marginal(&p, &[r]).unwrap();
        prop_assert!(opt.solution.objective <= greedy.solution.objective + 1e-9);
        prop_assert!(opt.solution.objective <= marginal.solution.objective + 1e-9);
        for out in [&opt, &greedy, &marginal] {
            let mut all: Vec<usize> = out.kept[0].iter().chain(&out.removed[0]).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..k).collect::<Vec<_>>());
        }
        let again = remove_greedy(&p, &[r], GreedyMetric::TotalCost).unwrap();
        prop_assert_eq!(&again.removed, &greedy.removed);
    }
}

#[test]
fn sampling_moments() {
    use stats::mean_var;
    let mut rng = StreamKey::new(1, domain::ESTIMATE, 0).rng();
    let u: Vec<f64> = (0..100_000).map(|_| ScalarDistribution::uniform(0.0, 1.0).sample(&mut rng)).collect();
    let (m, _) = mean_var(&u);
    assert!((0.497..=0.503).contains(&m));
    let n: Vec<f64> = (0..100_000).map(|_| ScalarDistribution::normal(0.0, 0.1).sample(&mut rng)).collect();
    let (_, v) = mean_var(&n);
    assert!((0.097..=0.103).contains(&v));
}

#[test]
fn degenerate_model_is_constant() {
    let model: SystemModel<f64> = SystemModel::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2))
        .unwrap()
        .with_parameter(ScalarDistribution::constant(0.0), DMatrix::identity(2, 2), DMatrix::zeros(2, 2))
        .unwrap()
        .with_noise(vec![ScalarDistribution::constant(0.0); 2])
        .unwrap();
    let scen = sample_scenarios(&model, 5, 3, StreamKey::new(3, domain::SCENARIOS, 0)).unwrap();
    for s in &scen {
        for r in &s.stages {
            assert_eq!(r.a, DMatrix::identity(2, 2));
            assert_eq!(r.b, DMatrix::identity(2, 2));
            assert_eq!(r.w, DVector::zeros(2));
        }
    }
}

mod stats {
    pub fn mean_var(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
    }
}
