mod common;

use care_core::{project, project_attack, project_state, qp_oracle, DMatrix, DVector, Halfspaces};
use proptest::prelude::*;
use rand::Rng;

/// A projection instance whose feasible set contains `z0`.
#[derive(Debug, Clone)]
struct Instance {
    estimate: DVector<f64>,
    w: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
}

fn instance(seed: u64, n: usize, q: usize) -> Instance {
    let mut rng = common::rng(seed);
    let z0 = common::gaussian_vector(&mut rng, n);
    let a = common::gaussian_matrix(&mut rng, q, n);
    let slack = DVector::from_fn(q, |_, _| rng.random_range(0.0..1.0));
    Instance {
        b: &a * z0 + slack,
        estimate: common::gaussian_vector(&mut rng, n) * 3.0,
        w: common::random_spd(&mut rng, n, 0.1),
        a,
    }
}

fn objective(z: &DVector<f64>, inst: &Instance) -> f64 {
    let d = z - &inst.estimate;
    (d.transpose() * &inst.w * d)[0]
}

fn instances() -> impl Strategy<Value = Instance> {
    (any::<u64>(), 1usize..=4, 1usize..=6).prop_map(|(s, n, q)| instance(s, n, q))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn output_is_feasible_with_tight_active_rows(inst in instances()) {
        let res = project(&inst.estimate, &inst.w, &inst.a, &inst.b).unwrap();
        let slack = &inst.a * &res.estimate - &inst.b;
        prop_assert!(slack.max() <= 1e-8);
        for &i in &res.active {
            prop_assert!(slack[i].abs() <= 1e-8);
        }
        prop_assert!(res.multipliers.iter().all(|&m| m >= 0.0));
        if res.active.is_empty() {
            prop_assert_eq!(&res.estimate, &inst.estimate);
        }
    }

    #[test]
    fn projection_is_idempotent(inst in instances()) {
        let once = project(&inst.estimate, &inst.w, &inst.a, &inst.b).unwrap();
        let twice = project(&once.estimate, &inst.w, &inst.a, &inst.b).unwrap();
        prop_assert!((&twice.estimate - &once.estimate).amax() <= 1e-8 * (1.0 + once.estimate.amax()));
    }

    #[test]
    fn matches_enumeration_oracle(inst in instances()) {
        let res = project(&inst.estimate, &inst.w, &inst.a, &inst.b).unwrap();
        let oracle = qp_oracle(&inst.estimate, &inst.w, &inst.a, &inst.b).unwrap();
        prop_assert!((&res.estimate - &oracle).amax() <= 1e-8 * (1.0 + oracle.amax()));
        prop_assert!((objective(&res.estimate, &inst) - objective(&oracle, &inst)).abs()
            <= 1e-8 * (1.0 + objective(&oracle, &inst)));
    }

    #[test]
    fn gain_inverts_active_rows_and_splits_w_orthogonally(inst in instances()) {
        let res = project(&inst.estimate, &inst.w, &inst.a, &inst.b).unwrap();
        prop_assume!(res.is_active());
        let rows = res.active_rows(&inst.a);
        let k = res.active.len();
        prop_assert!((&rows * &res.gain - DMatrix::identity(k, k)).amax() <= 1e-8);
        let onto = &res.gain * &rows;
        let cross = res.complement.transpose() * &inst.w * &onto;
        prop_assert!(cross.amax() <= 1e-8 * (1.0 + inst.w.amax()));
        let covariance = inst.w.clone().try_inverse().unwrap();
        let short = &res.complement * &covariance;
        prop_assert!((short - &res.covariance).amax() <= 1e-8 * (1.0 + covariance.amax()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn no_feasible_point_beats_the_projection(inst in instances(), seed in any::<u64>()) {
        let res = project(&inst.estimate, &inst.w, &inst.a, &inst.b).unwrap();
        let best = objective(&res.estimate, &inst);
        let mut rng = common::rng(seed);
        let n = inst.estimate.len();
        let mut tried = 0;
        while tried < 1000 {
            let step = common::gaussian_vector(&mut rng, n) * rng.random_range(0.0..2.0);
            let z = &res.estimate + step;
            if (&inst.a * &z - &inst.b).max() > 0.0 {
                continue;
            }
            prop_assert!(objective(&z, &inst) >= best - 1e-9 * (1.0 + best));
            tried += 1;
        }
    }
}

#[test]
fn covariance_weighted_projections_agree_with_short_form() {
    let mut rng = common::rng(12);
    for _ in 0..200 {
        let p = common::random_spd(&mut rng, 2, 0.05);
        let row = common::gaussian_matrix(&mut rng, 1, 2);
        let e = common::gaussian_vector(&mut rng, 2);
        // Bound placed below the estimate along the row so it is violated.
        let bound = DVector::from_element(1, (&row * &e)[0] - 1.0);
        let rows = Halfspaces::new(row.clone(), bound.clone());
        let (d, pd, res) = project_attack(&e, &p, &rows).unwrap();
        assert_eq!(res.active, vec![0]);
        assert!(((&row * &d)[0] - bound[0]).abs() < 1e-10);
        assert!((&res.complement * &p - &pd).amax() < 1e-8);
        assert!(res.short_form_residual < 1e-8);
        assert!(pd.trace() < p.trace());
    }
}

#[test]
fn state_projection_moves_coupled_coordinates() {
    #[rustfmt::skip]
    let p = DMatrix::from_row_slice(4, 4, &[
        1.0, 0.3, 0.0, 0.0,
        0.3, 1.0, 0.2, 0.0,
        0.0, 0.2, 1.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
    ]);
    let x = DVector::from_vec(vec![10.0, 5.3, 0.1, 10.0]);
    let rows = Halfspaces::boxed(4, &[(1, 0.0, 5.0)]);
    let (xp, _, res) = project_state(&x, &p, &rows).unwrap();
    assert!((xp[1] - 5.0).abs() < 1e-12);
    // Shift is -γ (B̄ x - c̄) with γ = P B̄' / P₂₂.
    let shift = p.column(1) * (0.3 / p[(1, 1)]);
    assert!((&x - &xp - shift).amax() < 1e-12);
    assert_eq!(res.active.len(), 1);
}
