mod common;

use common::*;
use geomoed::geometry::*;
use proptest::prelude::*;

fn jac(rows: &[Vec<f64>]) -> JacobianMatrix {
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    JacobianMatrix::from_rows(&refs).unwrap()
}

fn shape_and_rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
    rows_between(1, 4)
}

fn rows_between(lo: usize, hi: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (lo..=hi)
        .prop_flat_map(|m| (Just(m), m..=8usize))
        .prop_flat_map(|(m, n)| prop::collection::vec(prop::collection::vec(-1.0f64..=1.0, n), m))
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(1000) })]

    #[test]
    fn volume_matches_qr_oracle(rows in shape_and_rows()) {
        let want = qr_volume(&rows);
        prop_assume!(want > 1e-6);
        let got = parallelepiped_measure(&jac(&rows)).unwrap();
        prop_assert!(rel(got, want) < 1e-10, "{got} vs {want}");
    }

    // det(J J^T) squares the condition number, so only a loose match
    #[test]
    fn volume_matches_gram_determinant(rows in shape_and_rows()) {
        let want = gram_volume(&rows);
        prop_assume!(want > 1e-6);
        let got = parallelepiped_measure(&jac(&rows)).unwrap();
        prop_assert!(rel(got, want) < 1e-5, "{got} vs {want}");
    }

    #[test]
    fn scaling_is_reciprocal_volume(rows in shape_and_rows()) {
        let j = jac(&rows);
        let se = local_scaling(&j, DEFAULT_RANK_TOL).unwrap();
        let vol = parallelepiped_measure(&j).unwrap();
        if se.is_finite() && vol > 0.0 {
            prop_assert!(rel(se * vol, 1.0) < 1e-10);
        }
    }

    #[test]
    fn three_skewness_routes_agree(rows in rows_between(2, 4)) {
        let j = jac(&rows);
        let svd = local_skewness_svd(&j, DEFAULT_RANK_TOL).unwrap();
        let gs = local_skewness_oracle(&j).unwrap();
        let ratio = skewness_as_scaling_ratio(&j, DEFAULT_RANK_TOL).unwrap();
        prop_assume!(svd.skewness.is_finite() && svd.skewness < 1e4);
        prop_assert!(rel(svd.skewness, gs.skewness) < 1e-8, "{} vs {}", svd.skewness, gs.skewness);
        prop_assert!(rel(svd.skewness, ratio) < 1e-8, "{} vs {}", svd.skewness, ratio);
        let gram_sk = gram_skewness(&rows);
        for (a, b) in svd.skewness_vector.iter().zip(&gram_sk) {
            prop_assert!(rel(*a, *b) < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn skewness_components_are_at_least_one(rows in shape_and_rows()) {
        let c = local_skewness_svd(&jac(&rows), DEFAULT_RANK_TOL).unwrap();
        for s in c.skewness_vector.iter().filter(|s| s.is_finite()) {
            prop_assert!(*s >= 1.0 - 1e-10);
        }
    }

    #[test]
    fn positive_row_scaling_leaves_skewness(rows in shape_and_rows(), d in prop::collection::vec(0.01f64..100.0, 4)) {
        let scaled: Vec<Vec<f64>> = rows.iter().zip(&d).map(|(r, s)| r.iter().map(|x| x * s).collect()).collect();
        let a = local_skewness_svd(&jac(&rows), DEFAULT_RANK_TOL).unwrap();
        let b = local_skewness_svd(&jac(&scaled), DEFAULT_RANK_TOL).unwrap();
        prop_assume!(a.skewness.is_finite() && a.skewness < 1e4);
        prop_assert!(rel(a.skewness, b.skewness) < 1e-8);
    }

    #[test]
    fn input_rotation_leaves_everything(rows in shape_and_rows(), seed in any::<u64>()) {
        let n = rows[0].len();
        let q = random_orthogonal(&mut rng(seed), n);
        let rotated = matmul(&rows, &q);
        let a = local_skewness_svd(&jac(&rows), DEFAULT_RANK_TOL).unwrap();
        let b = local_skewness_svd(&jac(&rotated), DEFAULT_RANK_TOL).unwrap();
        prop_assume!(a.skewness.is_finite() && a.skewness < 1e4);
        prop_assert!(rel(a.scaling, b.scaling) < 1e-8);
        prop_assert!(rel(a.skewness, b.skewness) < 1e-8);
        for (x, y) in a.singular_values.iter().zip(&b.singular_values) {
            prop_assert!((x - y).abs() < 1e-8 * a.singular_values[0]);
        }
    }

    #[test]
    fn rank_deficiency_is_consistent(rows in rows_between(2, 4), k in 0usize..4, c in -3.0f64..3.0) {
        let mut rows = rows;
        let k = k % rows.len();
        let src = (k + 1) % rows.len();
        rows[k] = rows[src].iter().map(|x| c * x).collect();
        let c = local_skewness_svd(&jac(&rows), DEFAULT_RANK_TOL).unwrap();
        prop_assert_eq!(c.scaling.is_infinite(), c.skewness.is_infinite());
        prop_assert!(c.rank_deficient);
        prop_assert!(c.scaling.is_infinite());
    }
}

#[test]
fn orthogonal_row_has_unit_skewness() {
    // row 2 is orthogonal to rows 0 and 1; those two are not orthogonal
    let rows = vec![vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 2.0]];
    let c = local_skewness_svd(&jac(&rows), DEFAULT_RANK_TOL).unwrap();
    assert!((c.skewness_vector[2] - 1.0).abs() < 1e-10);
    assert!(c.skewness_vector[0] > 1.0 + 1e-3);
    assert!(c.skewness_vector[1] > 1.0 + 1e-3);
}

#[test]
fn orthogonal_rows_give_unit_skewness_everywhere() {
    let rows = vec![vec![2.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, -3.0, 0.0], vec![0.0, 0.5, 0.0, 0.0]];
    let c = local_skewness_svd(&jac(&rows), DEFAULT_RANK_TOL).unwrap();
    assert!(c.skewness_vector.iter().all(|s| (s - 1.0).abs() < 1e-12));
    assert!((c.scaling - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn near_singular_volume_matches_qr() {
    let rows = vec![
        vec![-0.6472082696916324, -0.8223423973089347, -0.5046237544137795],
        vec![0.3723467011597259, -0.730535481470412, -0.639727690707179],
        vec![-0.8846936368054372, 0.32655731907719254, 0.4310953563558429],
    ];
    let got = parallelepiped_measure(&jac(&rows)).unwrap();
    assert!(rel(got, qr_volume(&rows)) < 1e-10);
    assert!(rel(got, det(rows.clone()).abs()) < 1e-10);
}
