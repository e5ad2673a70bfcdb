use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cmvc_core::buffer::{
    build_indicator, cluster_then_sample, merge_buffer, PairSelection, SampleBudget, StructuralBuffer,
};
use cmvc_core::clustering::{clustering_accuracy, kmeans, nmi, purity, KMeansOptions};
use cmvc_core::fusion::{
    inner_objective, similarity_matrix, solve_partition, InnerOptions, PartitionMatrix, PartitionRole,
};
use cmvc_core::harness::verify::{random_buffer, random_orthonormal};
use cmvc_core::view::{extract_partition, ViewMatrix};

fn selection(n: usize, max_per_row: usize) -> impl Strategy<Value = PairSelection> {
    let row = move || proptest::collection::vec(0..n, 0..=max_per_row);
    (proptest::collection::vec(row(), n), proptest::collection::vec(row(), n)).prop_map(move |(p, q)| {
        let clean = |rows: Vec<Vec<usize>>| -> Vec<Vec<usize>> {
            rows.into_iter()
                .enumerate()
                .map(|(i, mut r)| {
                    r.retain(|&j| j != i);
                    r.sort_unstable();
                    r.dedup();
                    r
                })
                .collect()
        };
        let positives = clean(p);
        let negatives: Vec<Vec<usize>> = clean(q)
            .into_iter()
            .zip(&positives)
            .map(|(r, pos)| r.into_iter().filter(|j| !pos.contains(j)).collect())
            .collect();
        PairSelection { positives, negatives }
    })
}

fn assert_buffer_laws(b: &StructuralBuffer, per_view: usize) {
    let n = b.n();
    let (w_p, w_n) = b.weights();
    b.check_invariants().unwrap();
    for i in 0..n {
        assert_eq!(b.get(i, i), 0.0);
        for j in 0..n {
            let x = b.get(i, j);
            assert_eq!(x, b.get(j, i));
            assert!(x == 0.0 || x == w_p || x == -w_n);
        }
    }
    let cap = (n * (n - 1) / 2).min(per_view * b.views_merged() * n);
    assert!(b.len() <= cap, "{} > {cap}", b.len());
}

fn labels(n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
    proptest::collection::vec(0..k, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn buffers_stay_symmetric_bounded_and_order_free(
        a in selection(12, 3),
        b in selection(12, 3),
        c in selection(12, 3),
    ) {
        let ba = build_indicator(&a, 1.0, 0.2, 12).unwrap();
        let bb = build_indicator(&b, 1.0, 0.2, 12).unwrap();
        let bc = build_indicator(&c, 1.0, 0.2, 12).unwrap();
        for x in [&ba, &bb, &bc] {
            assert_buffer_laws(x, 6);
        }
        let ab = merge_buffer(&ba, &bb).unwrap();
        prop_assert_eq!(ab.to_text(), merge_buffer(&bb, &ba).unwrap().to_text());
        assert_buffer_laws(&ab, 6);
        let abc = merge_buffer(&ab, &bc).unwrap();
        let cba = merge_buffer(&merge_buffer(&bc, &bb).unwrap(), &ba).unwrap();
        prop_assert_eq!(abc.to_text(), cba.to_text());
        assert_buffer_laws(&abc, 6);
        // A pair present in the final buffer is never tombstoned.
        for (i, j, _) in abc.iter() {
            prop_assert!(!abc.is_tombstoned(i, j));
        }
    }

    #[test]
    fn buffer_text_round_trip(sel in selection(15, 4), w_p in 0.01f64..10.0, ratio in 1.0f64..9.0) {
        let b = build_indicator(&sel, w_p, w_p / ratio, 15).unwrap();
        let back = StructuralBuffer::from_text(&b.to_text()).unwrap();
        prop_assert_eq!(back.to_text(), b.to_text());
        prop_assert_eq!(back.to_dense(), b.to_dense());
    }

    #[test]
    fn metrics_ignore_label_names(truth in labels(25, 4), pred in labels(25, 5), shift in 1usize..5) {
        let renamed: Vec<usize> = pred.iter().map(|&p| (p + shift) % 5).collect();
        let acc = clustering_accuracy(&pred, &truth).unwrap();
        prop_assert!((acc - clustering_accuracy(&renamed, &truth).unwrap()).abs() < 1e-12);
        prop_assert!((nmi(&pred, &truth).unwrap() - nmi(&renamed, &truth).unwrap()).abs() < 1e-12);
        prop_assert!((purity(&pred, &truth).unwrap() - purity(&renamed, &truth).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_bounded_and_purity_dominates(truth in labels(30, 6), pred in labels(30, 6)) {
        let acc = clustering_accuracy(&pred, &truth).unwrap();
        let pur = purity(&pred, &truth).unwrap();
        let m = nmi(&pred, &truth).unwrap();
        for v in [acc, pur, m] {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
        prop_assert!(pur >= acc - 1e-12);
    }

    #[test]
    fn similarity_has_unit_trace_and_bounded_norm(seed in any::<u64>(), n in 2usize..30, k in 1usize..5) {
        let k = k.min(n);
        let h = random_orthonormal(n, k, &mut ChaCha8Rng::seed_from_u64(seed));
        let c = similarity_matrix(&h);
        prop_assert!((c.trace() - 1.0).abs() < 1e-12);
        prop_assert!((c.norm() - 1.0 / (k as f64).sqrt()).abs() < 1e-12);
        prop_assert!((&c - c.transpose()).amax() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn diagonal_shift_leaves_the_partition_unchanged(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, k) = (15, 3);
        let a = random_orthonormal(n, k, &mut rng) * 2.0 + DMatrix::from_fn(n, k, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.1);
        let w = random_buffer(n, 2, 2, 1.0, 0.2, seed).unwrap();
        let lt = 0.3;
        let opts = |extra_shift| InnerOptions { tol: 1e-15, max_iters: 20_000, extra_shift };
        let base = solve_partition(&a, lt, &w, None, &opts(0.0)).unwrap().h.into_values();
        let shifted = solve_partition(&a, lt, &w, None, &opts(10.0)).unwrap().h.into_values();
        // Both reach the same maximizer; the objective reported excludes the shift.
        let gap = (inner_objective(&base, &a, lt, &w) - inner_objective(&shifted, &a, lt, &w)).abs();
        prop_assert!(gap < 1e-8, "objective gap {gap}");
        prop_assert!((&base - &shifted).amax() < 1e-4, "partitions differ by {}", (&base - &shifted).amax());
    }

    #[test]
    fn extraction_commutes_with_row_permutation(seed in any::<u64>(), n in 8usize..40, k in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 6, |_, _| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng));
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let permuted = DMatrix::from_fn(n, 6, |i, j| x[(perm[i], j)]);
        let h = extract_partition(&ViewMatrix::new(x, 1).unwrap(), k).unwrap();
        let hp = extract_partition(&ViewMatrix::new(permuted, 1).unwrap(), k).unwrap();
        let mut restored = DMatrix::zeros(n, k);
        for (i, &p) in perm.iter().enumerate() {
            restored.set_row(p, &hp.values().row(i));
        }
        prop_assert!((&restored - h.values()).amax() < 1e-8, "max diff {}", (&restored - h.values()).amax());
    }

    #[test]
    fn exhaustive_selection_matches_brute_force(seed in any::<u64>(), n in 6usize..50, k in 2usize..4, m in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = PartitionMatrix::new(random_orthonormal(n, k, &mut rng), PartitionRole::PerView).unwrap();
        for (m_p, m_n) in [(m, m), (n - 1, n - 1)] {
            let got = cluster_then_sample(&h, k, SampleBudget::Full, m_p, m_n, seed).unwrap();
            let clusters = kmeans(h.values(), k, KMeansOptions::with_restarts(1), seed).unwrap().labels;
            let v = h.values();
            let cos = |i: usize, j: usize| {
                let (a, b) = (v.row(i), v.row(j));
                let d = a.norm() * b.norm();
                if d == 0.0 { 0.0 } else { a.dot(&b) / d }
            };
            for i in 0..n {
                let mut same: Vec<usize> = (0..n).filter(|&j| j != i && clusters[j] == clusters[i]).collect();
                let mut diff: Vec<usize> = (0..n).filter(|&j| clusters[j] != clusters[i]).collect();
                same.sort_by(|&a, &b| cos(i, b).total_cmp(&cos(i, a)).then(a.cmp(&b)));
                diff.sort_by(|&a, &b| cos(i, a).total_cmp(&cos(i, b)).then(a.cmp(&b)));
                same.truncate(m_p);
                diff.truncate(m_n);
                let mut gp = got.positives[i].clone();
                let mut gn = got.negatives[i].clone();
                gp.sort_unstable();
                gn.sort_unstable();
                same.sort_unstable();
                diff.sort_unstable();
                prop_assert_eq!(&gp, &same, "positives of {}", i);
                prop_assert_eq!(&gn, &diff, "negatives of {}", i);
            }
        }
    }
}
