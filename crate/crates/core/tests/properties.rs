use std::collections::HashSet;

use phyto_core::metrics::ConfusionMatrix;
use phyto_core::{stratified_split, SplitRatios};
use proptest::prelude::*;

/// Per-class tallies straight from the label sequences, no matrix involved.
struct Tally {
    accuracy: f64,
    precision: Vec<f64>,
    recall: Vec<f64>,
}

fn brute_force(y_true: &[usize], y_pred: &[usize], k: usize) -> Tally {
    let n = y_true.len();
    let correct = y_true.iter().zip(y_pred).filter(|(t, p)| t == p).count();
    let mut precision = Vec::new();
    let mut recall = Vec::new();
    for c in 0..k {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for i in 0..n {
            match (y_true[i] == c, y_pred[i] == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        precision.push(if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 });
        recall.push(if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 });
    }
    Tally { accuracy: correct as f64 / n as f64, precision, recall }
}

fn labels() -> impl Strategy<Value = (usize, Vec<usize>, Vec<usize>)> {
    (2usize..=11, 1usize..=200)
        .prop_flat_map(|(k, n)| (Just(k), prop::collection::vec(0..k, n), prop::collection::vec(0..k, n)))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matrix_metrics_match_brute_force((k, y_true, y_pred) in labels()) {
        let cm = ConfusionMatrix::from_labels(&y_true, &y_pred, k).unwrap();
        let oracle = brute_force(&y_true, &y_pred, k);
        prop_assert_eq!(cm.total() as usize, y_true.len());
        prop_assert!(close(cm.accuracy().unwrap(), oracle.accuracy));
        for (a, b) in cm.precision_per_class().iter().zip(&oracle.precision) {
            prop_assert!(close(*a, *b));
        }
        for (a, b) in cm.recall_per_class().iter().zip(&oracle.recall) {
            prop_assert!(close(*a, *b));
        }
        let macro_p = oracle.precision.iter().sum::<f64>() / k as f64;
        let macro_r = oracle.recall.iter().sum::<f64>() / k as f64;
        prop_assert!(close(cm.macro_precision(), macro_p));
        prop_assert!(close(cm.macro_recall(), macro_r));
        for v in [cm.accuracy().unwrap(), cm.macro_precision(), cm.macro_recall(),
                  cm.weighted_precision(), cm.weighted_recall()] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn per_class_accuracy_is_row_division((k, y_true, y_pred) in labels()) {
        let cm = ConfusionMatrix::from_labels(&y_true, &y_pred, k).unwrap();
        for (c, acc) in cm.per_class_accuracy().into_iter().enumerate() {
            let row: u64 = cm.rows().nth(c).unwrap().iter().sum();
            let diag = cm.rows().nth(c).unwrap()[c];
            match acc {
                Some(a) => prop_assert!(close(a, diag as f64 / row as f64)),
                None => prop_assert_eq!(row, 0),
            }
        }
    }

    #[test]
    fn sample_order_does_not_matter((k, y_true, y_pred) in labels(), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..y_true.len()).collect();
        // deterministic shuffle via a simple LCG, independent of the library
        let mut s = seed | 1;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let t2: Vec<usize> = order.iter().map(|&i| y_true[i]).collect();
        let p2: Vec<usize> = order.iter().map(|&i| y_pred[i]).collect();
        let a = ConfusionMatrix::from_labels(&y_true, &y_pred, k).unwrap();
        let b = ConfusionMatrix::from_labels(&t2, &p2, k).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn relabeling_permutes_per_class_vectors(
        (k, y_true, y_pred) in labels(),
        keys in prop::collection::vec(any::<u32>(), 11),
    ) {
        let mut perm: Vec<usize> = (0..k).collect();
        perm.sort_by_key(|&i| (keys[i], i));
        let relabel = |ys: &[usize]| ys.iter().map(|&y| perm[y]).collect::<Vec<_>>();
        let a = ConfusionMatrix::from_labels(&y_true, &y_pred, k).unwrap();
        let b = ConfusionMatrix::from_labels(&relabel(&y_true), &relabel(&y_pred), k).unwrap();
        prop_assert_eq!(&a.permuted(&perm), &b);
        prop_assert_eq!(a.accuracy().unwrap(), b.accuracy().unwrap());
        prop_assert!(close(a.macro_precision(), b.macro_precision()));
        prop_assert!(close(a.macro_recall(), b.macro_recall()));
        let (pa, pb) = (a.precision_per_class(), b.precision_per_class());
        let (ra, rb) = (a.recall_per_class(), b.recall_per_class());
        for c in 0..k {
            prop_assert_eq!(pa[c], pb[perm[c]]);
            prop_assert_eq!(ra[c], rb[perm[c]]);
        }
    }

    #[test]
    fn balanced_macro_recall_is_mean_per_class_accuracy(
        k in 2usize..=11,
        per_class in 1usize..=20,
        preds in prop::collection::vec(0usize..11, 220),
    ) {
        let y_true: Vec<usize> = (0..k).flat_map(|c| std::iter::repeat_n(c, per_class)).collect();
        let y_pred: Vec<usize> = y_true.iter().enumerate().map(|(i, _)| preds[i] % k).collect();
        let cm = ConfusionMatrix::from_labels(&y_true, &y_pred, k).unwrap();
        let accs: Vec<f64> = cm.per_class_accuracy().into_iter().map(Option::unwrap).collect();
        prop_assert_eq!(cm.macro_recall(), accs.iter().sum::<f64>() / k as f64);
    }
}

fn manifest() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(5usize..=200, 2..=11)
}

fn ratios() -> impl Strategy<Value = SplitRatios> {
    (0u32..=100, 0u32..=100).prop_map(|(a, b)| {
        let train = a as f64 / 100.0;
        let val = (1.0 - train) * b as f64 / 100.0;
        SplitRatios::new(train, val, 1.0 - train - val).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn split_partitions_and_stratifies(sizes in manifest(), r in ratios(), seed in any::<u64>()) {
        let items: Vec<(String, usize)> = sizes
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| (0..n).map(move |i| (format!("{c}/{i}.png"), c)))
            .collect();
        let run = || {
            stratified_split(items.iter().map(|(s, c)| (s.as_str(), *c)), sizes.len(), r, seed).unwrap()
        };
        let s = run();
        let train: HashSet<&String> = s.train.iter().collect();
        let val: HashSet<&String> = s.val.iter().collect();
        let test: HashSet<&String> = s.test.iter().collect();
        prop_assert!(train.is_disjoint(&val) && train.is_disjoint(&test) && val.is_disjoint(&test));
        prop_assert_eq!(train.len() + val.len() + test.len(), items.len());
        let all: HashSet<&String> = items.iter().map(|(s, _)| s).collect();
        prop_assert_eq!(&train.union(&val).copied().collect::<HashSet<_>>().union(&test).copied().collect::<HashSet<_>>(), &all);

        for (c, &n) in sizes.iter().enumerate() {
            let prefix = format!("{c}/");
            let count = |v: &Vec<String>| v.iter().filter(|id| id.starts_with(&prefix)).count();
            let expect_train = (n as f64 * r.train() + 1e-9).floor() as usize;
            let expect_val = (n as f64 * r.val() + 1e-9).floor() as usize;
            prop_assert_eq!(count(&s.train), expect_train);
            prop_assert_eq!(count(&s.val), expect_val);
            prop_assert_eq!(count(&s.test), n - expect_train - expect_val);
        }
        prop_assert_eq!(s, run());
    }
}
