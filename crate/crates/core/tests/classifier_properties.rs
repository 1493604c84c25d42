use std::collections::BTreeSet;

use pvcohort_core::classifier::{
    evaluate, loss_and_gradient, stratified_folds, train, FeatureConfig, GridSearchSpec, Label, LabeledPost,
    LinearModel, Optimizer, SparseVec,
};
use proptest::prelude::*;

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::S), Just(Label::Nr)]
}

fn instance() -> impl Strategy<Value = (Vec<SparseVec>, Vec<f64>, Vec<f64>, f64, f64)> {
    (2usize..6, 2usize..10).prop_flat_map(|(dim, n)| {
        (
            prop::collection::vec(prop::collection::vec((0..dim, -2.0f64..2.0), 0..dim), n),
            prop::collection::vec(prop::bool::ANY.prop_map(|b| f64::from(u8::from(b))), n),
            prop::collection::vec(-1.0f64..1.0, dim),
            -1.0f64..1.0,
            1e-3f64..1.0,
        )
            .prop_map(|(rows, y, w, b, l2)| {
                let rows = rows
                    .into_iter()
                    .map(|r| {
                        let mut r: Vec<(usize, f64)> = r;
                        r.sort_by_key(|e| e.0);
                        r.dedup_by_key(|e| e.0);
                        r
                    })
                    .collect();
                (rows, y, w, b, l2)
            })
    })
}

proptest! {
    #[test]
    fn gradient_matches_finite_differences((rows, y, w, b, l2) in instance()) {
        let (_, grad, grad_b) = loss_and_gradient(&rows, &y, &w, b, l2);
        let h = 1e-5;
        let loss = |w: &[f64], b: f64| loss_and_gradient(&rows, &y, w, b, l2).0;
        let mut numeric = Vec::new();
        for j in 0..w.len() {
            let (mut up, mut down) = (w.clone(), w.clone());
            up[j] += h;
            down[j] -= h;
            numeric.push((loss(&up, b) - loss(&down, b)) / (2.0 * h));
        }
        numeric.push((loss(&w, b + h) - loss(&w, b - h)) / (2.0 * h));
        let analytic: Vec<f64> = grad.into_iter().chain([grad_b]).collect();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let scale = norm(&analytic) + norm(&numeric);
        prop_assert!(norm(&diff) <= 1e-5 * scale.max(1e-12));
    }

    #[test]
    fn folds_are_stratified_partitions(labels in prop::collection::vec(label(), 5..80), k in 2usize..7, seed in any::<u64>()) {
        let folds = stratified_folds(&labels, k, seed);
        prop_assert_eq!(folds.len(), labels.len());
        prop_assert!(folds.iter().all(|&f| f < k));
        for class in [Label::S, Label::Nr] {
            let mut counts = vec![0usize; k];
            for (i, &f) in folds.iter().enumerate() {
                if labels[i] == class {
                    counts[f] += 1;
                }
            }
            prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn evaluate_ignores_order(pairs in prop::collection::vec((label(), label()), 1..40), rot in 0usize..40) {
        let pred: Vec<LabeledPost> = pairs.iter().enumerate().map(|(i, (p, _))| LabeledPost::new(&format!("p{i}"), *p)).collect();
        let gold: Vec<LabeledPost> = pairs.iter().enumerate().map(|(i, (_, g))| LabeledPost::new(&format!("p{i}"), *g)).collect();
        let a = evaluate(&pred, &gold).unwrap();
        let mut shuffled = pred.clone();
        shuffled.rotate_left(rot % pred.len());
        shuffled.reverse();
        let b = evaluate(&shuffled, &gold).unwrap();
        prop_assert_eq!(&a, &b);
        let c = &a.confusion;
        prop_assert_eq!(c.tp + c.fp + c.fn_ + c.tn, gold.len());
    }
}

#[test]
fn weights_match_vocabulary() {
    let texts = ["started tamoxifen today", "great cancer walk", "my chemo starts monday", "cancer research news"];
    let labels = [Label::S, Label::Nr, Label::S, Label::Nr];
    for use_length in [true, false] {
        let cfg = FeatureConfig {
            use_length,
            ..FeatureConfig::default()
        };
        let m = LinearModel::fit(&texts, &labels, &cfg, 0.01, Optimizer::default()).unwrap();
        assert_eq!(m.weights.len(), m.featurizer.vocabulary.len() + usize::from(use_length));
        assert!(m.featurizer.idf.iter().all(|&v| v >= 0.0));
        let back = LinearModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back.weights, m.weights);
        assert_eq!(back.score(texts[0]), m.score(texts[0]));
    }
}

#[test]
fn grid_search_is_reproducible() {
    let mut texts = Vec::new();
    let mut labels = Vec::new();
    for i in 0..15 {
        texts.push(format!("i started letrozole after my diagnosis week {i}"));
        labels.push(Label::S);
        texts.push(format!("fundraiser for cancer research in town {i}"));
        labels.push(Label::Nr);
    }
    let spec = GridSearchSpec {
        l2_penalties: vec![1e-3, 1e-1],
        ngram_ranges: vec![(1, 1), (1, 2)],
        folds: 3,
        seed: 11,
        ..GridSearchSpec::default()
    };
    let (m1, r1) = train(&texts, &labels, &spec).unwrap();
    let (m2, r2) = train(&texts, &labels, &spec).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(m1, m2);
    assert_eq!(r1.rows.len(), 4);
    let ids: BTreeSet<_> = r1.rows.iter().map(|r| (r.ngram_min, r.ngram_max, r.l2.to_bits())).collect();
    assert_eq!(ids.len(), 4);
}
