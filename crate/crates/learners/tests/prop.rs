use opiaid_learners::{predict, train, Family, FeatureMatrix, Hyper, LearnerKind, Prediction};
use proptest::prelude::*;

fn data() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (8usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 2), n),
            prop::collection::vec(0u8..3, n),
        )
            .prop_map(|(x, y)| {
                let mut y: Vec<f64> = y.into_iter().map(f64::from).collect();
                y[0] = 0.0;
                y[1] = 1.0;
                (x, y)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn probabilities_are_valid((rows, y) in data(), seed in 0u64..1000) {
        let x = FeatureMatrix::continuous(&rows).unwrap();
        for family in [
            Family::MultinomialLogistic,
            Family::Knn,
            Family::DecisionTree,
            Family::GaussianNaiveBayes,
            Family::GradientBoostedTrees,
            Family::LinearSvm,
        ] {
            let hyper = match family {
                Family::GradientBoostedTrees => Hyper::new().with("n_rounds", 10.0),
                Family::MultinomialLogistic => Hyper::new().with("epochs", 30.0),
                _ => Hyper::new(),
            };
            let m = train(LearnerKind::classification(family), &x, &y, &hyper, seed).unwrap();
            let Prediction::Probabilities { rows, .. } = predict(&m, &x).unwrap() else {
                panic!("expected probabilities");
            };
            for p in rows {
                prop_assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0 && *v <= 1.0));
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
