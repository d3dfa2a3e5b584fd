use airshadow_core::models::tree::Node;
use airshadow_core::models::{argmax, load_model, save_model, train, ClassifierError, Fitted, ModelSpec, TrainedModel};
use airshadow_core::ActivityLabel;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LABELS: [ActivityLabel; 3] = [ActivityLabel::Enter, ActivityLabel::Exit, ActivityLabel::Eating];

/// Three noisy Gaussian blobs in `f` dimensions.
fn blobs(n: usize, f: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<ActivityLabel>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let c = i % 3;
        x.push((0..f).map(|j| (c * (j + 1)) as f64 + rng.gen_range(-1.5..1.5)).collect());
        y.push(LABELS[c]);
    }
    (x, y)
}

fn random_points(n: usize, f: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..f).map(|_| rng.gen_range(-2.0..8.0)).collect()).collect()
}

fn small_specs() -> Vec<ModelSpec> {
    let mut mlp = ModelSpec::mlp(&[8, 8]);
    mlp.epochs = Some(20);
    let mut lr = ModelSpec::logistic_regression();
    lr.epochs = Some(200);
    vec![
        ModelSpec::decision_tree(5),
        ModelSpec::random_forest(7, 4),
        ModelSpec::knn(3),
        ModelSpec::gaussian_nb(),
        lr,
        mlp,
    ]
}

fn saved(model: &TrainedModel) -> Vec<u8> {
    let mut buf = Vec::new();
    save_model(model, &mut buf).unwrap();
    buf
}

#[test]
fn save_load_predicts_identically() {
    let (x, y) = blobs(60, 4, 1);
    let probes = random_points(100, 4, 2);
    for spec in small_specs() {
        let model = train(&spec.clone().with_seed(5), &x, &y).unwrap();
        let back = load_model(saved(&model).as_slice()).unwrap();
        assert_eq!(back, model, "{}", spec.family);
        for p in &probes {
            let a = model.predict_scores(p).unwrap();
            let b = back.predict_scores(p).unwrap();
            assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}

#[test]
fn damaged_files_are_rejected() {
    let (x, y) = blobs(30, 2, 3);
    let bytes = saved(&train(&ModelSpec::random_forest(3, 3), &x, &y).unwrap());
    for cut in [0, 10, bytes.len() / 2, bytes.len() - 3] {
        assert!(
            matches!(load_model(&bytes[..cut]), Err(ClassifierError::CorruptModel(_))),
            "cut at {cut}"
        );
    }
    let text = String::from_utf8(bytes).unwrap();
    let future = text.replacen("airshadow-model v1", "airshadow-model v2", 1);
    assert!(matches!(load_model(future.as_bytes()), Err(ClassifierError::VersionMismatch(v)) if v == "2"));
    let relabeled = text.replacen("family random_forest", "family mlp", 1);
    assert!(matches!(load_model(relabeled.as_bytes()), Err(ClassifierError::CorruptModel(_))));
}

/// Gaussian class-conditional posterior written out from the textbook rule.
fn bayes_oracle(x: &[Vec<f64>], y: &[ActivityLabel], classes: &[ActivityLabel], q: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let all: Vec<f64> = x.iter().map(|r| r[0]).collect();
    let mu_all = all.iter().sum::<f64>() / n;
    let var_all = all.iter().map(|v| (v - mu_all).powi(2)).sum::<f64>() / n;
    let eps = 1e-9 * var_all;
    let joint: Vec<f64> = classes
        .iter()
        .map(|c| {
            let v: Vec<f64> = all.iter().zip(y).filter(|(_, l)| *l == c).map(|(v, _)| *v).collect();
            let m = v.len() as f64;
            let mu = v.iter().sum::<f64>() / m;
            let var = v.iter().map(|t| (t - mu).powi(2)).sum::<f64>() / m + eps;
            let density = (-(q - mu).powi(2) / (2.0 * var)).exp() / (std::f64::consts::TAU * var).sqrt();
            (m / n) * density
        })
        .collect();
    let total: f64 = joint.iter().sum();
    joint.iter().map(|j| j / total).collect()
}

#[test]
fn gaussian_nb_matches_bayes_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..40 {
        let (c, centre) = if i % 4 == 0 { (LABELS[1], 3.0) } else { (LABELS[0], -1.0) };
        x.push(vec![centre + rng.gen_range(-2.0..2.0)]);
        y.push(c);
    }
    let model = train(&ModelSpec::gaussian_nb(), &x, &y).unwrap();
    for i in 0..=60 {
        let q = -6.0 + i as f64 * 0.2;
        let got = model.predict_scores(&[q]).unwrap();
        let want = bayes_oracle(&x, &y, &model.classes, q);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "q={q}: {got:?} vs {want:?}");
        }
    }
}

#[test]
fn gaussian_nb_separated_clusters_go_to_nearer_one() {
    let x: Vec<Vec<f64>> = [-10.2, -10.0, -9.7, -9.9, 10.1, 9.8, 10.3, 9.9].iter().map(|&v| vec![v]).collect();
    let y = [[LABELS[0]; 4], [LABELS[1]; 4]].concat();
    let model = train(&ModelSpec::gaussian_nb(), &x, &y).unwrap();
    for q in [-30.0, -12.0, -8.0, -1.0, 1.0, 8.0, 12.0, 30.0] {
        let want = if q < 0.0 { LABELS[0] } else { LABELS[1] };
        assert_eq!(model.predict(&[q]).unwrap(), want, "{q}");
    }
}

#[test]
fn forest_of_one_equals_lone_tree() {
    let (x, y) = blobs(90, 5, 7);
    let tree = train(&ModelSpec::decision_tree(6).with_seed(3), &x, &y).unwrap();
    let mut spec = ModelSpec::random_forest(1, 6).with_seed(3);
    spec.bootstrap = false;
    spec.max_features = Some(5);
    let forest = train(&spec, &x, &y).unwrap();
    let (Fitted::Tree(t), Fitted::Forest { trees }) = (&tree.fitted, &forest.fitted) else {
        panic!("unexpected model kinds");
    };
    assert_eq!(trees.len(), 1);
    assert_eq!(&trees[0], t);
    for p in random_points(100, 5, 8) {
        assert_eq!(tree.predict_scores(&p).unwrap(), forest.predict_scores(&p).unwrap());
    }
}

fn split_features(m: &TrainedModel) -> Vec<Vec<Option<usize>>> {
    let trees = match &m.fitted {
        Fitted::Tree(t) => vec![t],
        Fitted::Forest { trees } => trees.iter().collect(),
        _ => unreachable!(),
    };
    trees
        .iter()
        .map(|t| {
            t.nodes
                .iter()
                .map(|n| match n {
                    Node::Split { feature, .. } => Some(*feature),
                    Node::Leaf { .. } => None,
                })
                .collect()
        })
        .collect()
}

#[test]
fn positive_scaling_keeps_trees_and_predictions() {
    let (x, y) = blobs(120, 4, 9);
    let probes = random_points(100, 4, 10);
    for a in [4.0, 0.37, 1234.5] {
        let xs: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| v * a).collect()).collect();
        for spec in [ModelSpec::decision_tree(8), ModelSpec::random_forest(15, 6)] {
            let m = train(&spec, &x, &y).unwrap();
            let ms = train(&spec, &xs, &y).unwrap();
            assert_eq!(split_features(&m), split_features(&ms));
            for p in &probes {
                let ps: Vec<f64> = p.iter().map(|v| v * a).collect();
                assert_eq!(m.predict(p).unwrap(), ms.predict(&ps).unwrap());
            }
        }
    }
}

#[test]
fn nearest_neighbour_recalls_training_set() {
    let (x, y) = blobs(150, 3, 12);
    let m = train(&ModelSpec::knn(1), &x, &y).unwrap();
    for (r, l) in x.iter().zip(&y) {
        assert_eq!(m.predict(r).unwrap(), *l);
    }
}

#[test]
fn training_is_deterministic() {
    let (x, y) = blobs(45, 3, 13);
    for spec in small_specs() {
        let spec = spec.with_seed(99);
        assert_eq!(train(&spec, &x, &y).unwrap(), train(&spec, &x, &y).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scores_are_distributions_and_predict_is_argmax(seed in any::<u64>(), n in 6usize..40, f in 1usize..5) {
        let (x, y) = blobs(n, f, seed);
        let probes = random_points(10, f, seed ^ 1);
        for spec in small_specs() {
            let m = train(&spec.with_seed(seed), &x, &y).unwrap();
            for p in &probes {
                let s = m.predict_scores(p).unwrap();
                prop_assert_eq!(s.len(), m.classes.len());
                prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(s.iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
                prop_assert_eq!(m.predict(p).unwrap(), m.classes[argmax(&s)]);
            }
        }
    }
}
