use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::lmm::mean_map_objective;
use super::*;
use crate::bagcore::Instance;

fn bag(id: &str, rows: &[Vec<f64>], extent: f64) -> Bag {
    let inst = rows.iter().enumerate().map(|(j, r)| Instance::new(j.to_string(), r.clone())).collect();
    let mut b = Bag::new(id, inst).unwrap();
    b.set_extent(extent).unwrap();
    b
}

/// Bags of 2-D instances; positives centred at (`shift`, `shift`),
/// negatives at the origin, unit noise. Returns bags and true labels.
fn synthetic(n_bags: usize, size: usize, shift: f64, seed: u64, extent_of: impl Fn(usize) -> usize) -> (Vec<Bag>, Vec<Vec<bool>>) {
    let mut rng = crate::seed::rng(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut bags = Vec::new();
    let mut truth = Vec::new();
    for i in 0..n_bags {
        let pos = extent_of(i).min(size);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for j in 0..size {
            let c = if j < pos { shift } else { 0.0 };
            rows.push(vec![c + noise.sample(&mut rng), c + noise.sample(&mut rng)]);
            labels.push(j < pos);
        }
        bags.push(bag(&format!("b{i}"), &rows, pos as f64 / size as f64));
        truth.push(labels);
    }
    (bags, truth)
}

fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                den += 1.0;
                num += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    num / den
}

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
        assert_eq!(default_grid(m)[0].method(), m);
    }
    assert!("forest".parse::<Method>().is_err());
    assert_eq!(default_grid(Method::Misvm).len(), 12);
    assert_eq!(default_grid(Method::Psvm).len(), 48);
    assert_eq!(default_grid(Method::Lmm).len(), 168);
}

#[test]
fn hyperparams_validation() {
    assert!(Hyperparams::Svm { kernel: Kernel::Linear, c: 0.0 }.validate().is_err());
    assert!(Hyperparams::Svm { kernel: Kernel::Rbf { gamma: -1.0 }, c: 1.0 }.validate().is_err());
    assert!(Hyperparams::Cms { k: vec![] }.validate().is_err());
    assert!(Hyperparams::Lmm { lambda: -1.0, gamma: 0.1, sigma: 0.1 }.validate().is_err());
    for m in Method::ALL {
        for h in default_grid(m) {
            h.validate().unwrap();
        }
    }
}

#[test]
fn mi_relabel_clauses() {
    assert_eq!(mi_relabel(false, &[0.9, 0.9], true), vec![false, false]);
    assert_eq!(mi_relabel(true, &[0.3, 0.4, 0.2], false), vec![false, true, false]);
    assert_eq!(mi_relabel(true, &[0.7, 0.2], true), vec![true, false]);
    assert_eq!(mi_relabel(true, &[0.4, 0.4, 0.1], false), vec![true, false, false]);
}

/// Binomial bag term times instance likelihood, evaluated directly.
fn plog_objective(extent: f64, probs: &[f64], labels: &[bool]) -> f64 {
    let n = probs.len() as f64;
    let q = labels.iter().filter(|&&v| v).count() as f64 / n;
    let nz = extent * n;
    let bag = q.powf(nz) * (1.0 - q).powf(n - nz);
    let inst: f64 = probs.iter().zip(labels).map(|(&p, &y)| if y { p } else { 1.0 - p }).product();
    bag * inst
}

fn psvm_cost(extent: f64, f: &[f64], labels: &[bool], c: f64, c2: f64) -> f64 {
    let n = f.len() as f64;
    let hinge: f64 = f.iter().zip(labels).map(|(&fj, &y)| (1.0 - if y { fj } else { -fj }).max(0.0)).sum();
    let q = labels.iter().filter(|&&v| v).count() as f64 / n;
    c * hinge + c2 * n * (q - extent).abs()
}

fn all_labelings(n: usize) -> impl Iterator<Item = Vec<bool>> {
    (0..1u32 << n).map(move |mask| (0..n).map(|j| mask >> j & 1 == 1).collect())
}

#[test]
fn greedy_examples() {
    assert_eq!(greedy_bag_labeling(1.0 / 3.0, &[0.9, 0.2, 0.1]), vec![true, false, false]);
    assert_eq!(greedy_bag_labeling(0.0, &[0.3, 0.1, 0.45]), vec![false; 3]);
    // a bag term that rules out zero positives overrides a certain negative
    let l = greedy_bag_labeling(0.5, &[0.0, 1.0]);
    assert_eq!(l, vec![false, true]);
}

proptest! {
    #[test]
    fn greedy_matches_exhaustive_search(
        probs in prop::collection::vec(0.01f64..0.99, 1..=4),
        z in 0.0f64..=1.0,
    ) {
        let best = all_labelings(probs.len())
            .map(|l| plog_objective(z, &probs, &l))
            .fold(f64::NEG_INFINITY, f64::max);
        let greedy = greedy_bag_labeling(z, &probs);
        let got = plog_objective(z, &probs, &greedy);
        prop_assert!((got - best).abs() <= 1e-12 * best.max(1e-300), "{got} vs {best}");
    }

    #[test]
    fn psvm_labeling_matches_exhaustive_search(
        f in prop::collection::vec(-3.0f64..3.0, 1..=4),
        z in 0.0f64..=1.0,
        c in prop::sample::select(vec![0.1, 1.0, 10.0, 100.0]),
        c2 in prop::sample::select(vec![1.0, 10.0, 100.0, 1000.0]),
    ) {
        let best = all_labelings(f.len()).map(|l| psvm_cost(z, &f, &l, c, c2)).fold(f64::INFINITY, f64::min);
        let got = psvm_cost(z, &f, &psvm_bag_labeling(z, &f, c, c2), c, c2);
        prop_assert!((got - best).abs() <= 1e-9 * best.max(1.0));
    }

    #[test]
    fn greedy_unique_optimum_is_found(seed in any::<u64>()) {
        let mut rng = crate::seed::rng(seed);
        let n = rng.random_range(1..=4);
        let probs: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let z = rng.random_range(0..=n) as f64 / n as f64;
        let mut scored: Vec<(f64, Vec<bool>)> = all_labelings(n).map(|l| (plog_objective(z, &probs, &l), l)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        if scored.len() == 1 || scored[0].0 > scored[1].0 * (1.0 + 1e-9) {
            prop_assert_eq!(greedy_bag_labeling(z, &probs), scored[0].1.clone());
        }
    }
}

/// Grid scan written out with the strict comparison, no sorting.
fn threshold_oracle(probs: &[Vec<f64>], extents: &[f64]) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..=100 {
        let t = k as f64 / 100.0;
        let mae = probs
            .iter()
            .zip(extents)
            .map(|(p, z)| (p.iter().filter(|&&v| v > t).count() as f64 / p.len() as f64 - z).abs())
            .sum::<f64>()
            / extents.len() as f64;
        if mae < best.0 {
            best = (mae, t);
        }
    }
    best.1
}

#[test]
fn threshold_examples() {
    let probs = vec![vec![0.5; 4], vec![0.5; 3]];
    assert_eq!(threshold_from_probabilities(&probs, &[0.0, 0.0]).unwrap(), 0.5);
    let toy = vec![vec![0.0, 1.0, 1.0], vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 0.0]];
    let z = [2.0 / 3.0, 0.0, 0.25];
    let t = threshold_from_probabilities(&toy, &z).unwrap();
    assert_eq!(t, threshold_oracle(&toy, &z));
    assert_eq!(t, 0.0);
    let shifted = vec![vec![0.02, 0.9], vec![0.03, 0.04]];
    assert_eq!(threshold_from_probabilities(&shifted, &[0.5, 0.0]).unwrap(), 0.04);
}

proptest! {
    #[test]
    fn threshold_matches_grid_scan(
        probs in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 1..8), 1..6),
        seed in any::<u64>(),
    ) {
        let mut rng = crate::seed::rng(seed);
        let z: Vec<f64> = probs.iter().map(|p| rng.random_range(0..=p.len()) as f64 / p.len() as f64).collect();
        let t = threshold_from_probabilities(&probs, &z).unwrap();
        prop_assert_eq!(t, threshold_oracle(&probs, &z));
        prop_assert!((0..=100).any(|k| k as f64 / 100.0 == t));
    }
}

fn linear_model(w: f64, b: f64, t: f64) -> TrainedBagModel {
    TrainedBagModel {
        classifier: WeakClassifierSpec::new(Hyperparams::Log { reduce: false }, 0),
        preprocessing: Preprocessing::default(),
        params: LearnerModel::Linear(LinearModel { weights: vec![w], bias: b }),
        instance_threshold: t,
        training: TrainingInfo::single(),
    }
}

#[test]
fn predict_extent_examples() {
    let model = linear_model(1.0, 0.0, 0.5);
    let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![if i < 9 { 2.0 } else { -2.0 }]).collect();
    assert_eq!(predict_extent(&model, &bag("a", &rows, 0.0)).unwrap(), 0.09);
    let low: Vec<Vec<f64>> = (0..5).map(|_| vec![-5.0]).collect();
    assert_eq!(predict_extent(&model, &bag("b", &low, 0.0)).unwrap(), 0.0);
    let wrong = bag("c", &[vec![1.0, 2.0]], 0.0);
    assert!(matches!(predict_extent(&model, &wrong), Err(Error::Domain(_))));
}

#[test]
fn simple_strategy_separable_bags() {
    let pos: Vec<Vec<f64>> = (0..5).map(|i| vec![3.0 + i as f64 * 0.1, 1.0]).collect();
    let neg: Vec<Vec<f64>> = (0..5).map(|i| vec![-3.0 - i as f64 * 0.1, 1.0]).collect();
    let bags = vec![bag("p", &pos, 1.0), bag("n", &neg, 0.0)];
    for h in [
        Hyperparams::Log { reduce: false },
        Hyperparams::Svm { kernel: Kernel::Linear, c: 10.0 },
        Hyperparams::Svm { kernel: Kernel::Rbf { gamma: 0.1 }, c: 10.0 },
    ] {
        let m = train(&WeakClassifierSpec::new(h.clone(), 3), &bags).unwrap();
        let mut scores = m.instance_probabilities(&bags[0]).unwrap();
        scores.extend(m.instance_probabilities(&bags[1]).unwrap());
        let labels: Vec<bool> = (0..10).map(|i| i < 5).collect();
        assert_eq!(auc(&scores, &labels), 1.0, "{h:?}");
        assert_eq!(m.predict_extent(&bags[0]).unwrap(), 1.0);
        assert_eq!(m.predict_extent(&bags[1]).unwrap(), 0.0);
    }
}

#[test]
fn simple_strategy_degenerate_labels() {
    let rows: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64, 1.0 - i as f64 * 0.3]).collect();
    let bags = vec![bag("a", &rows, 0.0), bag("b", &rows, 0.0)];
    let svm = train(&WeakClassifierSpec::new(Hyperparams::Svm { kernel: Kernel::Linear, c: 1.0 }, 0), &bags).unwrap();
    assert!(matches!(svm.params, LearnerModel::Prior { probability } if probability == 0.0));
    let log = train(&WeakClassifierSpec::new(Hyperparams::Log { reduce: false }, 0), &bags).unwrap();
    assert_eq!(log.predict_extent(&bags[0]).unwrap(), 0.0);
    let mil = train(&WeakClassifierSpec::new(Hyperparams::Misvm { kernel: Kernel::Linear, c: 1.0 }, 0), &bags).unwrap();
    assert!(matches!(mil.params, LearnerModel::Prior { .. }));
}

#[test]
fn beta_orders_instances_by_bag_extent() {
    // three bags with separable instance distributions and extents 0, 0.5, 1
    let mut rng = crate::seed::rng(5);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut bags = Vec::new();
    for (i, (centre, z)) in [(-2.0, 0.0), (0.0, 0.5), (2.0, 1.0)].iter().enumerate() {
        let rows: Vec<Vec<f64>> = (0..40).map(|_| vec![centre + noise.sample(&mut rng), noise.sample(&mut rng)]).collect();
        bags.push(bag(&format!("b{i}"), &rows, *z));
    }
    for reduce in [false, true] {
        let m = train(&WeakClassifierSpec::new(Hyperparams::Beta { reduce }, 1), &bags).unwrap();
        let means: Vec<f64> = bags
            .iter()
            .map(|b| {
                let p = m.instance_probabilities(b).unwrap();
                p.iter().sum::<f64>() / p.len() as f64
            })
            .collect();
        assert!(means[0] < means[1] && means[1] < means[2], "{means:?}");
    }
}

#[test]
fn single_instance_bags_are_supervised_learning() {
    let (bags, _) = synthetic(60, 1, 4.0, 11, |i| i % 2);
    let mut sup_x = Vec::new();
    let mut sup_y = Vec::new();
    for b in &bags {
        sup_x.push(b.instances[0].features.clone());
        sup_y.push(b.extent.unwrap() > 0.0);
    }
    let direct = fit_logistic(&Matrix::from_rows(&sup_x).unwrap(), &sup_y, None).unwrap();
    let m = train(&WeakClassifierSpec::new(Hyperparams::Log { reduce: false }, 0), &bags).unwrap();
    assert_eq!(m.params, LearnerModel::Linear(direct));
}

#[test]
fn mil_relabeling_recovers_witnesses() {
    // positive bags hold exactly one shifted instance among ten
    let (bags, truth) = synthetic(80, 10, 5.0, 21, |i| i % 2);
    for h in [Hyperparams::Milog, Hyperparams::Misvm { kernel: Kernel::Linear, c: 1.0 }] {
        let m = train(&WeakClassifierSpec::new(h.clone(), 2), &bags).unwrap();
        assert!(m.training.iterations <= MAX_RELABEL_ITERATIONS);
        let (mut hit, mut total) = (0, 0);
        for (b, t) in bags.iter().zip(&truth) {
            let p = m.instance_probabilities(b).unwrap();
            let argmax = (0..p.len()).max_by(|&a, &c| p[a].total_cmp(&p[c])).unwrap();
            if t.iter().any(|&v| v) {
                total += 1;
                hit += t[argmax] as usize;
            }
        }
        let recall = hit as f64 / total as f64;
        assert!(recall >= 0.9, "{h:?}: recall {recall}");
    }
}

#[test]
fn llp_relabeling_with_exact_proportions() {
    let (bags, _) = synthetic(30, 10, 8.0, 31, |i| i % 11);
    for h in [Hyperparams::Plog, Hyperparams::Psvm { kernel: Kernel::Linear, c: 1.0, c2: 10.0 }] {
        let m = train(&WeakClassifierSpec::new(h.clone(), 4), &bags).unwrap();
        assert!(m.training.iterations <= MAX_RELABEL_ITERATIONS);
        for b in &bags {
            let p = m.instance_probabilities(b).unwrap();
            let count = p.iter().filter(|&&v| v > 0.5).count();
            let want = (b.extent.unwrap() * b.len() as f64).round() as usize;
            assert_eq!(count, want, "{h:?} bag {}", b.id);
        }
    }
}

#[test]
fn llp_all_zero_extents() {
    let (bags, _) = synthetic(6, 5, 2.0, 3, |_| 0);
    let m = train(&WeakClassifierSpec::new(Hyperparams::Plog, 0), &bags).unwrap();
    for b in &bags {
        assert_eq!(m.predict_extent(b).unwrap(), 0.0);
    }
    let m = train(&WeakClassifierSpec::new(Hyperparams::Psvm { kernel: Kernel::Linear, c: 1.0, c2: 1.0 }, 0), &bags).unwrap();
    assert!(matches!(m.params, LearnerModel::Prior { probability } if probability == 0.0));
}

#[test]
fn cms_two_components() {
    let (bags, _) = synthetic(40, 20, 10.0, 41, |i| (i * 7) % 21);
    let m = train(&WeakClassifierSpec::new(Hyperparams::Cms { k: vec![2, 10, 20] }, 6), &bags).unwrap();
    let LearnerModel::Cluster(c) = &m.params else { panic!("not a cluster model") };
    assert!([2, 10, 20].contains(&c.k()));
    let mae: f64 = bags.iter().map(|b| (m.predict_extent(b).unwrap() - b.extent.unwrap()).abs()).sum::<f64>() / bags.len() as f64;
    assert!(mae <= 0.05, "mae {mae}");
}

#[test]
fn cms_zero_extents_and_grid_errors() {
    let (bags, _) = synthetic(5, 4, 3.0, 2, |_| 0);
    let m = train_cms(&bags, &[3, 100], 0).unwrap();
    let LearnerModel::Cluster(c) = &m.params else { panic!() };
    assert!(c.labels.iter().all(|&l| !l));
    assert_eq!(c.training_errors, vec![(3, 0.0)]);
    assert!(train_cms(&bags, &[], 0).is_err());
    assert!(train_cms(&bags, &[500], 0).is_err());
}

#[test]
fn mean_operator_examples() {
    let rows = vec![vec![1.0, 2.0], vec![3.0, -2.0]];
    for lambda in [0.0, 1.0] {
        let one = estimate_mean_operator(&[bag("a", &rows, 1.0)], lambda, 0.1).unwrap();
        assert!((one.mu[0] - 2.0).abs() < 1e-7 && one.mu[1].abs() < 1e-7);
        assert_eq!(one.mu_bias, 1.0);
        let zero = estimate_mean_operator(&[bag("a", &rows, 0.0)], lambda, 0.1).unwrap();
        assert!((zero.mu[0] + 2.0).abs() < 1e-7 && zero.mu[1].abs() < 1e-7);
        let both = estimate_mean_operator(&[bag("a", &rows, 1.0), bag("b", &rows, 0.0)], lambda, 0.1).unwrap();
        assert!(both.mu.iter().all(|v| v.abs() < 1e-7), "{:?}", both.mu);
        assert_eq!(both.mu_bias, 0.0);
    }
}

#[test]
fn mean_operator_reconstruction_and_antisymmetry() {
    let (bags, _) = synthetic(12, 8, 2.0, 51, |i| i % 9);
    for (lambda, sigma) in [(0.0, 0.1), (1.0, 0.5), (100.0, 1.0), (10.0, 0.001)] {
        let op = estimate_mean_operator(&bags, lambda, sigma).unwrap();
        let n: usize = op.bag_sizes.iter().sum();
        for k in 0..2 {
            let r: f64 = op.bag_means.iter().zip(&op.bag_sizes).map(|(m, &s)| s as f64 / n as f64 * m[k]).sum();
            assert!((r - op.mu[k]).abs() < 1e-8);
        }
        let flipped: Vec<Bag> = bags
            .iter()
            .map(|b| {
                let mut c = b.clone();
                c.set_extent(1.0 - b.extent.unwrap()).unwrap();
                c
            })
            .collect();
        let neg = estimate_mean_operator(&flipped, lambda, sigma).unwrap();
        for (a, b) in op.mu.iter().zip(&neg.mu) {
            assert!((a + b).abs() <= 1e-9 * a.abs().max(1.0), "{a} {b}");
        }
        assert_eq!(op.mu_bias, -neg.mu_bias);
    }
}

#[test]
fn mean_map_objective_is_logistic_loss_under_true_operator() {
    let (bags, truth) = synthetic(6, 5, 1.5, 61, |i| i % 6);
    let stacked = Stacked::new(&bags).unwrap();
    let y: Vec<bool> = truth.concat();
    let n = y.len() as f64;
    let mut mu = vec![0.0; 2];
    let mut mu_bias = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let s = if yi { 1.0 } else { -1.0 };
        mu[0] += s * stacked.x.row(i)[0] / n;
        mu[1] += s * stacked.x.row(i)[1] / n;
        mu_bias += s / n;
    }
    let op = MeanOperator {
        mu,
        mu_bias,
        bag_sizes: vec![],
        bag_means: vec![],
        positive_means: vec![],
        negative_means: vec![],
    };
    let theta = [0.3, -0.7, 0.2];
    let (value, grad) = mean_map_objective(&theta, &stacked.x, &op, 0.0);
    let (loss, _) = crate::learners::logistic_objective(&theta, &stacked.x, &y, None);
    assert!((value - loss).abs() < 1e-12, "{value} vs {loss}");
    let num = crate::learners::optim::numerical_gradient(|t| mean_map_objective(t, &stacked.x, &op, 0.1).0, &theta, 1e-6);
    let (_, g) = mean_map_objective(&theta, &stacked.x, &op, 0.1);
    for (a, b) in g.iter().zip(&num) {
        assert!((a - b).abs() <= 1e-5 * a.abs().max(1e-3));
    }
    assert_eq!(grad.len(), 3);
}

#[test]
fn lmm_tracks_extents_on_separable_bags() {
    let (bags, _) = synthetic(40, 20, 4.0, 71, |i| (i * 3) % 21);
    let m = train(&WeakClassifierSpec::new(Hyperparams::Lmm { lambda: 1.0, gamma: 0.001, sigma: 1.0 }, 0), &bags).unwrap();
    let pred: Vec<f64> = bags.iter().map(|b| m.predict_extent(b).unwrap()).collect();
    let truth: Vec<f64> = bags.iter().map(|b| b.extent.unwrap()).collect();
    let mae: f64 = pred.iter().zip(&truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64;
    assert!(mae < 0.1, "mae {mae}");
}

#[test]
fn retraining_is_byte_identical_and_round_trips() {
    let (bags, _) = synthetic(16, 6, 2.5, 81, |i| i % 7);
    for h in [
        Hyperparams::Log { reduce: true },
        Hyperparams::Beta { reduce: false },
        Hyperparams::Misvm { kernel: Kernel::Rbf { gamma: 0.1 }, c: 1.0 },
        Hyperparams::Psvm { kernel: Kernel::Linear, c: 1.0, c2: 1.0 },
        Hyperparams::Plog,
        Hyperparams::Cms { k: vec![4, 8] },
        Hyperparams::Lmm { lambda: 10.0, gamma: 0.01, sigma: 0.25 },
    ] {
        let spec = WeakClassifierSpec::new(h, 99);
        let a = serde_json::to_string(&train(&spec, &bags).unwrap()).unwrap();
        let b = serde_json::to_string(&train(&spec, &bags).unwrap()).unwrap();
        assert_eq!(a, b);
        let back: TrainedBagModel = serde_json::from_str(&a).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), a);
        for bg in &bags {
            let e = back.predict_extent(bg).unwrap();
            let k = e * bg.len() as f64;
            assert!((k - k.round()).abs() < 1e-9 && (0.0..=1.0).contains(&e));
        }
        let t = back.instance_threshold;
        assert!((0..=100).any(|k| k as f64 / 100.0 == t));
    }
}
