use mopref_core::infer::*;
use mopref_core::rng::Stream;
use mopref_core::weights::cosine_similarity;
use mopref_core::{RngSeed, TaskKind, WeightVector};
use proptest::prelude::*;
use rand::Rng;

fn pair(r1: Vec<f64>, r2: Vec<f64>, label: Label) -> PreferencePair {
    PreferencePair { r1, r2, label, skip: false }
}

fn random_returns(k: usize, scale: f64, rng: &mut Stream) -> Vec<f64> {
    (0..k).map(|_| rng.random_range(-scale..scale)).collect()
}

fn bt_dataset(w_star: &WeightVector, n: usize, scale: f64, rng: &mut Stream) -> Vec<PreferencePair> {
    let user = SimUser::new(w_star.clone(), 2.0 / 3.0).unwrap();
    (0..n)
        .map(|_| {
            let r1 = random_returns(w_star.k(), scale, rng);
            let r2 = random_returns(w_star.k(), scale, rng);
            let label = simulate_pair(&r1, &r2, &user, rng).unwrap();
            pair(r1, r2, label)
        })
        .collect()
}

#[test]
fn bt_probability_examples() {
    let w = WeightVector::new(vec![0.2, 0.3, 0.5]).unwrap();
    let r = vec![1.0, -2.0, 0.5];
    assert_eq!(bt_probability(&r, &r, &w).unwrap(), 0.5);
    // wᵀ(r1 − r2) = ln 3 → 3/4
    let d = 3f64.ln();
    let r1 = vec![d, d, d];
    let p = bt_probability(&r1, &[0.0; 3], &w).unwrap();
    assert!((p - 0.75).abs() < 1e-12);
    assert!(bt_probability(&[1.0, 2.0], &r, &w).is_err());
}

#[test]
fn bt_probability_saturates_without_overflow() {
    let w = WeightVector::one_hot(2, 0).unwrap();
    let p = bt_probability(&[1e6, 0.0], &[-1e6, 0.0], &w).unwrap();
    assert!(p.is_finite() && p <= 1.0 && p > 0.5);
    let lp = bt_log_probability(&[-1e6, 0.0], &[1e6, 0.0], &w).unwrap();
    assert!(lp.is_finite());
    assert!((lp + 2e6).abs() < 1e-6);
}

#[test]
fn single_pair_points_at_the_preferred_coordinate() {
    let data = vec![pair(vec![2.0, 0.0, 0.0], vec![0.0; 3], Label::First)];
    let (w, _) = fit_pairwise(&data, &PairwiseConfig::default(), RngSeed(1)).unwrap();
    let grid = simplex_grid(3, 50);
    let best = grid
        .iter()
        .max_by(|a, b| {
            let la = pairwise_log_likelihood(&data, &WeightVector::new(a.to_vec()).unwrap()).unwrap();
            let lb = pairwise_log_likelihood(&data, &WeightVector::new(b.to_vec()).unwrap()).unwrap();
            la.total_cmp(&lb)
        })
        .unwrap();
    assert_eq!(w.argmax(), 0);
    assert_eq!(best.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0, 0);
}

#[test]
fn contradictory_duplicates_match_uniform_likelihood() {
    let r1 = vec![1.0, 0.0, 0.0];
    let r2 = vec![0.0, 1.0, 0.0];
    let data = vec![pair(r1.clone(), r2.clone(), Label::First), pair(r1, r2, Label::Second)];
    let (w, d) = fit_pairwise(&data, &PairwiseConfig::default(), RngSeed(2)).unwrap();
    let uniform = pairwise_log_likelihood(&data, &WeightVector::uniform(3).unwrap()).unwrap();
    assert!((pairwise_log_likelihood(&data, &w).unwrap() - uniform).abs() < 1e-6);
    assert!((d.log_likelihood - uniform).abs() < 1e-6);
}

#[test]
fn all_skipped_pairs_are_an_inference_failure() {
    let mut p = pair(vec![1.0, 0.0], vec![0.0, 1.0], Label::First);
    p.skip = true;
    assert!(fit_pairwise(&[p], &PairwiseConfig::default(), RngSeed(0)).is_err());
}

#[test]
fn pairwise_fit_dominates_the_grid() {
    for (case, k, steps) in [(0u64, 3usize, 20usize), (1, 5, 20)] {
        for rep in 0..10u64 {
            let mut rng = RngSeed(100 + 10 * case + rep).stream();
            let w_star = WeightVector::sample(k, &mut rng).unwrap();
            let data = bt_dataset(&w_star, 30, 2.0, &mut rng);
            let (w, diag) = fit_pairwise(&data, &PairwiseConfig::default(), RngSeed(rep)).unwrap();
            let best = pairwise_log_likelihood(&data, &w).unwrap();
            assert!(best >= diag.uniform_log_likelihood - 1e-9);
            for g in simplex_grid(k, steps) {
                let l = pairwise_log_likelihood(&data, &WeightVector::new(g).unwrap()).unwrap();
                assert!(best >= l - 1e-7, "k={k} rep={rep}: grid point beats fit ({l} > {best})");
            }
        }
    }
}

#[test]
fn five_hundred_pairs_recover_a_one_hot_user() {
    let mut sims = Vec::new();
    for j in 0..5 {
        let mut rng = RngSeed(500 + j as u64).stream();
        let w_star = WeightVector::one_hot(5, j).unwrap();
        let data = bt_dataset(&w_star, 500, 3.0, &mut rng);
        let (w, _) = fit_pairwise(&data, &PairwiseConfig::default(), RngSeed(j as u64)).unwrap();
        sims.push(cosine_similarity(&w, &w_star).unwrap());
    }
    let mean = sims.iter().sum::<f64>() / sims.len() as f64;
    assert!(mean >= 0.85, "mean cosine {mean} from {sims:?}");
}

#[test]
fn group_size_examples() {
    let raw = group_size_bound(2.0 / 3.0, 0.05, 0.5, 2.8).unwrap();
    assert!((raw - 4.996).abs() < 5e-4, "raw bound {raw}");
    assert_eq!(min_group_size(2.0 / 3.0, 0.05, 0.5, 2.8).unwrap(), 5);
    assert_eq!(min_group_size(2.0 / 3.0, (-0.5f64).exp(), 0.5, 2.8).unwrap(), 1);
    let raw = group_size_bound(2.0 / 3.0, 0.01, 0.5, 2.8).unwrap();
    assert!((raw - 8.218).abs() < 5e-4, "raw bound {raw}");
    assert_eq!(min_group_size(2.0 / 3.0, 0.01, 0.5, 2.8).unwrap(), 9);
    // denominator ≤ 0
    assert!(min_group_size(0.55, 0.05, 0.5, 0.1).is_err());
    assert!(min_group_size(0.4, 0.05, 0.5, 2.8).is_err());
}

proptest! {
    #[test]
    fn bt_probabilities_are_complementary(
        r1 in prop::collection::vec(-50.0f64..50.0, 4),
        r2 in prop::collection::vec(-50.0f64..50.0, 4),
        seed in 0u64..1000,
    ) {
        let w = WeightVector::sample(4, &mut RngSeed(seed).stream()).unwrap();
        let p = bt_probability(&r1, &r2, &w).unwrap();
        let q = bt_probability(&r2, &r1, &w).unwrap();
        prop_assert!((p + q - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn group_size_is_monotone(
        alpha in 0.55f64..0.95,
        d1 in 0.001f64..0.6,
        d2 in 0.001f64..0.6,
        gap in 0.1f64..1.0,
        c1 in 1.0f64..10.0,
        c2 in 1.0f64..10.0,
    ) {
        let (dlo, dhi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        let (clo, chi) = if c1 < c2 { (c1, c2) } else { (c2, c1) };
        if let (Ok(a), Ok(b)) = (min_group_size(alpha, dlo, gap, clo), min_group_size(alpha, dhi, gap, clo)) {
            prop_assert!(b <= a);
        }
        if let (Ok(a), Ok(b)) = (min_group_size(alpha, dlo, gap, clo), min_group_size(alpha, dlo, gap, chi)) {
            prop_assert!(b <= a);
        }
    }
}

#[test]
fn simulated_pair_frequencies() {
    let user = SimUser::new(WeightVector::uniform(3).unwrap(), 2.0 / 3.0).unwrap();
    let mut rng = RngSeed(8).stream();
    let r = vec![0.3, 0.2, 0.1];
    let n = 10_000;
    let first = (0..n).filter(|_| simulate_pair(&r, &r, &user, &mut rng).unwrap() == Label::First).count();
    assert!((first as f64 / n as f64 - 0.5).abs() <= 0.015);
    let big = (0..1000).all(|_| simulate_pair(&[1e3; 3], &[0.0; 3], &user, &mut rng).unwrap() == Label::First);
    assert!(big);
}

#[test]
fn group_bound_error_rate() {
    let mut rng = RngSeed(2024).stream();
    let h = Hyperplane { a: vec![1.0, 0.0, 0.0], b1: 0.55, b2: 0.05 };
    let m = min_group_size(2.0 / 3.0, 0.05, 0.5, 2.8).unwrap();
    // w* just inside G1 is close to the worst case
    let user = SimUser::new(WeightVector::new(vec![0.56, 0.24, 0.2]).unwrap(), 2.0 / 3.0).unwrap();
    assert!(h.in_first(&user.w_star));
    let (r1, r2) = bound_returns(&h, 2.8);
    let q = GroupQuery::from_returns(h, vec![r1; m], vec![r2; m]).unwrap();
    let trials = 10_000;
    let second = (0..trials).filter(|_| simulate_group(&q, &user, &mut rng).unwrap() == Some(Label::Second)).count();
    let rate = second as f64 / trials as f64;
    assert!(rate <= 0.05, "P(second) = {rate}");
}

fn e1_plane() -> Hyperplane {
    Hyperplane { a: vec![1.0, 0.0, 0.0], b1: 0.55, b2: 0.05 }
}

#[test]
fn slab_volumes_on_the_three_simplex() {
    let mut rng = RngSeed(31).stream();
    let h = e1_plane();
    let fresh = ConstraintSet::new(3, &mut rng).unwrap();
    let (f1, _) = fresh.slab_fractions(&h);
    assert!((f1 - 0.2025).abs() < 0.06, "pool fraction {f1}");
    let mut g1 = fresh.clone();
    g1.add(HalfSpace::new(h.a.clone(), h.b1, Sense::Ge).unwrap(), &mut rng).unwrap();
    let v = g1.volume_fraction(100_000, &mut rng).unwrap();
    assert!((v - 0.2025).abs() < 0.004, "G1 volume {v}");

    for (label, expected) in [(Label::First, 0.9025), (Label::Second, 0.7975)] {
        let mut cs = fresh.clone();
        cs.add(h.constraint(label), &mut rng).unwrap();
        let v = cs.volume_fraction(100_000, &mut rng).unwrap();
        assert!((v - expected).abs() < 0.004, "{label:?}: {v} vs {expected}");
        assert!(cs.pool.iter().all(|w| cs.feasible(w)));
    }
}

#[test]
fn conflicting_constraint_is_rejected() {
    let mut rng = RngSeed(5).stream();
    let mut cs = ConstraintSet::new(3, &mut rng).unwrap();
    cs.add(HalfSpace::new(vec![1.0, 0.0, 0.0], 0.8, Sense::Ge).unwrap(), &mut rng).unwrap();
    let before = cs.constraints.len();
    let err = cs.add(HalfSpace::new(vec![1.0, 0.0, 0.0], 0.3, Sense::Le).unwrap(), &mut rng);
    assert!(err.is_err());
    assert_eq!(cs.constraints.len(), before);
    assert_eq!(cs.rejected.len(), 1);
}

/// Returns that grow with the weight placed on each objective.
fn synthetic_returns(w: &[f64], scale: f64) -> Vec<f64> {
    w.iter().map(|x| scale * x).collect()
}

fn group_study(w_star: &WeightVector, m: usize, queries: usize, seed: u64) -> (WeightVector, Vec<f64>) {
    let mut rng = RngSeed(seed).stream();
    let user = SimUser::new(w_star.clone(), 2.0 / 3.0).unwrap();
    let config = GroupQueryConfig { m, ..GroupQueryConfig::default() };
    let mut cs = ConstraintSet::new(w_star.k(), &mut rng).unwrap();
    let mut history = Vec::new();
    let mut volumes = vec![1.0];
    let mut attempts = 0;
    while history.len() < queries && attempts < 20 * queries {
        attempts += 1;
        let h = choose_hyperplane(&cs, &config, &mut rng).unwrap();
        let s1 = HalfSpace::new(h.a.clone(), h.b1, Sense::Ge).unwrap();
        let s2 = HalfSpace::new(h.a.clone(), h.b2, Sense::Le).unwrap();
        let w1 = cs.sample_within(&s1, m, &mut rng).unwrap();
        let w2 = cs.sample_within(&s2, m, &mut rng).unwrap();
        assert!(w1.iter().all(|w| h.in_first(w)) && w2.iter().all(|w| h.in_second(w)));
        let q = GroupQuery::from_returns(
            h,
            w1.iter().map(|w| synthetic_returns(w, 10.0)).collect(),
            w2.iter().map(|w| synthetic_returns(w, 10.0)).collect(),
        )
        .unwrap();
        let Some(label) = simulate_group(&q, &user, &mut rng).unwrap() else { continue };
        if apply_group_label(&mut cs, &q, label, &mut rng).is_err() {
            continue;
        }
        volumes.push(cs.volume_fraction(20_000, &mut rng).unwrap());
        history.push((q, label));
    }
    let (w, _) = fit_group(&cs, &history).unwrap();
    for (q, label) in &history {
        assert!(q.hyperplane.constraint(*label).contains(w.as_slice()) || !cs.feasible(w.as_slice()));
    }
    assert!(cs.feasible(w.as_slice()));
    (w, volumes)
}

#[test]
fn group_elicitation_recovers_peaked_users() {
    let mut sims = Vec::new();
    for j in 0..5 {
        let w_star = WeightVector::peaked(5, j, TaskKind::ObjectNav.default_nu()).unwrap();
        let (w, volumes) = group_study(&w_star, 2, 25, 70 + j as u64);
        for pair in volumes.windows(2) {
            // 3σ of a 20k-sample estimate
            assert!(pair[1] <= pair[0] + 3.0 * (0.25f64 / 20_000.0).sqrt() + 1e-12);
        }
        sims.push(cosine_similarity(&w, &w_star).unwrap());
    }
    let mean = sims.iter().sum::<f64>() / sims.len() as f64;
    assert!(mean >= 0.85, "mean cosine {mean} from {sims:?}");
}

#[test]
fn larger_groups_need_fewer_queries() {
    let mut sims = Vec::new();
    for j in 0..5 {
        let w_star = WeightVector::peaked(5, j, TaskKind::ObjectNav.default_nu()).unwrap();
        let (w, _) = group_study(&w_star, 5, 10, 90 + j as u64);
        sims.push(cosine_similarity(&w, &w_star).unwrap());
    }
    let mean = sims.iter().sum::<f64>() / sims.len() as f64;
    assert!(mean >= 0.80, "mean cosine {mean} from {sims:?}");
}

#[test]
fn noiseless_labels_keep_the_true_weights_feasible() {
    let mut rng = RngSeed(12).stream();
    let w_star = WeightVector::new(vec![0.1, 0.5, 0.15, 0.05, 0.2]).unwrap();
    let mut cs = ConstraintSet::new(5, &mut rng).unwrap();
    let config = GroupQueryConfig::default();
    let mut prev = 1.0;
    for _ in 0..15 {
        let Ok(h) = choose_hyperplane(&cs, &config, &mut rng) else { break };
        let mid = (h.b1 + h.b2) / 2.0;
        let score: f64 = h.a.iter().zip(w_star.as_slice()).map(|(a, w)| a * w).sum();
        let label = if score >= mid { Label::First } else { Label::Second };
        cs.add(h.constraint(label), &mut rng).unwrap();
        assert!(cs.feasible(w_star.as_slice()));
        let v = cs.volume_fraction(20_000, &mut rng).unwrap();
        assert!(v <= prev + 0.011);
        prev = v;
    }
    assert!(prev < 0.5);
}

#[test]
fn single_first_label_fit_respects_the_half_space() {
    let mut rng = RngSeed(4).stream();
    let mut cs = ConstraintSet::new(3, &mut rng).unwrap();
    let h = e1_plane();
    let (r1, r2) = bound_returns(&h, 2.8);
    let q = GroupQuery::from_returns(h.clone(), vec![r1], vec![r2]).unwrap();
    apply_group_label(&mut cs, &q, Label::First, &mut rng).unwrap();
    let (w, _) = fit_group(&cs, &[(q, Label::First)]).unwrap();
    assert!(w.as_slice()[0] >= h.b2 - 1e-12);
}
