mod oracle;

use cgt_core::selection::{arun_metric, cao_metric, cv_coherence, umass_coherence};
use proptest::prelude::*;

#[test]
fn two_hundred_random_cases_match_brute_force() {
    for seed in 0..200 {
        oracle::check_case(seed).unwrap();
    }
}

#[test]
fn cao_triangle_is_one_half() {
    let phi = vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5], vec![0.5, 0.0, 0.5]];
    assert_eq!(cao_metric(&phi).unwrap(), 0.5);
    assert!((oracle::cao(&phi) - 0.5).abs() < 1e-12);
}

#[test]
fn arun_orthonormal_rows() {
    let phi = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
    let theta = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let lengths = [10.0, 30.0];
    // c1 = (.5, .5), c2 = (.75, .25), summed by hand.
    let hand = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln() + 0.75 * (0.75f64 / 0.5).ln() + 0.25 * (0.25f64 / 0.5).ln();
    assert!((hand - 0.274653).abs() < 1e-6);
    assert!((oracle::arun(&phi, &theta, &lengths) - hand).abs() < 1e-12);
    assert!((arun_metric(&phi, &theta, &lengths).unwrap() - hand).abs() < 1e-12);
}

#[test]
fn cv_toy_three_documents_window_two() {
    let case = oracle::ToyCase {
        phi: vec![vec![0.4, 0.3, 0.2, 0.1, 0.0], vec![0.0, 0.1, 0.2, 0.3, 0.4]],
        theta: vec![vec![0.5, 0.5]; 3],
        docs: vec![vec![0, 1, 2, 0], vec![3, 4, 1], vec![2, 2, 0, 4, 3]],
        top_n: 3,
        window: 2,
    };
    let got = cv_coherence(&case.model(), &case.corpus(), 3, 2).unwrap();
    let want = oracle::cv(&case.phi, &case.docs, 3, 2);
    for (a, b) in got.per_topic.iter().zip(&want) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn umass_single_pair_cases() {
    let always = oracle::ToyCase { phi: vec![vec![0.6, 0.4], vec![0.4, 0.6]], theta: vec![vec![0.5, 0.5]; 4], docs: vec![vec![0, 1]; 4], top_n: 2, window: 3 };
    let u = umass_coherence(&always.model(), &always.corpus(), 2).unwrap();
    assert!((u.per_topic[0] - (5.0f64 / 4.0).ln()).abs() < 1e-12);

    let mut docs = vec![vec![0u32]; 10];
    docs.push(vec![1]);
    let never = oracle::ToyCase { phi: vec![vec![0.6, 0.4], vec![0.4, 0.6]], theta: vec![vec![0.5, 0.5]; 11], docs, top_n: 2, window: 3 };
    let u = umass_coherence(&never.model(), &never.corpus(), 2).unwrap();
    assert!((u.per_topic[0] - (1.0f64 / 10.0).ln()).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_match_oracle_on_arbitrary_seeds(seed in any::<u64>()) {
        prop_assert!(oracle::check_case(seed).is_ok(), "{:?}", oracle::check_case(seed));
    }

    #[test]
    fn metrics_are_permutation_invariant(seed in any::<u64>(), rot in 1usize..4) {
        let c = oracle::ToyCase::random(seed);
        let k = c.phi.len();
        let perm: Vec<usize> = (0..k).map(|i| (i + rot) % k).collect();
        let model = c.model();
        let permuted = model.permute_topics(&perm);
        let corpus = c.corpus();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
        prop_assert!(close(cao_metric(&model.phi).unwrap(), cao_metric(&permuted.phi).unwrap()));
        prop_assert!(close(arun_metric(&model.phi, &model.theta, &c.lengths()).unwrap(), arun_metric(&permuted.phi, &permuted.theta, &c.lengths()).unwrap()));
        prop_assert!(close(umass_coherence(&model, &corpus, c.top_n).unwrap().mean, umass_coherence(&permuted, &corpus, c.top_n).unwrap().mean));
        prop_assert!(close(cv_coherence(&model, &corpus, c.top_n, c.window).unwrap().mean, cv_coherence(&permuted, &corpus, c.top_n, c.window).unwrap().mean));
    }

    #[test]
    fn cao_is_bounded(seed in any::<u64>()) {
        let c = oracle::ToyCase::random(seed);
        let v = cao_metric(&c.phi).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v));
        prop_assert!(arun_metric(&c.phi, &c.theta, &c.lengths()).unwrap() >= 0.0);
        let cv = cv_coherence(&c.model(), &c.corpus(), c.top_n, c.window).unwrap();
        prop_assert!(cv.per_topic.iter().all(|x| (-1.0 - 1e-9..=1.0 + 1e-9).contains(x)));
    }
}
