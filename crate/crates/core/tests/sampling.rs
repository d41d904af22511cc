mod common;

use std::collections::BTreeSet;
use std::fs;

use common::{data, planted_survivors, segment};
use mtkit::corpus::{filter_segment, load_segments, sample_pool, FilterConfig, ParallelSegment};
use mtkit::fewshot::{draw_eval_shots, draw_training_shots, training_rng, ExamplePool, MixturePolicy};
use mtkit::rng;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn no_sampling() -> FilterConfig {
    FilterConfig {
        per_pair_cap: 1_000_000,
        example_pool_size: 0,
        ..FilterConfig::default()
    }
}

fn kept_ids(segments: Vec<ParallelSegment>, cfg: &FilterConfig) -> BTreeSet<String> {
    let outcome = sample_pool(segments.into_iter().map(Ok), cfg).unwrap();
    outcome
        .pools
        .values()
        .flat_map(|p| p.training.iter().chain(&p.examples))
        .map(|s| s.id.clone())
        .collect()
}

#[test]
fn planted_corpus_survivors() {
    let tsv = fs::read_to_string(data("corpus.tsv")).unwrap();
    let expected = planted_survivors(&tsv);
    let from_generator: BTreeSet<String> = fs::read_to_string(data("corpus.survivors.txt"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(expected, from_generator);
    let segments = load_segments(&data("corpus.tsv")).unwrap();
    assert_eq!(segments.len(), 1000);
    assert_eq!(kept_ids(segments, &no_sampling()), expected);
}

fn score() -> impl Strategy<Value = Option<f64>> {
    prop_oneof![
        1 => Just(None),
        1 => prop::sample::select(vec![0.8, 0.85, 0.7999, 0.8499]).prop_map(Some),
        4 => (0.0..=1.0f64).prop_map(Some),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    /// Raising any score never turns a kept segment into a dropped one.
    #[test]
    fn filter_is_monotone(
        b in score(), f in score(), r in score(),
        bump in 0.0..=0.2f64, which in 0..3usize,
    ) {
        let cfg = FilterConfig::default();
        let mut seg = segment("x", "de-en", "a", "b");
        (seg.bicleaner, seg.kiwi_fwd, seg.kiwi_rev) = (b, f, r);
        let before = filter_segment(&seg, &cfg).is_keep();
        let slot = [&mut seg.bicleaner, &mut seg.kiwi_fwd, &mut seg.kiwi_rev][which].as_mut();
        if let Some(v) = slot {
            *v = (*v + bump).min(1.0);
        }
        prop_assert!(!before || filter_segment(&seg, &cfg).is_keep());
    }
}

fn pool(n: usize) -> Vec<ParallelSegment> {
    (0..n).map(|i| segment(&format!("e{i}"), "de-en", "s", "t")).collect()
}

fn chi_square(counts: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum()
}

fn shot_histogram(policy: &MixturePolicy, draws: u64) -> Vec<u64> {
    let segs = pool(30);
    let pool = ExamplePool::new(&segs).unwrap();
    let mut counts = vec![0u64; policy.max_shots + 1];
    for i in 0..draws {
        let id = format!("e{}", i % 30);
        let draw = draw_training_shots(policy, &pool, &id, &mut training_rng(11, &id, i)).unwrap();
        counts[draw.n_shots] += 1;
    }
    counts
}

#[test]
fn mixture_shot_counts_follow_the_policy() {
    let critical = ChiSquared::new(5.0).unwrap().inverse_cdf(0.999);
    for policy in [MixturePolicy::balanced(), MixturePolicy::unbalanced()] {
        let counts = shot_histogram(&policy, 60_000);
        let expected: Vec<f64> = match policy.variant {
            mtkit::fewshot::MixtureVariant::Balanced => vec![1.0 / 6.0; 6],
            mtkit::fewshot::MixtureVariant::Unbalanced => vec![0.5, 0.1, 0.1, 0.1, 0.1, 0.1],
        };
        let stat = chi_square(&counts, &expected);
        assert!(stat < critical, "{policy:?}: chi2 {stat} >= {critical}, counts {counts:?}");
    }
}

#[test]
fn target_is_never_its_own_example() {
    let mut meta = rng::derive(5, &["exclusion"]);
    use rand::Rng;
    for case in 0..20_000u64 {
        let n = meta.random_range(6..40);
        let segs = pool(n);
        let pool = ExamplePool::new(&segs).unwrap();
        let target = format!("e{}", meta.random_range(0..n + 3));
        let mut r = training_rng(case, &target, case);
        let draw = draw_training_shots(&MixturePolicy::balanced(), &pool, &target, &mut r).unwrap();
        let eval = draw_eval_shots(&pool, &target, 5, &mut r).unwrap();
        for ex in [&draw.examples, &eval.examples] {
            assert!(!ex.contains(&target));
            let distinct: BTreeSet<_> = ex.iter().collect();
            assert_eq!(distinct.len(), ex.len());
        }
    }
}

/// With cap k over N survivors each survivor lands in the reservoir with
/// probability k/N, checked across seeds.
#[test]
fn reservoir_inclusion_is_uniform() {
    let (n, cap, trials) = (40usize, 10usize, 4000u64);
    let segs = pool(n);
    let mut hits = vec![0u64; n];
    for seed in 0..trials {
        let cfg = FilterConfig {
            per_pair_cap: cap,
            example_pool_size: 0,
            seed,
            ..FilterConfig::default()
        };
        for id in kept_ids(segs.clone(), &cfg) {
            hits[id[1..].parse::<usize>().unwrap()] += 1;
        }
    }
    // Each count is Binomial(trials, 1/4); compare against chi-square on
    // the per-item hit/miss table.
    let p = cap as f64 / n as f64;
    let stat: f64 = hits
        .iter()
        .map(|&h| {
            let e = p * trials as f64;
            (h as f64 - e).powi(2) / (e * (1.0 - p))
        })
        .sum();
    let critical = ChiSquared::new(n as f64).unwrap().inverse_cdf(0.999);
    assert!(stat < critical, "chi2 {stat} >= {critical}: {hits:?}");
}

#[test]
fn example_pool_is_disjoint_from_training() {
    let segs = pool(100);
    let cfg = FilterConfig {
        per_pair_cap: 50,
        example_pool_size: 20,
        seed: 9,
        ..FilterConfig::default()
    };
    let outcome = sample_pool(segs.into_iter().map(Ok), &cfg).unwrap();
    let p = outcome.pools.values().next().unwrap();
    assert_eq!((p.training.len(), p.examples.len()), (50, 20));
    let train: BTreeSet<_> = p.training.iter().map(|s| &s.id).collect();
    assert!(p.examples.iter().all(|s| !train.contains(&s.id)));
}
