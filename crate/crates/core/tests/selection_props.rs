mod common;

use proptest::prelude::*;
use scenario_forge::data_model::{
    Calendar, CandidateScenario, FeatureVector, Product, Standardizer,
};
use scenario_forge::selection::{
    inverse_distance_probabilities, read_scenario_set, score_candidate, select_benchmark,
    select_scenarios, write_scenario_set, Analog, SelectionConfig, SelectionError,
};
use scenario_forge::wcdtw::{Distance, QuantileWeights, WcdtwConfig};

use common::{at, candidate, forecast, forecasts, point_forecast};

const LEVELS: [f64; 3] = [0.1, 0.5, 0.9];

fn config(weights: &[(&str, f64)], n: usize, window: Option<usize>) -> SelectionConfig {
    SelectionConfig {
        product_weights: weights
            .iter()
            .map(|(p, w)| (Product::new(*p), *w))
            .collect(),
        n_scenarios: n,
        wcdtw: WcdtwConfig::new(window, QuantileWeights::normal(&LEVELS).unwrap()),
        epsilon: 1e-6,
    }
}

fn median_only(weights: &[(&str, f64)]) -> SelectionConfig {
    SelectionConfig {
        wcdtw: WcdtwConfig::new(None, QuantileWeights::single(0.5).unwrap()),
        ..config(weights, 1, None)
    }
}

#[test]
fn one_hot_weights_keep_a_single_product() {
    let fc = forecasts(vec![
        point_forecast("A", &[0.5], &[0.0]),
        point_forecast("B", &[0.5], &[0.0]),
    ]);
    let c = candidate(at(0), &[("A", vec![5.0]), ("B", vec![7.0])]);
    let s = score_candidate(&c, &fc, &median_only(&[("A", 1.0), ("B", 0.0)])).unwrap();
    assert_eq!(s.d_c, Distance::Finite(5.0));
    assert!(!s.per_product_distance.contains_key(&Product::new("B")));

    let c = candidate(at(0), &[("A", vec![4.0]), ("B", vec![8.0])]);
    let s = score_candidate(&c, &fc, &median_only(&[("A", 0.5), ("B", 0.5)])).unwrap();
    assert_eq!(s.d_c, Distance::Finite(6.0));
}

#[test]
fn candidate_on_the_median_scores_zero() {
    let median = [3.0, 5.0, 4.0, 8.0];
    let fc = forecasts(vec![point_forecast("A", &[0.5], &median)]);
    let c = candidate(at(0), &[("A", median.to_vec())]);
    for w in [Some(0), Some(1), Some(3), None] {
        let mut cfg = median_only(&[("A", 1.0)]);
        cfg.wcdtw.window = w;
        assert_eq!(
            score_candidate(&c, &fc, &cfg).unwrap().d_c,
            Distance::Finite(0.0)
        );
    }
}

#[test]
fn probability_examples() {
    assert_eq!(
        inverse_distance_probabilities(&[1.0, 3.0], 1e-6),
        vec![0.75, 0.25]
    );
    assert_eq!(
        inverse_distance_probabilities(&[2.0; 4], 1e-6),
        vec![0.25; 4]
    );
    let p = inverse_distance_probabilities(&[0.0, 2.0], 1e-6);
    let (a, b) = (1.0 / 1e-6, 1.0 / 2.0);
    assert!((p[0] - a / (a + b)).abs() < 1e-15);
    assert!((p[1] - b / (a + b)).abs() < 1e-15);
    assert!((p[0] - 0.9999995).abs() < 1e-9 && (p[1] - 5e-7).abs() < 1e-9);
}

#[test]
fn small_pool_is_rejected() {
    let fc = forecasts(vec![point_forecast("A", &LEVELS, &[1.0, 2.0])]);
    let pool = vec![candidate(at(0), &[("A", vec![1.0, 2.0])])];
    assert!(matches!(
        select_scenarios(&pool, &fc, &config(&[("A", 1.0)], 2, Some(1))),
        Err(SelectionError::PoolTooSmall {
            needed: 2,
            available: 1
        })
    ));
}

fn pool_strategy() -> impl Strategy<Value = (Vec<CandidateScenario>, Vec<f64>, Vec<f64>, usize)> {
    (4usize..20).prop_flat_map(|size| {
        (
            prop::collection::vec(
                (
                    prop::collection::vec(0.0f64..100.0, 6),
                    prop::collection::vec(0.0f64..100.0, 6),
                ),
                size,
            ),
            prop::collection::vec(0.0f64..100.0, 6),
            prop::collection::vec(0.0f64..100.0, 6),
            1..=size,
        )
            .prop_map(|(trajs, fa, fb, n)| {
                let pool = trajs
                    .into_iter()
                    .enumerate()
                    .map(|(i, (a, b))| candidate(at(i as i64 * 24), &[("A", a), ("B", b)]))
                    .collect();
                (pool, fa, fb, n)
            })
    })
}

fn spread(median: &[f64]) -> Vec<Vec<f64>> {
    median.iter().map(|m| vec![m - 5.0, *m, m + 7.0]).collect()
}

proptest! {
    #[test]
    fn selection_properties((pool, fa, fb, n) in pool_strategy(), wa in 0.1f64..2.0, wb in 0.0f64..2.0, c in 0.01f64..100.0) {
        let fc = forecasts(vec![forecast("A", &LEVELS, spread(&fa)), forecast("B", &LEVELS, spread(&fb))]);
        let cfg = config(&[("A", wa), ("B", wb)], n, Some(2));
        let set = select_scenarios(&pool, &fc, &cfg).unwrap();

        // Probability simplex.
        prop_assert_eq!(set.len(), n);
        prop_assert!(set.probabilities().iter().all(|p| *p >= 0.0));
        prop_assert!((set.probabilities().iter().sum::<f64>() - 1.0).abs() <= 1e-9);

        // The set is the n lowest d_c, and lower d_c never gets less mass.
        let mut scored: Vec<(f64, CandidateScenario)> = pool
            .iter()
            .map(|cand| (score_candidate(cand, &fc, &cfg).unwrap().d_c.value().unwrap(), cand.clone()))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.anchor.cmp(&b.1.anchor)));
        let expected: Vec<_> = scored.iter().take(n).map(|s| s.1.anchor).collect();
        let got: Vec<_> = set.scenarios().iter().map(|s| s.anchor).collect();
        prop_assert_eq!(&got, &expected);
        for i in 0..n {
            for j in 0..n {
                if scored[i].0 < scored[j].0 {
                    prop_assert!(set.probabilities()[i] >= set.probabilities()[j]);
                }
            }
        }

        // Scaling every product weight by c changes nothing.
        let scaled = config(&[("A", wa * c), ("B", wb * c)], n, Some(2));
        let again = select_scenarios(&pool, &fc, &scaled).unwrap();
        let anchors: Vec<_> = again.scenarios().iter().map(|s| s.anchor).collect();
        prop_assert_eq!(&anchors, &expected);
        for (p, q) in set.probabilities().iter().zip(again.probabilities()) {
            prop_assert!((p - q).abs() <= 1e-12);
        }

        // Deterministic, and the scenario file round-trips exactly.
        prop_assert_eq!(&select_scenarios(&pool, &fc, &cfg).unwrap(), &set);
        let mut buf = Vec::new();
        write_scenario_set(&mut buf, &set).unwrap();
        prop_assert_eq!(read_scenario_set(buf.as_slice()).unwrap(), set);
    }
}

#[test]
fn thread_count_does_not_change_selection() {
    let pool: Vec<_> = (0..200)
        .map(|i| {
            let v: Vec<f64> = (0..16).map(|t| ((i * 7 + t * 13) % 50) as f64).collect();
            candidate(at(i as i64), &[("A", v)])
        })
        .collect();
    let fc = forecasts(vec![forecast("A", &LEVELS, spread(&[20.0; 16]))]);
    let cfg = config(&[("A", 1.0)], 10, Some(2));
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| select_scenarios(&pool, &fc, &cfg).unwrap())
    };
    assert_eq!(run(1), run(4));
}

fn analog(i: i64, lags: Vec<f64>, traj: f64) -> Analog {
    Analog {
        scenario: candidate(at(i), &[("A", vec![traj; 3])]),
        features: FeatureVector {
            anchor: at(i),
            calendar: Calendar::of(at(0)),
            load_forecast: None,
            renewable_forecast: None,
            lagged_prices: lags,
            target_stats: Vec::new(),
        },
    }
}

fn fit(pool: &[Analog]) -> Standardizer {
    Standardizer::fit(
        &pool
            .iter()
            .map(|a| a.features.numeric())
            .collect::<Vec<_>>(),
    )
}

#[test]
fn benchmark_prefers_the_matching_analog() {
    let pool: Vec<Analog> = (0..8)
        .map(|i| analog(i, vec![i as f64, (i * i) as f64], 0.0))
        .collect();
    let current = FeatureVector {
        anchor: at(500),
        ..pool[5].features.clone()
    };
    let set = select_benchmark(&pool, &current, &fit(&pool), 3, 1e-6).unwrap();
    assert_eq!(set.scenarios()[0].anchor, at(5));
    assert!(set.probabilities()[0] > 0.99);
}

#[test]
fn benchmark_stays_in_the_current_cloud() {
    let mut pool = Vec::new();
    for i in 0..20 {
        let jitter = (i % 5) as f64 * 0.01;
        pool.push(analog(i, vec![jitter, 1.0 + jitter], 1.0));
        pool.push(analog(100 + i, vec![100.0 + jitter, 100.0 - jitter], 2.0));
    }
    let current = FeatureVector {
        anchor: at(900),
        ..analog(0, vec![0.02, 1.005], 0.0).features
    };
    let set = select_benchmark(&pool, &current, &fit(&pool), 10, 1e-6).unwrap();
    assert!(set.scenarios().iter().all(|s| s.anchor < at(100)));
}

#[test]
fn equidistant_benchmark_is_uniform() {
    let pool = vec![analog(0, vec![-1.0], 0.0), analog(1, vec![1.0], 0.0)];
    let current = FeatureVector {
        anchor: at(9),
        ..analog(0, vec![0.0], 0.0).features
    };
    let set = select_benchmark(&pool, &current, &fit(&pool), 2, 1e-6).unwrap();
    assert_eq!(set.probabilities(), &[0.5, 0.5]);
}
