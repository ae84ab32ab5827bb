mod common;

use proptest::prelude::*;
use scenario_forge::data_model::Product;
use scenario_forge::evaluation::{compare_selectors, forecast_mae, stoch_metric, SelectorRun};

use common::{point_forecast, single_product_set};

fn sm(trajs: &[Vec<f64>], probs: &[f64], target: &[f64]) -> f64 {
    stoch_metric(
        &single_product_set("RT", trajs, probs),
        target,
        &Product::new("RT"),
    )
    .unwrap()
    .sm
}

/// Per-step terms written out directly from their definitions.
fn oracle(trajs: &[Vec<f64>], probs: &[f64], target: &[f64]) -> f64 {
    let mut total = 0.0;
    for (t, y) in target.iter().enumerate() {
        let vals: Vec<f64> = trajs.iter().map(|s| s[t]).collect();
        let mean: f64 =
            vals.iter().zip(probs).map(|(v, p)| v * p).sum::<f64>() / probs.iter().sum::<f64>();
        let hi = vals.iter().cloned().fold(f64::MIN, f64::max);
        let lo = vals.iter().cloned().fold(f64::MAX, f64::min);
        total += (y - mean).abs()
            + if y > &hi { y - hi } else { 0.0 }
            + if y < &lo { lo - y } else { 0.0 };
    }
    total / target.len() as f64
}

#[test]
fn hand_example() {
    let trajs = [vec![8.0, 22.0], vec![12.0, 18.0]];
    let report = stoch_metric(
        &single_product_set("RT", &trajs, &[0.5, 0.5]),
        &[10.0, 30.0],
        &"RT".into(),
    )
    .unwrap();
    assert_eq!(report.sm, 9.0);
    assert_eq!(oracle(&trajs, &[0.5, 0.5], &[10.0, 30.0]), 9.0);
    let mu: Vec<f64> = report.per_step.iter().map(|s| s.mu_error).collect();
    let up: Vec<f64> = report.per_step.iter().map(|s| s.upper).collect();
    let lo: Vec<f64> = report.per_step.iter().map(|s| s.lower).collect();
    assert_eq!(
        (mu, up, lo),
        (vec![0.0, 10.0], vec![0.0, 8.0], vec![0.0, 0.0])
    );
}

#[test]
fn perfect_set_scores_zero() {
    let target = vec![31.7, 12.9, 44.1];
    assert_eq!(
        sm(
            &[target.clone(), target.clone(), target.clone()],
            &[0.2, 0.3, 0.5],
            &target
        ),
        0.0
    );
}

#[test]
fn target_above_every_scenario_costs_at_least_the_gap() {
    let trajs = [vec![1.0, 5.0], vec![3.0, 2.0]];
    let c = 4.0;
    let target = [3.0 + c, 5.0 + c];
    assert!(sm(&trajs, &[0.5, 0.5], &target) >= c);
}

#[test]
fn mae_examples() {
    let (_, f) = point_forecast("RT", &[0.5], &[1.0, 2.0]);
    assert_eq!(forecast_mae(&f, &[1.0, 2.0]).unwrap(), 0.0);
    assert_eq!(forecast_mae(&f, &[4.0, 5.0]).unwrap(), 3.0);
    assert_eq!(forecast_mae(&f, &[2.0, 4.0]).unwrap(), 1.5);
}

#[test]
fn comparison_examples() {
    let run = |label: &str, sms: &[f64]| SelectorRun {
        label: label.into(),
        reports: sms
            .iter()
            .map(|s| scenario_forge::evaluation::SmReport {
                product: "RT".into(),
                per_step: vec![],
                sm: *s,
                horizon: 1,
            })
            .collect(),
    };
    let cmp = compare_selectors(&[run("benchmark", &[34.84]), run("proposed", &[27.0])]).unwrap();
    let imp = cmp.rows[1].improvement_pct.unwrap();
    assert!((imp - (34.84 - 27.0) / 34.84 * 100.0).abs() < 1e-12);
    assert!((imp - 22.5).abs() < 0.01);
    let same = compare_selectors(&[run("a", &[5.0, 7.0]), run("b", &[5.0, 7.0])]).unwrap();
    assert_eq!(same.rows[1].improvement_pct, Some(0.0));
    assert_eq!(same.rows[0].mean_sm, 6.0);
}

fn set_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
    (1usize..8, 1usize..10).prop_flat_map(|(k, h)| {
        (
            prop::collection::vec(prop::collection::vec(-100.0f64..100.0, h), k),
            prop::collection::vec(0.01f64..1.0, k),
            prop::collection::vec(-120.0f64..120.0, h),
        )
            .prop_map(|(trajs, w, target)| {
                let total: f64 = w.iter().sum();
                let probs: Vec<f64> = w.iter().map(|x| x / total).collect();
                (trajs, probs, target)
            })
    })
}

proptest! {
    #[test]
    fn upper_and_lower_never_both_positive((trajs, probs, target) in set_strategy()) {
        let set = single_product_set("RT", &trajs, &probs);
        let r = stoch_metric(&set, &target, &"RT".into()).unwrap();
        prop_assert!(r.per_step.iter().all(|s| s.upper * s.lower == 0.0));
        prop_assert!((r.sm - oracle(&trajs, &probs, &target)).abs() <= 1e-9 * (1.0 + r.sm));
    }

    #[test]
    fn scaling_everything_scales_sm((trajs, probs, target) in set_strategy(), c in 0.1f64..10.0) {
        let base = sm(&trajs, &probs, &target);
        let st: Vec<Vec<f64>> = trajs.iter().map(|t| t.iter().map(|v| v * c).collect()).collect();
        let tt: Vec<f64> = target.iter().map(|v| v * c).collect();
        prop_assert!((sm(&st, &probs, &tt) - c * base).abs() <= 1e-9 * (1.0 + c * base));
    }
}
