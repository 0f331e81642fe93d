use pcit_core::inference::{by_adjust, harmonic, t_test_one_sided, wilcoxon_one_sided, PairedResiduals};
use pcit_core::losses::LossFunction;
use proptest::prelude::*;
use rand::Rng;

fn pr(d: &[f64]) -> PairedResiduals {
    PairedResiduals::from_diffs(LossFunction::Squared, d.to_vec()).unwrap()
}

/// Upper-tail probability of W+ by listing all 2^n sign vectors, with
/// mid-ranks computed by counting.
fn enumerated_upper_tail(diffs: &[f64]) -> f64 {
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    if nz.is_empty() {
        return 1.0;
    }
    let rank = |i: usize| {
        let a = nz[i].abs();
        let below = nz.iter().filter(|d| d.abs() < a).count() as f64;
        let equal = nz.iter().filter(|d| d.abs() == a).count() as f64;
        below + (equal + 1.0) / 2.0
    };
    let ranks: Vec<f64> = (0..nz.len()).map(rank).collect();
    let observed: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let n = nz.len();
    let hits = (0u32..1 << n)
        .filter(|mask| {
            let w: f64 = (0..n).filter(|k| mask >> k & 1 == 1).map(|k| ranks[k]).sum();
            w >= observed - 1e-9
        })
        .count();
    hits as f64 / (1u64 << n) as f64
}

#[test]
fn wilcoxon_exact_matches_enumeration_for_every_sign_pattern() {
    let magnitude_sets: Vec<Vec<f64>> = (1u32..=10)
        .flat_map(|n: u32| {
            let distinct: Vec<f64> = (1..=n).map(f64::from).collect();
            let tied: Vec<f64> = (1..=n).map(|i| f64::from(i.div_ceil(2))).collect();
            let with_zero: Vec<f64> = (0..n).map(|i| f64::from(i % 3)).collect();
            [distinct, tied, with_zero]
        })
        .collect();
    let mut checked = 0;
    for mags in &magnitude_sets {
        let n = mags.len();
        for mask in 0u32..1 << n {
            let d: Vec<f64> = (0..n).map(|k| if mask >> k & 1 == 1 { mags[k] } else { -mags[k] }).collect();
            if d.len() < 2 {
                continue;
            }
            let got = wilcoxon_one_sided(&pr(&d));
            let want = enumerated_upper_tail(&d);
            assert!((got - want).abs() < 1e-12, "{d:?}: {got} vs {want}");
            checked += 1;
        }
    }
    assert!(checked > 6000);
}

#[test]
fn t_test_matches_reference_values() {
    let p = t_test_one_sided(&pr(&[0.3, -0.1, 0.8, 0.5, 0.2]));
    assert!((p - 0.04326138997300603).abs() < 1e-12, "{p}");
    let d = [1.5, -0.4, 0.25, 0.9, -0.3, 0.7, 1.1, 0.05, -0.2, 0.6, 0.45, 0.3];
    let p = t_test_one_sided(&pr(&d));
    assert!((p - 0.015970931567340266).abs() < 1e-12, "{p}");
    // df = 1: sf(t) = 1/2 - atan(t)/pi
    let d = [1.0, 3.0];
    let t = 2.0 * 2f64.sqrt() / 2f64.sqrt();
    let closed = 0.5 - t.atan() / std::f64::consts::PI;
    assert!((t_test_one_sided(&pr(&d)) - closed).abs() < 1e-12);
}

#[test]
fn wilcoxon_normal_branch_matches_reference() {
    let d: Vec<f64> = (0..30).map(|i| if i % 3 == 0 { -(i as f64 + 1.0) } else { i as f64 + 1.0 }).collect();
    let p = wilcoxon_one_sided(&pr(&d));
    assert!((p - 0.03677154667265901).abs() < 1e-9, "{p}");
}

fn step_up_rejections(p: &[f64], alpha: f64) -> Vec<bool> {
    let m = p.len();
    let c = (1..=m).map(|i| 1.0 / i as f64).sum::<f64>();
    let mut sorted = p.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = (1..=m).rev().find(|&k| sorted[k - 1] <= k as f64 / (m as f64 * c) * alpha);
    match k {
        Some(k) => p.iter().map(|&x| x <= sorted[k - 1]).collect(),
        None => vec![false; m],
    }
}

#[test]
fn by_adjustment_agrees_with_step_up_rule() {
    let mut rng = pcit_core::seed::rng(2024);
    let mut any_reject = 0;
    for _ in 0..1000 {
        let m = rng.random_range(1..=50);
        let p: Vec<f64> = (0..m)
            .map(|_| {
                let u: f64 = rng.random();
                if rng.random_bool(0.4) {
                    u.powi(4) * 0.02
                } else {
                    u
                }
            })
            .collect();
        let alpha = rng.random_range(0.001..0.5);
        let r = by_adjust(&p, alpha).unwrap();
        let want = step_up_rejections(&p, alpha);
        assert_eq!(r.rejected, want, "p={p:?} alpha={alpha}");
        any_reject += want.iter().any(|x| *x) as usize;
    }
    assert!(any_reject > 100);
}

#[test]
fn by_controls_familywise_error_under_global_null() {
    let mut rng = pcit_core::seed::rng(77);
    let (alpha, reps, m) = (0.05, 10_000, 20);
    let hits = (0..reps)
        .filter(|_| {
            let p: Vec<f64> = (0..m).map(|_| rng.random()).collect();
            by_adjust(&p, alpha).unwrap().rejected.iter().any(|x| *x)
        })
        .count();
    let rate = hits as f64 / reps as f64;
    let tol = 3.0 * (alpha * (1.0 - alpha) / reps as f64).sqrt();
    assert!(rate <= alpha + tol, "{rate}");
}

#[test]
fn harmonic_numbers() {
    assert_eq!(harmonic(1), 1.0);
    assert!((harmonic(4) - 25.0 / 12.0).abs() < 1e-15);
}

proptest! {
    #[test]
    fn shifting_diffs_up_never_raises_t_pvalue(
        d in prop::collection::vec(-10f64..10.0, 2..60),
        c in 0.001f64..5.0,
    ) {
        let shifted: Vec<f64> = d.iter().map(|x| x + c).collect();
        prop_assert!(t_test_one_sided(&pr(&shifted)) <= t_test_one_sided(&pr(&d)));
    }

    #[test]
    fn negating_diffs_complements_t_pvalue(d in prop::collection::vec(-10f64..10.0, 2..60)) {
        let r = pr(&d);
        prop_assume!(r.stddev() > 1e-9);
        let neg: Vec<f64> = d.iter().map(|x| -x).collect();
        let sum = t_test_one_sided(&r) + t_test_one_sided(&pr(&neg));
        prop_assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn adjusted_pvalues_dominate_raw_and_keep_order(p in prop::collection::vec(0f64..=1.0, 1..40)) {
        let r = by_adjust(&p, 0.05).unwrap();
        for i in 0..p.len() {
            prop_assert!(r.adjusted[i] >= p[i] && r.adjusted[i] <= 1.0);
            for j in 0..p.len() {
                if p[i] < p[j] {
                    prop_assert!(r.adjusted[i] <= r.adjusted[j]);
                }
            }
        }
    }
}
