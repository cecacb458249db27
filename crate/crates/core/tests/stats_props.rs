use proptest::prelude::*;
use spikefuse::stats::{build_table, chi2_sf_1dof, compare_evaluations, mcnemar, text_table, ContingencyTable};
use spikefuse::Evaluation;

fn table(b: u64, c: u64) -> ContingencyTable {
    ContingencyTable { n11: 7, b, c, n00: 3 }
}

/// Upper tail by Simpson's rule after substituting x = u^2, which turns
/// the chi-squared(1) density into the smooth integrand sqrt(2/pi) e^(-u^2/2).
fn tail_by_quadrature(x: f64) -> f64 {
    let (lo, hi, n) = (x.sqrt(), 40.0_f64, 20_000);
    let h = (hi - lo) / n as f64;
    let f = |u: f64| (2.0 / std::f64::consts::PI).sqrt() * (-u * u / 2.0).exp();
    let mut sum = f(lo) + f(hi);
    for k in 1..n {
        sum += f(lo + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

proptest! {
    #[test]
    fn statistic_is_symmetric(b in 0u64..5000, c in 0u64..5000) {
        prop_assert_eq!(mcnemar(&table(b, c)), mcnemar(&table(c, b)));
    }

    #[test]
    fn p_value_is_a_probability(b in 0u64..5000, c in 0u64..5000) {
        let r = mcnemar(&table(b, c));
        prop_assert!(r.chi2 >= 0.0 && r.chi2.is_finite());
        prop_assert!((0.0..=1.0).contains(&r.p));
    }

    #[test]
    fn matches_quadrature(x in 0.0..30.0f64) {
        prop_assert!((chi2_sf_1dof(x) - tail_by_quadrature(x)).abs() < 1e-6);
    }

    #[test]
    fn table_counts_partition_instances(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 0..300)) {
        let (x, y): (Vec<bool>, Vec<bool>) = pairs.iter().copied().unzip();
        let t = build_table(&x, &y).unwrap();
        prop_assert_eq!(t.total() as usize, pairs.len());
        prop_assert_eq!(t.b as usize, pairs.iter().filter(|p| p.0 && !p.1).count());
        prop_assert_eq!(t.c as usize, pairs.iter().filter(|p| !p.0 && p.1).count());
    }
}

#[test]
fn p_value_decreases_with_imbalance() {
    for n in 2..200u64 {
        let mut last = f64::INFINITY;
        for b in (n / 2 + n % 2)..=n {
            let r = mcnemar(&table(b, n - b));
            assert!(r.p <= last, "n={n} b={b}");
            last = r.p;
        }
    }
}

#[test]
fn tail_is_decreasing_on_a_grid() {
    let grid: Vec<f64> = (0..=3000).map(|k| k as f64 * 0.01).collect();
    for w in grid.windows(2) {
        assert!(chi2_sf_1dof(w[1]) < chi2_sf_1dof(w[0]) || w[0] == 0.0 && chi2_sf_1dof(w[1]) < 1.0);
    }
    assert_eq!(chi2_sf_1dof(0.0), 1.0);
}

#[test]
fn quadrature_oracle_sanity() {
    assert!((tail_by_quadrature(0.0) - 1.0).abs() < 1e-9);
    assert!((tail_by_quadrature(3.841_458_820_694_124) - 0.05).abs() < 1e-9);
}

#[test]
fn worked_example_decision() {
    let eval = |correct: Vec<bool>| Evaluation {
        accuracy: correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64,
        predictions: vec![0; correct.len()],
        correct,
    };
    // 5 instances only the first model gets right, 15 only the second.
    let mut x = vec![true; 5];
    x.extend(vec![false; 15]);
    let y: Vec<bool> = x.iter().map(|v| !v).collect();
    let r = compare_evaluations("A", &eval(x), "B", &eval(y), 0.05).unwrap();
    assert_eq!((r.table.b, r.table.c), (5, 15));
    assert_eq!(r.chi2, 4.05);
    assert!(r.reject);
    assert!((r.p_value - 0.044_171_344_908_442_71).abs() < 1e-12);
    let text = text_table(&[r]);
    assert!(text.contains("p=0.044") && text.contains("reject"), "{text}");
}
