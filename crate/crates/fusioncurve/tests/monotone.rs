use fusioncurve::estimator::pava;
use proptest::prelude::*;

fn values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, 1..40)
}

proptest! {
    #[test]
    fn output_is_nondecreasing(v in values()) {
        let p = pava(&v);
        prop_assert_eq!(p.len(), v.len());
        prop_assert!(p.windows(2).all(|w| w[0] <= w[1] + 1e-12));
    }

    #[test]
    fn projection_is_idempotent(v in values()) {
        let p = pava(&v);
        let q = pava(&p);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn total_is_preserved(v in values()) {
        let s: f64 = v.iter().sum();
        let t: f64 = pava(&v).iter().sum();
        prop_assert!((s - t).abs() < 1e-9);
    }

    #[test]
    fn order_is_preserved(v in values(), bump in prop::collection::vec(0.0f64..1.0, 40)) {
        let w: Vec<f64> = v.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let (pv, pw) = (pava(&v), pava(&w));
        for (a, b) in pv.iter().zip(&pw) {
            prop_assert!(a <= &(b + 1e-12));
        }
    }

    #[test]
    fn sorted_input_is_unchanged(mut v in values()) {
        v.sort_by(f64::total_cmp);
        prop_assert_eq!(pava(&v), v);
    }
}
