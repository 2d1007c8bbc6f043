use std::collections::BTreeMap;

use festa_core::client::parse::parse_answer;
use festa_core::client::ParsedAnswer;
use festa_core::distribution::{complement_key, AnswerDistribution};
use festa_core::estimator::{estimate_distribution, Pooling};
use festa_core::eval::{auroc, risk_coverage};
use festa_core::instance::Label;
use festa_core::scoring::{shannon_entropy, u_fcs, u_fes, ProbFloor};
use proptest::prelude::*;

fn labels() -> Vec<Label> {
    ["A", "B", "C", "D"].iter().map(|l| Label::from(*l)).collect()
}

fn answers(max: usize) -> impl Strategy<Value = Vec<ParsedAnswer>> {
    prop::collection::vec(0usize..4, 1..max).prop_map(|v| v.into_iter().map(|i| ParsedAnswer::Label(labels()[i].clone())).collect())
}

proptest! {
    #[test]
    fn auroc_of_negated_labels_sums_to_one(
        data in prop::collection::vec(((-20i32..20), any::<bool>()), 2..80)
    ) {
        let conf: Vec<f64> = data.iter().map(|(c, _)| *c as f64 / 3.0).collect();
        let y: Vec<bool> = data.iter().map(|(_, y)| *y).collect();
        let neg: Vec<bool> = y.iter().map(|v| !v).collect();
        match (auroc(&conf, &y).unwrap(), auroc(&conf, &neg).unwrap()) {
            (Some(a), Some(b)) => prop_assert_eq!(a + b, 1.0),
            (None, None) => {}
            other => prop_assert!(false, "{:?}", other),
        }
    }

    #[test]
    fn auroc_ignores_row_order(
        data in prop::collection::vec(((-20i32..20), any::<bool>()), 2..60),
        rot in 0usize..60,
    ) {
        let conf: Vec<f64> = data.iter().map(|(c, _)| *c as f64).collect();
        let y: Vec<bool> = data.iter().map(|(_, y)| *y).collect();
        let r = rot % data.len();
        let mut c2 = conf.clone();
        let mut y2 = y.clone();
        c2.rotate_left(r);
        y2.rotate_left(r);
        c2.reverse();
        y2.reverse();
        prop_assert_eq!(auroc(&conf, &y).unwrap(), auroc(&c2, &y2).unwrap());
    }

    #[test]
    fn entropy_is_permutation_invariant(resp in answers(40), rot in 0usize..40) {
        let ls = labels();
        let a = estimate_distribution(&resp, &ls, &Pooling::Full).unwrap();
        let mut shuffled = resp.clone();
        let r = rot % shuffled.len();
        shuffled.rotate_left(r);
        shuffled.reverse();
        let b = estimate_distribution(&shuffled, &ls, &Pooling::Full).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!((shannon_entropy(&a) - shannon_entropy(&b)).abs() <= 1e-15);
        prop_assert!(shannon_entropy(&a) <= (4f64).ln() + 1e-12);
    }

    #[test]
    fn scores_are_nonnegative_and_bounded_by_floor(fes in answers(30), fcs in answers(30), p in 0usize..4) {
        let ls = labels();
        let pred = ls[p].clone();
        let floor = ProbFloor::DEFAULT;
        let qf = estimate_distribution(&fes, &ls, &Pooling::Full).unwrap();
        let qc = estimate_distribution(&fcs, &ls, &Pooling::Binary(pred.clone())).unwrap();
        let bound = -floor.value().ln() + 1e-12;
        for u in [u_fes(&qf, &pred, floor).unwrap(), u_fcs(&qc, &pred, floor).unwrap()] {
            prop_assert!((0.0..=bound).contains(&u), "{}", u);
        }
    }

    #[test]
    fn binary_pooling_preserves_complement_mass(probs in prop::collection::vec(1u32..50, 4), p in 0usize..4) {
        let ls = labels();
        let total: u32 = probs.iter().sum();
        let map: BTreeMap<String, f64> = ls.iter().zip(&probs).map(|(l, c)| (l.to_string(), *c as f64 / total as f64)).collect();
        let dist = AnswerDistribution::from_probs(map, total as usize).unwrap();
        let pooled = dist.pool_binary(&ls[p]).unwrap();
        let rest: f64 = ls.iter().enumerate().filter(|(i, _)| *i != p).map(|(_, l)| dist.prob(l.as_str()).unwrap()).sum();
        let key = complement_key(&ls[p]);
        prop_assert!((pooled.prob(&key).unwrap() - rest).abs() <= 1e-12);
    }

    #[test]
    fn parsed_labels_come_from_the_option_set(text in "\\PC{0,40}") {
        let ls = labels();
        if let ParsedAnswer::Label(l) = parse_answer(&text, &ls) {
            prop_assert!(ls.contains(&l));
        }
    }

    #[test]
    fn full_coverage_equals_accuracy(
        data in prop::collection::vec(((0i32..10), any::<bool>()), 1..60)
    ) {
        let u: Vec<f64> = data.iter().map(|(c, _)| *c as f64 / 2.0).collect();
        let y: Vec<bool> = data.iter().map(|(_, y)| *y).collect();
        let curve = risk_coverage(&u, &y);
        let last = curve.last().unwrap();
        prop_assert_eq!(last.coverage, 1.0);
        prop_assert_eq!(last.selective_accuracy, y.iter().filter(|v| **v).count() as f64 / y.len() as f64);
        prop_assert!(curve.windows(2).all(|w| w[0].coverage < w[1].coverage));
    }
}
