//! Strict, loose-macro and loose-micro precision / recall / F1 over
//! predicted and gold type sets.
//!
//! Empty-set conventions:
//! * loose macro: a per-instance ratio with an empty denominator counts 1
//!   when the other set is empty too, 0 otherwise;
//! * loose micro: a pooled ratio with a zero denominator is 1 (its
//!   numerator is necessarily 0);
//! * F1 is 0 when precision + recall is 0.

use serde::{Deserialize, Serialize};

use crate::corpus::TypeSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    #[serde(rename = "p")]
    pub precision: f64,
    #[serde(rename = "r")]
    pub recall: f64,
    pub f1: f64,
}

impl ScoreTriple {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ScoreTriple { precision, recall, f1 }
    }
}

fn check(preds: &[TypeSet], golds: &[TypeSet]) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} gold sets",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Empty("no instances to score".into()));
    }
    Ok(())
}

/// Fraction of instances whose predicted set equals the gold set.
pub fn strict(preds: &[TypeSet], golds: &[TypeSet]) -> Result<ScoreTriple> {
    check(preds, golds)?;
    let matches = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    let acc = matches as f64 / preds.len() as f64;
    Ok(ScoreTriple {
        precision: acc,
        recall: acc,
        f1: acc,
    })
}

fn overlap(a: &TypeSet, b: &TypeSet) -> usize {
    a.intersection(b).count()
}

fn instance_ratio(num: usize, den: usize, other_empty: bool) -> f64 {
    if den == 0 {
        if other_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

pub fn loose_macro(preds: &[TypeSet], golds: &[TypeSet]) -> Result<ScoreTriple> {
    check(preds, golds)?;
    let (mut p, mut r) = (0.0, 0.0);
    for (pred, gold) in preds.iter().zip(golds) {
        let both = overlap(pred, gold);
        p += instance_ratio(both, pred.len(), gold.is_empty());
        r += instance_ratio(both, gold.len(), pred.is_empty());
    }
    let n = preds.len() as f64;
    Ok(ScoreTriple::new(p / n, r / n))
}

pub fn loose_micro(preds: &[TypeSet], golds: &[TypeSet]) -> Result<ScoreTriple> {
    check(preds, golds)?;
    let (mut both, mut predicted, mut gold_total) = (0usize, 0usize, 0usize);
    for (pred, gold) in preds.iter().zip(golds) {
        both += overlap(pred, gold);
        predicted += pred.len();
        gold_total += gold.len();
    }
    let pooled = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    Ok(ScoreTriple::new(pooled(both, predicted), pooled(both, gold_total)))
}

/// All three metrics, serialized as the evaluation report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub strict: ScoreTriple,
    pub loose_macro: ScoreTriple,
    pub loose_micro: ScoreTriple,
    pub n: usize,
}

pub fn evaluate(preds: &[TypeSet], golds: &[TypeSet]) -> Result<EvaluationReport> {
    Ok(EvaluationReport {
        strict: strict(preds, golds)?,
        loose_macro: loose_macro(preds, golds)?,
        loose_micro: loose_micro(preds, golds)?,
        n: preds.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sets(v: &[&[usize]]) -> Vec<TypeSet> {
        v.iter().map(|s| s.iter().copied().collect()).collect()
    }

    #[test]
    fn two_instance_fixture() {
        // a=0, b=1, c=2, d=3
        let preds = sets(&[&[0], &[2, 3]]);
        let golds = sets(&[&[0, 1], &[2]]);
        let s = strict(&preds, &golds).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        let m = loose_macro(&preds, &golds).unwrap();
        assert_abs_diff_eq!(m.precision, 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(m.recall, 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(m.f1, 0.75, epsilon = 1e-15);
        let u = loose_micro(&preds, &golds).unwrap();
        assert_abs_diff_eq!(u.precision, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(u.recall, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(u.f1, 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn perfect_predictions() {
        let g = sets(&[&[0, 1], &[2], &[4, 5, 6]]);
        let r = evaluate(&g, &g).unwrap();
        for s in [r.strict, r.loose_macro, r.loose_micro] {
            assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn empty_set_conventions() {
        let s = strict(&sets(&[&[]]), &sets(&[&[]])).unwrap();
        assert_eq!(s.f1, 1.0);

        let m = loose_macro(&sets(&[&[]]), &sets(&[&[0]])).unwrap();
        assert_eq!((m.precision, m.recall), (0.0, 0.0));

        let u = loose_micro(&sets(&[&[], &[]]), &sets(&[&[0], &[1, 2]])).unwrap();
        assert_eq!((u.precision, u.recall, u.f1), (1.0, 0.0, 0.0));
    }

    #[test]
    fn input_errors() {
        assert!(strict(&sets(&[&[0]]), &sets(&[])).is_err());
        assert!(loose_micro(&[], &[]).is_err());
    }

    fn arb_instances() -> impl Strategy<Value = Vec<(TypeSet, TypeSet)>> {
        let set = prop::collection::btree_set(0usize..6, 0..4);
        prop::collection::vec((set.clone(), set), 1..20)
    }

    proptest! {
        #[test]
        fn macro_dominates_strict(inst in arb_instances()) {
            let (p, g): (Vec<_>, Vec<_>) = inst.into_iter().unzip();
            let s = strict(&p, &g).unwrap();
            let m = loose_macro(&p, &g).unwrap();
            prop_assert!(m.precision >= s.precision - 1e-12);
            prop_assert!(m.recall >= s.recall - 1e-12);
        }

        #[test]
        fn permutation_invariant(inst in arb_instances(), rot in 0usize..20) {
            let (p, g): (Vec<_>, Vec<_>) = inst.iter().cloned().unzip();
            let mut shuffled = inst.clone();
            let k = rot % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            let (p2, g2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
            let a = evaluate(&p, &g).unwrap();
            let b = evaluate(&p2, &g2).unwrap();
            prop_assert_eq!(a.strict, b.strict);
            prop_assert_eq!(a.loose_micro, b.loose_micro);
            prop_assert!((a.loose_macro.f1 - b.loose_macro.f1).abs() < 1e-12);
        }

        #[test]
        fn all_ones_iff_exact(
            inst in prop::collection::vec(
                (prop::collection::btree_set(0usize..6, 1..4), prop::collection::btree_set(0usize..6, 0..4), any::<bool>()),
                1..20,
            )
        ) {
            let g: Vec<TypeSet> = inst.iter().map(|(g, _, _)| g.clone()).collect();
            let p: Vec<TypeSet> = inst.iter().map(|(g, p, copy)| if *copy { g.clone() } else { p.clone() }).collect();
            let r = evaluate(&p, &g).unwrap();
            let exact = p == g;
            for s in [r.strict, r.loose_macro, r.loose_micro] {
                prop_assert_eq!(s.f1 == 1.0, exact);
            }
        }
    }
}
