//! Per-type decision thresholds tuned for dev-set strict F1.
//!
//! Coordinate ascent over each type's candidate cutoffs: the midpoints
//! between consecutive distinct probabilities of that type, plus 0.5.
//! Types are swept by descending gold support, then id. A candidate
//! replaces the current threshold only if it strictly increases the number
//! of exact matches; among equally good candidates the one closest to 0.5
//! wins, then the larger.
//!
//! Single-coordinate moves can stall where two thresholds have to move
//! together. When a sweep stalls, an escape step searches pairs of types
//! jointly over the same candidate grids and resumes the sweeps if it
//! finds a strict improvement. It is skipped when its cost estimate
//! exceeds [`TuneConfig::pair_budget`].

use log::debug;
use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::classifier::{argmax, ThresholdVector};
use crate::corpus::TypeSet;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    pub max_passes: usize,
    pub pair_escape: bool,
    /// Upper bound on the work of one escape step, in instance visits.
    pub pair_budget: u64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            max_passes: 10,
            pair_escape: true,
            pair_budget: 50_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub thresholds: ThresholdVector,
    /// Strict F1 with every threshold at 0.5.
    pub dev_strict_before: f64,
    pub dev_strict_after: f64,
    pub passes: usize,
}

struct Problem {
    n: usize,
    t: usize,
    /// Row-major `n × t`.
    probs: Vec<f64>,
    gold: Vec<bool>,
    /// Gold set contains a type outside the ontology; never an exact match.
    unscoreable: Vec<bool>,
    /// Gold set is exactly `{argmax}`.
    gold_is_argmax: Vec<bool>,
    fallback: bool,
}

impl Problem {
    fn p(&self, i: usize, t: usize) -> f64 {
        self.probs[i * self.t + t]
    }

    fn g(&self, i: usize, t: usize) -> bool {
        self.gold[i * self.t + t]
    }

    /// Whether instance `i` is exactly right given its number of wrong
    /// in-ontology bits and its predicted-set size before fallback.
    fn matches(&self, i: usize, wrong: usize, count: usize) -> bool {
        if self.unscoreable[i] {
            return false;
        }
        if count == 0 && self.fallback {
            self.gold_is_argmax[i]
        } else {
            wrong == 0
        }
    }
}

struct State {
    thresholds: Vec<f64>,
    pred: Vec<bool>,
    wrong: Vec<usize>,
    count: Vec<usize>,
    score: usize,
}

impl State {
    fn new(problem: &Problem, thresholds: Vec<f64>) -> Self {
        let (n, t) = (problem.n, problem.t);
        let mut pred = vec![false; n * t];
        let mut wrong = vec![0; n];
        let mut count = vec![0; n];
        for i in 0..n {
            for k in 0..t {
                let b = problem.p(i, k) >= thresholds[k];
                pred[i * t + k] = b;
                wrong[i] += usize::from(b != problem.g(i, k));
                count[i] += usize::from(b);
            }
        }
        let score = (0..n).filter(|&i| problem.matches(i, wrong[i], count[i])).count();
        State {
            thresholds,
            pred,
            wrong,
            count,
            score,
        }
    }

    fn set(&mut self, problem: &Problem, k: usize, threshold: f64) {
        let t = problem.t;
        for i in 0..problem.n {
            let old = self.pred[i * t + k];
            let new = problem.p(i, k) >= threshold;
            if old != new {
                let g = problem.g(i, k);
                self.pred[i * t + k] = new;
                self.wrong[i] = self.wrong[i] - usize::from(old != g) + usize::from(new != g);
                self.count[i] = self.count[i] - usize::from(old) + usize::from(new);
            }
        }
        self.thresholds[k] = threshold;
        self.score = (0..problem.n)
            .filter(|&i| problem.matches(i, self.wrong[i], self.count[i]))
            .count();
    }

    /// Wrong bits and predicted count of instance `i` with the listed types
    /// removed from consideration.
    fn without(&self, problem: &Problem, i: usize, types: &[usize]) -> (usize, usize) {
        let (mut wrong, mut count) = (self.wrong[i], self.count[i]);
        for &k in types {
            let b = self.pred[i * problem.t + k];
            wrong -= usize::from(b != problem.g(i, k));
            count -= usize::from(b);
        }
        (wrong, count)
    }
}

/// Candidate cutoffs for one type, ascending.
fn candidates(problem: &Problem, k: usize) -> Vec<f64> {
    let mut values: Vec<f64> = (0..problem.n).map(|i| problem.p(i, k)).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut out: Vec<f64> = values.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    out.push(0.5);
    out.retain(|&c| c > 0.0 && c < 1.0);
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Scores every candidate of one coordinate, given per-instance match
/// outcomes with that type off (`m0`) and on (`m1`).
fn sweep_scores(column: &[f64], m0: &[bool], m1: &[bool], cands: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..column.len()).collect();
    order.sort_by(|&a, &b| column[a].total_cmp(&column[b]));
    // prefix0[j]: matches among the j smallest when all are off;
    // prefix1[j]: matches among the j smallest when all are on.
    let mut prefix0 = vec![0usize; order.len() + 1];
    let mut prefix1 = vec![0usize; order.len() + 1];
    for (j, &i) in order.iter().enumerate() {
        prefix0[j + 1] = prefix0[j] + usize::from(m0[i]);
        prefix1[j + 1] = prefix1[j] + usize::from(m1[i]);
    }
    let total1 = prefix1[order.len()];
    let mut below = 0;
    cands
        .iter()
        .map(|&c| {
            while below < order.len() && column[order[below]] < c {
                below += 1;
            }
            prefix0[below] + total1 - prefix1[below]
        })
        .collect()
}

fn closeness(c: f64) -> f64 {
    -(c - 0.5).abs()
}

/// Best candidate by (score, closeness to 0.5, value).
fn pick(cands: &[f64], scores: &[usize]) -> (f64, usize) {
    let mut best = (cands[0], scores[0]);
    for (&c, &s) in cands.iter().zip(scores).skip(1) {
        let better = s > best.1
            || (s == best.1 && (closeness(c) > closeness(best.0) || (closeness(c) == closeness(best.0) && c > best.0)));
        if better {
            best = (c, s);
        }
    }
    best
}

fn coordinate_step(problem: &Problem, state: &mut State, k: usize, cands: &[f64]) -> bool {
    let column: Vec<f64> = (0..problem.n).map(|i| problem.p(i, k)).collect();
    let mut m0 = vec![false; problem.n];
    let mut m1 = vec![false; problem.n];
    for i in 0..problem.n {
        let (wrong, count) = state.without(problem, i, &[k]);
        let g = problem.g(i, k);
        m0[i] = problem.matches(i, wrong + usize::from(g), count);
        m1[i] = problem.matches(i, wrong + usize::from(!g), count + 1);
    }
    let scores = sweep_scores(&column, &m0, &m1, cands);
    let (c, s) = pick(cands, &scores);
    if s > state.score {
        state.set(problem, k, c);
        debug_assert_eq!(state.score, s);
        true
    } else {
        false
    }
}

fn pair_step(problem: &Problem, state: &mut State, order: &[usize], cands: &[Vec<f64>]) -> bool {
    let col = |k: usize| -> Vec<f64> { (0..problem.n).map(|i| problem.p(i, k)).collect() };
    // (score, closeness sum, a, ca, b, cb)
    let mut best: Option<(usize, f64, usize, f64, usize, f64)> = None;
    for (x, &a) in order.iter().enumerate() {
        let col_a = col(a);
        for &b in &order[x + 1..] {
            let col_b = col(b);
            let base: Vec<(usize, usize)> = (0..problem.n).map(|i| state.without(problem, i, &[a, b])).collect();
            let mut m0 = vec![false; problem.n];
            let mut m1 = vec![false; problem.n];
            for &ca in &cands[a] {
                for i in 0..problem.n {
                    let on_a = col_a[i] >= ca;
                    let (mut wrong, mut count) = base[i];
                    wrong += usize::from(on_a != problem.g(i, a));
                    count += usize::from(on_a);
                    let gb = problem.g(i, b);
                    m0[i] = problem.matches(i, wrong + usize::from(gb), count);
                    m1[i] = problem.matches(i, wrong + usize::from(!gb), count + 1);
                }
                let scores = sweep_scores(&col_b, &m0, &m1, &cands[b]);
                for (&cb, &s) in cands[b].iter().zip(&scores) {
                    let close = closeness(ca) + closeness(cb);
                    let better = match best {
                        None => true,
                        Some((bs, bc, ..)) => s > bs || (s == bs && close > bc),
                    };
                    if better {
                        best = Some((s, close, a, ca, b, cb));
                    }
                }
            }
        }
    }
    match best {
        Some((s, _, a, ca, b, cb)) if s > state.score => {
            state.set(problem, a, ca);
            state.set(problem, b, cb);
            debug_assert_eq!(state.score, s);
            true
        }
        _ => false,
    }
}

fn pair_cost(problem: &Problem, cands: &[Vec<f64>]) -> u64 {
    let n = problem.n as u64;
    let mut cost = 0u64;
    for a in 0..problem.t {
        for b in a + 1..problem.t {
            let (ca, cb) = (cands[a].len() as u64, cands[b].len() as u64);
            cost = cost.saturating_add(ca.saturating_mul(n * 2 + cb));
        }
    }
    cost
}

fn build_problem(probs: &[Array1<f64>], golds: &[TypeSet], fallback: bool) -> Result<Problem> {
    if probs.is_empty() {
        return Err(Error::Empty("threshold tuning needs a nonempty dev set".into()));
    }
    if probs.len() != golds.len() {
        return Err(Error::Shape(format!(
            "{} probability rows for {} gold sets",
            probs.len(),
            golds.len()
        )));
    }
    let t = probs[0].len();
    let n = probs.len();
    let mut flat = Vec::with_capacity(n * t);
    let mut gold = vec![false; n * t];
    let mut unscoreable = vec![false; n];
    let mut gold_is_argmax = vec![false; n];
    for (i, (p, g)) in probs.iter().zip(golds).enumerate() {
        if p.len() != t {
            return Err(Error::Shape(format!("row {i} has {} probabilities, expected {t}", p.len())));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("dev probabilities, row {i}")));
        }
        flat.extend(p.iter().copied());
        for &k in g {
            if k < t {
                gold[i * t + k] = true;
            } else {
                unscoreable[i] = true;
            }
        }
        if let Some(a) = argmax(p.view()) {
            gold_is_argmax[i] = g.len() == 1 && g.contains(&a);
        }
    }
    Ok(Problem {
        n,
        t,
        probs: flat,
        gold,
        unscoreable,
        gold_is_argmax,
        fallback,
    })
}

/// Tunes thresholds starting from 0.5 everywhere.
pub fn tune_thresholds(probs: &[Array1<f64>], golds: &[TypeSet], fallback: bool, config: &TuneConfig) -> Result<TuningReport> {
    let t = probs.first().map_or(0, |p| p.len());
    tune_thresholds_from(probs, golds, fallback, &ThresholdVector::fixed(t, 0.5)?, config)
}

/// Tunes thresholds starting from `initial`, or from 0.5 everywhere if
/// that scores higher.
pub fn tune_thresholds_from(
    probs: &[Array1<f64>],
    golds: &[TypeSet],
    fallback: bool,
    initial: &ThresholdVector,
    config: &TuneConfig,
) -> Result<TuningReport> {
    let problem = build_problem(probs, golds, fallback)?;
    if initial.len() != problem.t {
        return Err(Error::Shape(format!(
            "{} initial thresholds for {} types",
            initial.len(),
            problem.t
        )));
    }
    let baseline = State::new(&problem, vec![0.5; problem.t]);
    let before = baseline.score;
    let start = State::new(&problem, initial.values().to_vec());
    let mut state = if start.score >= baseline.score { start } else { baseline };

    let mut order: Vec<usize> = (0..problem.t).collect();
    let support: Vec<usize> = (0..problem.t)
        .map(|k| (0..problem.n).filter(|&i| problem.g(i, k)).count())
        .collect();
    order.sort_by(|&a, &b| support[b].cmp(&support[a]).then(a.cmp(&b)));
    let cands: Vec<Vec<f64>> = (0..problem.t).map(|k| candidates(&problem, k)).collect();
    let pair_ok = config.pair_escape && problem.t >= 2 && pair_cost(&problem, &cands) <= config.pair_budget;
    if config.pair_escape && !pair_ok && problem.t >= 2 {
        debug!("pairwise escape skipped: cost exceeds budget");
    }

    let mut passes = 0;
    while passes < config.max_passes {
        passes += 1;
        let mut improved = false;
        for &k in &order {
            improved |= coordinate_step(&problem, &mut state, k, &cands[k]);
        }
        if !improved && !(pair_ok && pair_step(&problem, &mut state, &order, &cands)) {
            break;
        }
    }

    let n = problem.n as f64;
    Ok(TuningReport {
        thresholds: ThresholdVector::new(state.thresholds)?,
        dev_strict_before: before as f64 / n,
        dev_strict_after: state.score as f64 / n,
        passes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::predict_types;
    use crate::metrics::strict;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rows(v: &[&[f64]]) -> Vec<Array1<f64>> {
        v.iter().map(|r| Array1::from(r.to_vec())).collect()
    }

    fn sets(v: &[&[usize]]) -> Vec<TypeSet> {
        v.iter().map(|s| s.iter().copied().collect()).collect()
    }

    fn strict_at(probs: &[Array1<f64>], golds: &[TypeSet], r: &[f64], fallback: bool) -> f64 {
        let r = ThresholdVector::new(r.to_vec()).unwrap();
        let preds: Vec<TypeSet> = probs
            .iter()
            .map(|p| predict_types(p.view(), &r, fallback).predicted)
            .collect();
        strict(&preds, golds).unwrap().f1
    }

    /// Best strict F1 over the product of every type's candidate grid.
    fn exhaustive(probs: &[Array1<f64>], golds: &[TypeSet], fallback: bool) -> f64 {
        let problem = build_problem(probs, golds, fallback).unwrap();
        let grids: Vec<Vec<f64>> = (0..problem.t).map(|k| candidates(&problem, k)).collect();
        let mut best = 0.0f64;
        let mut idx = vec![0usize; grids.len()];
        loop {
            let r: Vec<f64> = idx.iter().zip(&grids).map(|(&j, g)| g[j]).collect();
            best = best.max(strict_at(probs, golds, &r, fallback));
            let mut k = 0;
            while k < idx.len() {
                idx[k] += 1;
                if idx[k] < grids[k].len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == idx.len() {
                return best;
            }
        }
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Array1<f64>>, Vec<TypeSet>) {
        let t = rng.random_range(1..=2);
        let n = rng.random_range(1..=6);
        let probs = (0..n)
            .map(|_| Array1::from_shape_fn(t, |_| (rng.random_range(1..20) as f64) / 20.0))
            .collect();
        let golds = (0..n)
            .map(|_| (0..t).filter(|_| rng.random_bool(0.5)).collect())
            .collect();
        (probs, golds)
    }

    #[test]
    fn one_type_example() {
        let probs = rows(&[&[0.9], &[0.4], &[0.2]]);
        let golds = sets(&[&[0], &[0], &[]]);
        let report = tune_thresholds(&probs, &golds, false, &TuneConfig::default()).unwrap();
        assert!((report.dev_strict_before - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(report.dev_strict_after, 1.0);
        let r = report.thresholds.values()[0];
        assert!(r > 0.2 && r <= 0.4, "{r}");
    }

    #[test]
    fn perfect_input_keeps_one_half() {
        let probs = rows(&[&[0.9, 0.1], &[0.2, 0.7], &[0.6, 0.8]]);
        let golds = sets(&[&[0], &[1], &[0, 1]]);
        let report = tune_thresholds(&probs, &golds, true, &TuneConfig::default()).unwrap();
        assert_eq!(report.thresholds.values(), &[0.5, 0.5]);
        assert_eq!(report.dev_strict_before, 1.0);
        assert_eq!(report.dev_strict_after, 1.0);

        let one = tune_thresholds(&rows(&[&[0.8, 0.3]]), &sets(&[&[0]]), false, &TuneConfig::default()).unwrap();
        assert_eq!((one.dev_strict_before, one.dev_strict_after), (1.0, 1.0));
    }

    #[test]
    fn empty_dev_set_is_an_error() {
        assert!(tune_thresholds(&[], &[], true, &TuneConfig::default()).is_err());
    }

    #[test]
    fn plain_coordinate_ascent_can_stall() {
        // Each type alone cannot be moved without breaking an instance
        // that the other type's move would need.
        let probs = rows(&[&[0.3, 0.3], &[0.6, 0.2], &[0.2, 0.6]]);
        let golds = sets(&[&[0, 1], &[0], &[1]]);
        let plain = TuneConfig {
            pair_escape: false,
            ..TuneConfig::default()
        };
        let stalled = tune_thresholds(&probs, &golds, true, &plain).unwrap();
        let full = tune_thresholds(&probs, &golds, true, &TuneConfig::default()).unwrap();
        let optimum = exhaustive(&probs, &golds, true);
        assert!(stalled.dev_strict_after < optimum);
        assert_eq!(full.dev_strict_after, optimum);
    }

    #[test]
    fn matches_exhaustive_search_on_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..300 {
            let (probs, golds) = random_instance(&mut rng);
            let fallback = trial % 2 == 0;
            let report = tune_thresholds(&probs, &golds, fallback, &TuneConfig::default()).unwrap();
            let optimum = exhaustive(&probs, &golds, fallback);
            assert_eq!(report.dev_strict_after, optimum, "trial {trial}");
            let check = strict_at(&probs, &golds, report.thresholds.values(), fallback);
            assert_eq!(check, report.dev_strict_after, "trial {trial}");
        }
    }

    #[test]
    fn unscoreable_gold_never_matches() {
        let probs = rows(&[&[0.9], &[0.1]]);
        let golds = sets(&[&[0, 1], &[]]);
        let report = tune_thresholds(&probs, &golds, false, &TuneConfig::default()).unwrap();
        assert_eq!(report.dev_strict_after, 0.5);
    }

    fn arb_problem() -> impl Strategy<Value = (Vec<Array1<f64>>, Vec<TypeSet>, bool)> {
        (1usize..5, 1usize..15).prop_flat_map(|(t, n)| {
            (
                prop::collection::vec(prop::collection::vec(0.01f64..0.99, t).prop_map(Array1::from), n),
                prop::collection::vec(prop::collection::btree_set(0..t, 0..=t), n),
                any::<bool>(),
            )
        })
    }

    proptest! {
        #[test]
        fn never_worse_than_one_half((probs, golds, fallback) in arb_problem()) {
            let report = tune_thresholds(&probs, &golds, fallback, &TuneConfig::default()).unwrap();
            prop_assert!(report.dev_strict_after >= report.dev_strict_before);
            let t = probs[0].len();
            prop_assert_eq!(report.dev_strict_before, strict_at(&probs, &golds, &vec![0.5; t], fallback));
            prop_assert_eq!(report.dev_strict_after, strict_at(&probs, &golds, report.thresholds.values(), fallback));
        }

        #[test]
        fn idempotent((probs, golds, fallback) in arb_problem()) {
            let cfg = TuneConfig::default();
            let first = tune_thresholds(&probs, &golds, fallback, &cfg).unwrap();
            let second = tune_thresholds_from(&probs, &golds, fallback, &first.thresholds, &cfg).unwrap();
            prop_assert_eq!(&second.thresholds, &first.thresholds);
            prop_assert_eq!(second.dev_strict_after, first.dev_strict_after);
            prop_assert_eq!(second.passes, 1);
        }
    }
}
